"""Named parameter storage and initialisers."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .errors import ConfigError
from .tensor import Tensor


class ParamStore(dict):
    """Ordered mapping from dotted parameter paths to leaf tensors."""

    def scope(self, prefix: str) -> "ParamScope":
        return ParamScope(self, prefix)

    def add(self, path: str, value) -> Tensor:
        if path in self:
            raise ConfigError(f"duplicate parameter path '{path}'")
        t = Tensor(value, requires_grad=True)
        self[path] = t
        return t

    def count(self) -> int:
        return sum(t.size for t in self.values())

    def zero_grad(self) -> None:
        for t in self.values():
            t.grad = None

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, t in self.items():
            out[k] = Tensor(t.data.copy(), requires_grad=True)
        return out

    def tobytes(self) -> bytes:
        return b"".join(k.encode() + t.data.tobytes() for k, t in self.items())


class ParamScope:
    """A view of a :class:`ParamStore` under a path prefix."""

    def __init__(self, store: ParamStore, prefix: str):
        self.store = store
        self.prefix = prefix

    def _path(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.store[self._path(name)]
        except KeyError:
            raise ConfigError(f"missing parameter '{self._path(name)}'") from None

    def __contains__(self, name: str) -> bool:
        return self._path(name) in self.store

    def get(self, name: str):
        return self.store.get(self._path(name))

    def scope(self, name: str) -> "ParamScope":
        return ParamScope(self.store, self._path(name))

    def add(self, name: str, value) -> Tensor:
        return self.store.add(self._path(name), value)

    def names(self) -> Iterator[str]:
        head = self.prefix + "." if self.prefix else ""
        return (k[len(head):] for k in self.store if k.startswith(head))


def init_conv(
    p: ParamScope,
    cout: int,
    cin_per_group: int,
    k: int,
    rng: np.random.Generator,
    *,
    zero: bool = False,
    bias: bool = True,
) -> None:
    """Fan-in scaled uniform weights; zero bias. ``zero`` zero-fills the weights too."""
    shape = (cout, cin_per_group, k, k)
    if zero:
        w = np.zeros(shape)
    else:
        bound = math.sqrt(3.0 / (cin_per_group * k * k))
        w = rng.uniform(-bound, bound, size=shape)
    p.add("weight", w)
    if bias:
        p.add("bias", np.zeros(cout))


def init_norm(p: ParamScope, channels: int) -> None:
    p.add("weight", np.ones(channels))
    p.add("bias", np.zeros(channels))


def norm_groups(channels: int, cap: int = 8) -> int:
    """Largest divisor of ``channels`` not exceeding ``cap`` that leaves at
    least two channels per group (one-channel groups on a 1x1 map normalise
    to exactly zero and cut the gradient)."""
    limit = max(1, min(cap, channels // 2))
    return max(g for g in range(1, limit + 1) if channels % g == 0)
