"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, NonFiniteError
from .tensor import Tensor, backward, no_grad


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-6,
    *,
    max_elements: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Largest relative disagreement between backprop and central differences.

    ``fn(*inputs)`` must return a scalar tensor. Each element x is perturbed by
    ``eps * max(1, |x|)``; the error for that element is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.

    ``max_elements`` limits how many elements of each input are probed
    (sampled with ``rng``), which keeps checks on whole networks affordable.
    """
    if eps <= 0:
        raise ContractError(f"eps must be positive, got {eps}")
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    out = fn(*inputs)
    backward(out, leaves=inputs)
    analytic = [t.grad.copy() for t in inputs]

    def evaluate() -> float:
        with no_grad():
            value = fn(*inputs).item()
        if not np.isfinite(value):
            raise NonFiniteError("non-finite objective during finite differencing")
        return value

    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t, grad in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        for i in idx:
            orig = flat[i]
            h = eps * max(1.0, abs(orig))
            hi, lo = orig + h, orig - h
            flat[i] = hi
            plus = evaluate()
            flat[i] = lo
            minus = evaluate()
            flat[i] = orig
            # divide by the representable step, not the nominal 2h
            numeric = (plus - minus) / (hi - lo)
            a = grad.reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    for t in inputs:
        t.grad = None
    return worst
