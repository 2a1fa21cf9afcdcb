"""Feature sharpening and boundary enhancement blocks.

Each block is a pair of functions: ``init_*`` registers parameters under a
:class:`ParamScope`, and the forward function reads them back. Parameters
that end a residual branch are zero-initialised so a fresh block is the
identity map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .params import ParamScope, init_conv, init_norm, norm_groups
from .tensor import Tensor


@dataclass(frozen=True)
class BlockConfig:
    dilations: tuple[int, int] = (1, 3)
    groups: int = 4
    sm_kernel: int = 3
    mlp_ratio: int = 4
    use_mcfs: bool = True
    use_sm: bool = True
    residual: bool = True

    def __post_init__(self):
        d1, d2 = self.dilations
        if d1 == d2:
            raise ConfigError(f"the two dilated branches need distinct dilations, got {self.dilations}")
        if min(d1, d2) < 1:
            raise ConfigError(f"dilations must be positive, got {self.dilations}")
        if self.use_sm and not self.use_mcfs:
            raise ConfigError("the sharpening module lives inside MCFS; use_sm requires use_mcfs")
        if self.sm_kernel % 2 == 0:
            raise ConfigError("sm_kernel must be odd to preserve spatial extents")

    def branch_groups(self, width: int) -> int:
        if width % self.groups:
            raise ConfigError(f"group count {self.groups} does not divide width {width}")
        return self.groups


def _conv(x: Tensor, p: ParamScope, **kw) -> Tensor:
    return ops.conv2d(x, p["weight"], p.get("bias"), **kw)


def _norm(x: Tensor, p: ParamScope) -> Tensor:
    return ops.group_norm(x, norm_groups(x.shape[1]), p["weight"], p["bias"])


def _check_width(x: Tensor, expected: int, block: str) -> None:
    if x.data.ndim != 4 or x.shape[1] != expected:
        raise ShapeError(f"{block} expects {expected} channels, got input of shape {x.shape}")


# --- sharpening module --------------------------------------------------------


def init_sm(p: ParamScope, width: int, rng: np.random.Generator, kernel: int = 3) -> None:
    init_conv(p.scope("dw"), width, 1, kernel, rng)


def sharpening_module(x: Tensor, p: ParamScope, return_factors: bool = False):
    """Learned unsharp masking on a feature map.

    z = depthwise(x) encodes local structure; y = x - mean_c(z) is the detail
    left after removing the cross-channel average; s = softmax_c(mean_hw(z))
    weights each channel. Output is z + s * y.
    """
    w = p["dw.weight"]
    width, k = w.shape[0], w.shape[-1]
    _check_width(x, width, "sharpening module")
    z = ops.conv2d(x, w, p["dw.bias"], padding=k // 2, groups=width)
    y = ops.sub(x, ops.channel_mean(z))
    s = ops.softmax(ops.spatial_mean(z), axis=1)
    out = ops.add(z, ops.mul(s, y))
    return (out, s) if return_factors else out


# --- multi-contextual feature sharpening -------------------------------------


def init_mcfs(
    p: ParamScope,
    cin: int,
    cout: int,
    cfg: BlockConfig,
    rng: np.random.Generator,
    width: int | None = None,
    zero_out: bool = False,
) -> None:
    width = width or cin
    g = cfg.branch_groups(width)
    init_conv(p.scope("proj"), width, cin, 1, rng)
    init_conv(p.scope("branch1"), width, width // g, 3, rng)
    init_conv(p.scope("branch2"), width, width // g, 3, rng)
    if cfg.use_sm:
        init_sm(p.scope("sm"), width, rng, cfg.sm_kernel)
    n_parts = 3 if cfg.use_sm else 2
    init_conv(p.scope("fuse"), cout, n_parts * width, 1, rng, zero=zero_out)


def mcfs(x: Tensor, p: ParamScope, cfg: BlockConfig) -> Tensor:
    """1x1 projection, two dilated grouped branches and (optionally) the
    sharpening module in parallel, concatenated and fused by a 1x1 conv."""
    proj = p.scope("proj")
    _check_width(x, proj["weight"].shape[1], "MCFS")
    xt = _conv(x, proj)
    width = xt.shape[1]
    g = cfg.branch_groups(width)
    d1, d2 = cfg.dilations
    parts = [
        _conv(xt, p.scope("branch1"), padding=d1, dilation=d1, groups=g),
        _conv(xt, p.scope("branch2"), padding=d2, dilation=d2, groups=g),
    ]
    if cfg.use_sm:
        parts.append(sharpening_module(xt, p.scope("sm")))
    fused = ops.concat(parts, axis=1)
    if fused.shape[1] != p["fuse.weight"].shape[1]:
        raise ConfigError(
            f"fusion conv expects {p['fuse.weight'].shape[1]} channels, branches give {fused.shape[1]}"
        )
    return _conv(fused, p.scope("fuse"))


# --- convolutional MLP ------------------------------------------------------


def init_conv_mlp(p: ParamScope, channels: int, ratio: int, rng: np.random.Generator, zero_out: bool = False) -> None:
    hidden = channels * ratio
    init_conv(p.scope("expand"), hidden, channels, 1, rng)
    init_conv(p.scope("dw"), hidden, 1, 3, rng)
    init_conv(p.scope("project"), channels, hidden, 1, rng, zero=zero_out)


def conv_mlp(x: Tensor, p: ParamScope) -> Tensor:
    """1x1 expand, depthwise 3x3, GELU, 1x1 project back."""
    _check_width(x, p["expand.weight"].shape[1], "conv MLP")
    h = _conv(x, p.scope("expand"))
    h = _conv(h, p.scope("dw"), padding=1, groups=h.shape[1])
    return _conv(ops.gelu(h), p.scope("project"))


# --- feature sharpening block ------------------------------------------------


def init_fsb(p: ParamScope, channels: int, cfg: BlockConfig, rng: np.random.Generator) -> None:
    zero = cfg.residual
    init_norm(p.scope("norm1"), channels)
    init_conv(p.scope("dw"), channels, 1, 3, rng, zero=zero)
    init_norm(p.scope("norm2"), channels)
    if cfg.use_mcfs:
        init_mcfs(p.scope("mcfs"), channels, channels, cfg, rng, zero_out=zero)
    else:
        # stand-in mixer for the no-MCFS ablation: one grouped 3x3 conv
        init_conv(p.scope("mixer"), channels, channels // cfg.branch_groups(channels), 3, rng, zero=zero)
    init_norm(p.scope("norm3"), channels)
    init_conv_mlp(p.scope("mlp"), channels, cfg.mlp_ratio, rng, zero_out=zero)


def fsb(x: Tensor, p: ParamScope, cfg: BlockConfig) -> Tensor:
    c = p["norm1.weight"].shape[0]
    _check_width(x, c, "FSB")

    def branch(inp, fn):
        out = fn(inp)
        return ops.add(inp, out) if cfg.residual else out

    x = branch(x, lambda t: _conv(_norm(t, p.scope("norm1")), p.scope("dw"), padding=1, groups=c))
    if cfg.use_mcfs:
        x = branch(x, lambda t: mcfs(_norm(t, p.scope("norm2")), p.scope("mcfs"), cfg))
    else:
        g = cfg.branch_groups(c)
        x = branch(x, lambda t: _conv(_norm(t, p.scope("norm2")), p.scope("mixer"), padding=1, groups=g))
    return branch(x, lambda t: conv_mlp(_norm(t, p.scope("norm3")), p.scope("mlp")))


# --- boundary enhancement module -------------------------------------------


def init_bem(p: ParamScope, channels: int, rng: np.random.Generator) -> None:
    init_conv(p.scope("fuse"), channels, 2 * channels, 3, rng)


def bem(f: Tensor, p: ParamScope, pool: int = 2, return_residual: bool = False):
    """High-boost style enhancement: r = f - upsample(maxpool(f)),
    output = conv3x3(concat(f, r))."""
    w = p["fuse.weight"]
    _check_width(f, w.shape[1] // 2, "BEM")
    h, wd = f.shape[2:]
    pooled = ops.max_pool2d(f, pool, pool)
    r = ops.sub(f, ops.bilinear_upsample(pooled, h, wd))
    out = ops.conv2d(ops.concat([f, r], axis=1), w, p["fuse.bias"], padding=1)
    return (out, r) if return_residual else out
