"""Differentiable primitives over :class:`~cosnet.tensor.Tensor`.

Spatial ops expect N, C, H, W inputs. Elementwise binary ops accept equal
shapes plus exactly two broadcast patterns, [N,1,H,W] and [N,C,1,1] against
[N,C,H,W]; anything else raises :class:`ShapeError`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import ndtr

from .errors import GeometryError, LabelError, ShapeError
from .tensor import Tensor, make_result

IntPair = Union[int, Sequence[int]]


def _pair(v: IntPair) -> tuple[int, int]:
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


def _require4d(x: Tensor, op: str) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"{op} expects an N,C,H,W tensor, got shape {x.shape}")


@dataclass(frozen=True)
class ConvSpec:
    """Stride / zero-padding / dilation / groups of a 2-D convolution."""

    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    dilation: tuple[int, int] = (1, 1)
    groups: int = 1

    @classmethod
    def of(cls, stride: IntPair = 1, padding: IntPair = 0, dilation: IntPair = 1, groups: int = 1):
        spec = cls(_pair(stride), _pair(padding), _pair(dilation), int(groups))
        if min(spec.stride) < 1 or min(spec.dilation) < 1 or spec.groups < 1:
            raise GeometryError(f"invalid convolution spec {spec}")
        if min(spec.padding) < 0:
            raise GeometryError(f"negative padding in {spec}")
        return spec

    def output_extent(self, h: int, w: int, kh: int, kw: int) -> tuple[int, int]:
        (sh, sw), (ph, pw), (dh, dw) = self.stride, self.padding, self.dilation
        ho = (h + 2 * ph - dh * (kh - 1) - 1) // sh + 1
        wo = (w + 2 * pw - dw * (kw - 1) - 1) // sw + 1
        if ho < 1 or wo < 1:
            raise GeometryError(
                f"convolution of {h}x{w} with {kh}x{kw} kernel and {self} has empty output"
            )
        return ho, wo


def _gather_taps(xp, kh, kw, stride, dilation, ho, wo):
    """Stack the strided/dilated window taps: [N,C,kh*kw,ho,wo]."""
    n, c = xp.shape[:2]
    (sh, sw), (dh, dw) = stride, dilation
    cols = np.empty((n, c, kh * kw, ho, wo))
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dh, j * dw
            cols[:, :, i * kw + j] = xp[:, :, r0 : r0 + sh * (ho - 1) + 1 : sh, c0 : c0 + sw * (wo - 1) + 1 : sw]
    return cols


def _scatter_taps(dcols, padded_shape, kh, kw, stride, dilation, ho, wo):
    """Adjoint of :func:`_gather_taps`."""
    (sh, sw), (dh, dw) = stride, dilation
    dxp = np.zeros(padded_shape)
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dh, j * dw
            dxp[:, :, r0 : r0 + sh * (ho - 1) + 1 : sh, c0 : c0 + sw * (wo - 1) + 1 : sw] += dcols[:, :, i * kw + j]
    return dxp


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: IntPair = 1,
    padding: IntPair = 0,
    dilation: IntPair = 1,
    groups: int = 1,
    *,
    spec: Optional[ConvSpec] = None,
) -> Tensor:
    """Grouped, dilated 2-D cross-correlation with zero padding.

    ``weight`` has shape [Cout, Cin/groups, kh, kw]. Pass either the
    individual geometry arguments or a prebuilt :class:`ConvSpec`.
    """
    _require4d(x, "conv2d")
    _require4d(weight, "conv2d weight")
    spec = spec or ConvSpec.of(stride, padding, dilation, groups)
    n, c, h, w = x.shape
    cout, cg, kh, kw = weight.shape
    g = spec.groups
    if c % g or cout % g:
        raise ShapeError(f"groups={g} must divide in-channels {c} and out-channels {cout}")
    if cg != c // g:
        raise ShapeError(f"weight expects {cg * g} input channels, input has {c}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} != ({cout},)")
    ho, wo = spec.output_extent(h, w, kh, kw)
    ph, pw = spec.padding

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _gather_taps(xp, kh, kw, spec.stride, spec.dilation, ho, wo)
    cols = cols.reshape(n, g, cg * kh * kw, ho * wo)
    wm = weight.data.reshape(g, cout // g, cg * kh * kw)
    out = np.matmul(wm, cols).reshape(n, cout, ho, wo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def _backward(grad):
        gm = grad.reshape(n, g, cout // g, ho * wo)
        dw = np.matmul(gm, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(weight.shape)
        dx = None
        if x.requires_grad:
            dcols = np.matmul(wm.transpose(0, 2, 1), gm).reshape(n, c, kh * kw, ho, wo)
            dxp = _scatter_taps(dcols, xp.shape, kh, kw, spec.stride, spec.dilation, ho, wo)
            dx = dxp[:, :, ph : ph + h, pw : pw + w]
        db = grad.sum(axis=(0, 2, 3)) if bias is not None else None
        return dx, dw, db

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, _backward, "conv2d")


def max_pool2d(x: Tensor, kernel: IntPair, stride: Optional[IntPair] = None) -> Tensor:
    """Windowed maximum without padding.

    Ties route the gradient to the first maximal tap in row-major window order.
    """
    _require4d(x, "max_pool2d")
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride if stride is not None else kernel)
    n, c, h, w = x.shape
    if kh > h or kw > w:
        raise GeometryError(f"pool kernel {kh}x{kw} exceeds input extent {h}x{w}")
    if sh < 1 or sw < 1:
        raise GeometryError(f"pool stride must be positive, got {(sh, sw)}")
    ho, wo = (h - kh) // sh + 1, (w - kw) // sw + 1
    taps = _gather_taps(x.data, kh, kw, (sh, sw), (1, 1), ho, wo)
    arg = np.argmax(taps, axis=2)
    out = np.take_along_axis(taps, arg[:, :, None], axis=2)[:, :, 0]

    def _backward(grad):
        dtaps = np.zeros_like(taps)
        np.put_along_axis(dtaps, arg[:, :, None], grad[:, :, None], axis=2)
        return (_scatter_taps(dtaps, x.shape, kh, kw, (sh, sw), (1, 1), ho, wo),)

    return make_result(out, (x,), _backward, "max_pool2d")


def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Rows hold align-corners-false interpolation weights."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        m[i, i0] += 1.0 - lam
        m[i, i1] += lam
    return m


def _adaptive_matrix(n_in: int, n_out: int) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        start = (i * n_in) // n_out
        stop = -((-(i + 1) * n_in) // n_out)
        m[i, start:stop] = 1.0 / (stop - start)
    return m


def _separable(x: Tensor, rows: np.ndarray, cols: np.ndarray, op: str) -> Tensor:
    out = rows @ x.data @ cols.T

    def _backward(grad):
        return (rows.T @ grad @ cols,)

    return make_result(out, (x,), _backward, op)


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize (align_corners=False); identity when extents match."""
    _require4d(x, "bilinear_upsample")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output extents must be positive, got {out_h}x{out_w}")
    h, w = x.shape[2:]
    if (out_h, out_w) == (h, w):
        return make_result(x.data.copy(), (x,), lambda g: (g,), "bilinear_upsample")
    return _separable(x, _bilinear_matrix(h, out_h), _bilinear_matrix(w, out_w), "bilinear_upsample")


def adaptive_avg_pool2d(x: Tensor, out_h: int, out_w: int) -> Tensor:
    _require4d(x, "adaptive_avg_pool2d")
    h, w = x.shape[2:]
    return _separable(x, _adaptive_matrix(h, out_h), _adaptive_matrix(w, out_w), "adaptive_avg_pool2d")


def softmax(x: Tensor, axis: int = 1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def _backward(grad):
        return (y * (grad - (grad * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), _backward, "softmax")


def channel_mean(x: Tensor) -> Tensor:
    """Mean over channels: [N,C,H,W] -> [N,1,H,W]."""
    _require4d(x, "channel_mean")
    c = x.shape[1]

    def _backward(grad):
        return (np.broadcast_to(grad / c, x.shape).copy(),)

    return make_result(x.data.mean(axis=1, keepdims=True), (x,), _backward, "channel_mean")


def spatial_mean(x: Tensor) -> Tensor:
    """Mean over H and W: [N,C,H,W] -> [N,C,1,1]."""
    _require4d(x, "spatial_mean")
    hw = x.shape[2] * x.shape[3]

    def _backward(grad):
        return (np.broadcast_to(grad / hw, x.shape).copy(),)

    return make_result(x.data.mean(axis=(2, 3), keepdims=True), (x,), _backward, "spatial_mean")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ShapeError(f"concat along axis {axis}: {t.shape} incompatible with {ref}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def _backward(grad):
        return tuple(np.split(grad, bounds, axis=ax))

    return make_result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), _backward, "concat")


def _broadcast_axes(small: tuple, big: tuple) -> Optional[tuple]:
    if len(small) != 4 or len(big) != 4:
        return None
    n, c, h, w = big
    if small == (n, 1, h, w) and c != 1:
        return (1,)
    if small == (n, c, 1, 1) and (h, w) != (1, 1):
        return (2, 3)
    return None


def _binary(a: Tensor, b: Tensor, op: str):
    if a.shape == b.shape:
        return None, None
    axes_b = _broadcast_axes(b.shape, a.shape)
    if axes_b is not None:
        return None, axes_b
    axes_a = _broadcast_axes(a.shape, b.shape)
    if axes_a is not None:
        return axes_a, None
    raise ShapeError(f"{op}: unsupported broadcast between {a.shape} and {b.shape}")


def _unbroadcast(grad, axes):
    return grad if axes is None else grad.sum(axis=axes, keepdims=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    ax_a, ax_b = _binary(a, b, "add")
    return make_result(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, ax_a), _unbroadcast(g, ax_b)), "add"
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    ax_a, ax_b = _binary(a, b, "sub")
    return make_result(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, ax_a), -_unbroadcast(g, ax_b)), "sub"
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    ax_a, ax_b = _binary(a, b, "mul")
    ad, bd = a.data, b.data

    def _backward(grad):
        return _unbroadcast(grad * bd, ax_a), _unbroadcast(grad * ad, ax_b)

    return make_result(ad * bd, (a, b), _backward, "mul")


def scale(x: Tensor, factor: float) -> Tensor:
    f = float(factor)
    return make_result(x.data * f, (x,), lambda g: (g * f,), "scale")


def total(x: Tensor) -> Tensor:
    """Sum of all elements as a 0-d tensor."""
    return make_result(np.array(x.data.sum()), (x,), lambda g: (np.full(x.shape, g.item()),), "sum")


def gelu(x: Tensor) -> Tensor:
    """Gaussian-error linear unit, x * Phi(x) with the exact normal CDF."""
    cdf = ndtr(x.data)

    def _backward(grad):
        pdf = np.exp(-0.5 * x.data**2) / math.sqrt(2.0 * math.pi)
        return (grad * (cdf + x.data * pdf),)

    return make_result(x.data * cdf, (x,), _backward, "gelu")


def group_norm(x: Tensor, num_groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    _require4d(x, "group_norm")
    n, c, h, w = x.shape
    if c % num_groups:
        raise ShapeError(f"num_groups={num_groups} must divide channels {c}")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"affine params must have shape ({c},), got {gamma.shape}, {beta.shape}")
    xg = x.data.reshape(n, num_groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    centered = xg - mu
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=2, keepdims=True) + eps)
    xhat = (centered * inv_std).reshape(x.shape)
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def _backward(grad):
        dgamma = (grad * xhat).sum(axis=(0, 2, 3))
        dbeta = grad.sum(axis=(0, 2, 3))
        dxhat = (grad * gamma.data[None, :, None, None]).reshape(n, num_groups, -1)
        xh = xhat.reshape(n, num_groups, -1)
        dx = inv_std * (
            dxhat - dxhat.mean(axis=2, keepdims=True) - xh * (dxhat * xh).mean(axis=2, keepdims=True)
        )
        return dx.reshape(x.shape), dgamma, dbeta

    return make_result(out, (x, gamma, beta), _backward, "group_norm")


def cross_entropy(logits: Tensor, labels, ignore_index: int = 255) -> Tensor:
    """Mean negative log-softmax over non-ignored pixels.

    ``labels`` is an integer array [N,H,W]. If every pixel is ignored the
    loss is 0 with a zero gradient.
    """
    _require4d(logits, "cross_entropy")
    labels = np.asarray(labels)
    n, k, h, w = logits.shape
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels shape {labels.shape} != {(n, h, w)}")
    valid = labels != ignore_index
    bad = valid & ((labels < 0) | (labels >= k))
    if bad.any():
        raise LabelError(f"label {labels[bad].flat[0]} outside [0, {k}) and != ignore_index {ignore_index}")
    count = int(valid.sum())
    if count == 0:
        return make_result(np.array(0.0), (logits,), lambda g: (np.zeros(logits.shape),), "cross_entropy")

    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsumexp
    safe = np.where(valid, labels, 0).astype(np.intp)
    picked = np.take_along_axis(logp, safe[:, None], axis=1)[:, 0]
    loss = -(picked * valid).sum() / count

    def _backward(grad):
        d = np.exp(logp)
        np.put_along_axis(d, safe[:, None], np.take_along_axis(d, safe[:, None], axis=1) - 1.0, axis=1)
        return (d * valid[:, None] * (grad.item() / count),)

    return make_result(np.array(loss), (logits,), _backward, "cross_entropy")
