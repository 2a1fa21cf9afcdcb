"""Unsharp masking and high-boost filtering on plain images.

Images are handled as float arrays of shape (H, W) or (H, W, C) with
samples in [0, 1]. Sharpened results may leave that range; clamping happens
only when converting back to 8 bits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass
class ImageBuffer:
    """An 8-bit raster, row-major, with 1 (gray) or 3 (RGB) channels."""

    width: int
    height: int
    channels: int
    pixels: np.ndarray  # uint8, shape (height, width, channels)

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ShapeError(f"channels must be 1 or 3, got {self.channels}")
        px = np.asarray(self.pixels, dtype=np.uint8)
        expected = self.width * self.height * self.channels
        if px.size != expected:
            raise ShapeError(f"pixel buffer holds {px.size} samples, expected {expected}")
        self.pixels = px.reshape(self.height, self.width, self.channels)

    @classmethod
    def from_array(cls, arr) -> "ImageBuffer":
        arr = np.asarray(arr, dtype=np.uint8)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        return cls(w, h, c, arr)

    def to_real(self) -> np.ndarray:
        return self.pixels.astype(np.float64) / 255.0

    @classmethod
    def from_real(cls, real) -> "ImageBuffer":
        """Clamp to [0, 1] and round half-up to 8 bits."""
        real = np.asarray(real, dtype=np.float64)
        if real.ndim == 2:
            real = real[:, :, None]
        q = np.floor(np.clip(real, 0.0, 1.0) * 255.0 + 0.5)
        return cls.from_array(q.astype(np.uint8))


def _box_1d(a: np.ndarray, radius: int, axis: int) -> np.ndarray:
    n = a.shape[axis]
    pad = [(0, 0)] * a.ndim
    pad[axis] = (radius + 1, radius)
    padded = np.pad(a, pad, mode="edge")
    csum = np.cumsum(padded, axis=axis)
    hi = np.take(csum, np.arange(2 * radius + 1, 2 * radius + 1 + n), axis=axis)
    lo = np.take(csum, np.arange(0, n), axis=axis)
    return (hi - lo) / (2 * radius + 1)


def box_blur(image, radius: int) -> np.ndarray:
    """Separable (2r+1) x (2r+1) mean filter with clamp-to-edge borders."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    img = np.asarray(image, dtype=np.float64)
    if radius == 0:
        return img.copy()
    return _box_1d(_box_1d(img, radius, 0), radius, 1)


def unsharp_mask(f, f_blur, k: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(mask, sharpened)`` with mask = f - f_blur and sharpened = f + k * mask.

    k = 1 is classic unsharp masking; k > 1 is high-boost filtering.
    """
    f = np.asarray(f, dtype=np.float64)
    f_blur = np.asarray(f_blur, dtype=np.float64)
    if f.shape != f_blur.shape:
        raise ShapeError(f"image {f.shape} and blurred image {f_blur.shape} differ in shape")
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    mask = f - f_blur
    return mask, f + k * mask


def edge_strength(image) -> float:
    """Mean absolute horizontal difference plus mean absolute vertical difference."""
    img = np.asarray(image, dtype=np.float64)
    total = 0.0
    for axis in (0, 1):
        if img.shape[axis] > 1:
            total += float(np.abs(np.diff(img, axis=axis)).mean())
    return total


@dataclass(frozen=True)
class EdgeReport:
    original: float
    sharpened: float

    def __str__(self) -> str:
        return f"edge strength: original {self.original:.6f}  sharpened {self.sharpened:.6f}"


def edge_strength_report(f, g) -> EdgeReport:
    return EdgeReport(edge_strength(f), edge_strength(g))


def sharpen_image(buf: ImageBuffer, radius: int, k: float) -> tuple[ImageBuffer, EdgeReport]:
    f = buf.to_real()
    _, g = unsharp_mask(f, box_blur(f, radius), k)
    return ImageBuffer.from_real(g), edge_strength_report(f, g)
