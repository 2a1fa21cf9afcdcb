"""Binary PPM (P6) / PGM (P5) codec and palette-coded label masks."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import CosnetError, LabelError
from ..sharpen import ImageBuffer


class ImageFormatError(CosnetError, ValueError):
    """Base class for pixmap decoding failures."""


class MalformedHeaderError(ImageFormatError):
    pass


class UnsupportedMaxvalError(ImageFormatError):
    pass


class TruncatedPayloadError(ImageFormatError):
    def __init__(self, missing: int, expected: int):
        super().__init__(f"pixel payload truncated: {missing} of {expected} bytes missing")
        self.missing = missing


class PaletteError(CosnetError, ValueError):
    pass


class UnknownColorError(CosnetError, ValueError):
    pass


_MAGIC_CHANNELS = {b"P5": 1, b"P6": 3}


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping # comments.

    Returns the tokens and the offset of the first payload byte (one whitespace
    byte after the last token).
    """
    tokens: list[bytes] = []
    pos, n = 0, len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MalformedHeaderError(f"header ended after {len(tokens)} of {count} fields")
        tokens.append(data[start:pos])
    if pos >= n or not data[pos : pos + 1].isspace():
        raise MalformedHeaderError("missing whitespace between header and pixel data")
    return tokens, pos + 1


def decode_pnm(data: bytes) -> ImageBuffer:
    if data[:2] not in _MAGIC_CHANNELS:
        raise MalformedHeaderError(f"unsupported magic {data[:2]!r}; expected P5 or P6")
    channels = _MAGIC_CHANNELS[data[:2]]
    tokens, offset = _header_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise MalformedHeaderError(f"non-numeric header field in {tokens[1:]!r}") from None
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"invalid extents {width}x{height}")
    if maxval != 255:
        raise UnsupportedMaxvalError(f"maxval {maxval} not supported (only 255)")
    expected = width * height * channels
    payload = data[offset : offset + expected]
    if len(payload) < expected:
        raise TruncatedPayloadError(expected - len(payload), expected)
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return ImageBuffer(width, height, channels, pixels.copy())


def encode_pnm(buf: ImageBuffer) -> bytes:
    magic = b"P6" if buf.channels == 3 else b"P5"
    header = magic + f"\n{buf.width} {buf.height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(buf.pixels, dtype=np.uint8).tobytes()


def load_image(path) -> ImageBuffer:
    return decode_pnm(Path(path).read_bytes())


def save_image(buf: ImageBuffer, path) -> None:
    Path(path).write_bytes(encode_pnm(buf))


# --- label masks -----------------------------------------------------------------

DEFAULT_PALETTE = (
    (0, 0, 0),
    (230, 25, 75),
    (60, 180, 75),
    (0, 130, 200),
    (255, 225, 25),
    (145, 30, 180),
    (70, 240, 240),
    (245, 130, 48),
)


def _check_palette(palette: Sequence[Sequence[int]]) -> np.ndarray:
    pal = np.asarray(palette, dtype=np.int64)
    if pal.ndim != 2 or pal.shape[1] != 3 or (pal < 0).any() or (pal > 255).any():
        raise PaletteError("palette must be a list of RGB triples in 0..255")
    if len({tuple(c) for c in pal.tolist()}) != len(pal):
        raise PaletteError("palette colours must be distinct")
    return pal.astype(np.uint8)


def mask_to_image(labels, palette=DEFAULT_PALETTE) -> ImageBuffer:
    pal = _check_palette(palette)
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= len(pal)):
        raise LabelError(f"label outside palette range [0, {len(pal)})")
    return ImageBuffer.from_array(pal[labels])


def image_to_mask(buf: ImageBuffer, palette=DEFAULT_PALETTE) -> np.ndarray:
    pal = _check_palette(palette)
    if buf.channels != 3:
        raise PaletteError("colour masks must be RGB (P6)")
    key = lambda rgb: (rgb[..., 0].astype(np.int64) << 16) | (rgb[..., 1].astype(np.int64) << 8) | rgb[..., 2]
    codes = key(buf.pixels)
    pal_codes = key(pal)
    order = np.argsort(pal_codes)
    idx = np.searchsorted(pal_codes[order], codes).clip(0, len(pal) - 1)
    found = pal_codes[order][idx] == codes
    if not found.all():
        y, x = np.argwhere(~found)[0]
        raise UnknownColorError(f"pixel ({y}, {x}) colour {tuple(buf.pixels[y, x])} not in palette")
    return order[idx].astype(np.int64)


def save_mask(labels, path, palette=DEFAULT_PALETTE) -> None:
    save_image(mask_to_image(labels, palette), path)


def load_mask(path, palette=DEFAULT_PALETTE) -> np.ndarray:
    return image_to_mask(load_image(path), palette)
