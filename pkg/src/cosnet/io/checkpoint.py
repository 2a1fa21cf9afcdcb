"""Binary checkpoints, feature-map dumps and JSON model configs.

Checkpoint layout (all integers little-endian)::

    "COSK" | u16 version | u32 config_len | config JSON (utf-8)
    | u32 entry_count | entries... | u32 CRC-32 of every preceding byte

    entry := u16 path_len | path (utf-8) | u8 ndim | ndim x u32 extent
             | prod(extents) x f64

Feature dumps are a concatenation of records::

    "COSF" | u16 name_len | name | u8 ndim | ndim x u32 extent | f64 values
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import ConfigError, CosnetError
from ..model import ModelConfig
from ..params import ParamStore
from ..tensor import Tensor

CHECKPOINT_MAGIC = b"COSK"
CHECKPOINT_VERSION = 1
FEATURE_MAGIC = b"COSF"


class CheckpointError(CosnetError, ValueError):
    pass


class CheckpointFormatError(CheckpointError):
    """Bad magic or a structurally invalid body."""


class CheckpointCRCError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointConfigError(CheckpointError):
    """Stored config does not match the config the caller asked for."""


class FeatureDumpError(CosnetError, ValueError):
    pass


class _Reader:
    def __init__(self, data: bytes, error=CheckpointFormatError):
        self.data, self.pos, self.error = data, 0, error

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise self.error(f"unexpected end of data: needed {n} bytes at offset {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def array(self) -> tuple[tuple[int, ...], np.ndarray]:
        (ndim,) = self.unpack("B")
        shape = self.unpack(f"{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(self.take(8 * count), dtype="<f8").reshape(shape)
        return shape, values.astype(np.float64)

    def string(self) -> str:
        (n,) = self.unpack("H")
        return self.take(n).decode("utf-8")


def _pack_array(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype=np.float64)
    return struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.astype("<f8").tobytes()


def _pack_string(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def encode_checkpoint(params: ParamStore, cfg: ModelConfig) -> bytes:
    cfg_raw = cfg.to_json().encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(cfg_raw)), cfg_raw]
    parts.append(struct.pack("<I", len(params)))
    for path, t in params.items():
        parts.append(_pack_string(path) + _pack_array(t.data))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(data: bytes, expected: ModelConfig | None = None) -> tuple[ParamStore, ModelConfig]:
    if len(data) < 4 + 2 + 4 + 4 + 4:
        raise CheckpointFormatError(f"checkpoint too short ({len(data)} bytes)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointCRCError("checkpoint CRC-32 mismatch; file is corrupted")
    r = _Reader(body)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("not a checkpoint (bad magic)")
    version, cfg_len = r.unpack("HI")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, this build reads {CHECKPOINT_VERSION}")
    try:
        cfg = ModelConfig.from_dict(json.loads(r.take(cfg_len).decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise CheckpointFormatError(f"unreadable config snapshot: {exc}") from exc
    if expected is not None and expected != cfg:
        diff = [k for k, v in expected.to_dict().items() if cfg.to_dict().get(k) != v]
        raise CheckpointConfigError(f"checkpoint config differs from requested config in {diff}")
    (count,) = r.unpack("I")
    store = ParamStore()
    for _ in range(count):
        path = r.string()
        _, values = r.array()
        store.add(path, values)
    if r.pos != len(body):
        raise CheckpointFormatError(f"{len(body) - r.pos} trailing bytes after last entry")
    return store, cfg


def save_checkpoint(path, params: ParamStore, cfg: ModelConfig) -> None:
    Path(path).write_bytes(encode_checkpoint(params, cfg))


def load_checkpoint(path, expected: ModelConfig | None = None) -> tuple[ParamStore, ModelConfig]:
    return decode_checkpoint(Path(path).read_bytes(), expected)


# --- feature dumps ---------------------------------------------------------------


def encode_features(features: Mapping[str, object]) -> bytes:
    out = []
    for name, value in features.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        out.append(FEATURE_MAGIC + _pack_string(name) + _pack_array(arr))
    return b"".join(out)


def decode_features(data: bytes) -> dict[str, np.ndarray]:
    r = _Reader(data, FeatureDumpError)
    out: dict[str, np.ndarray] = {}
    while r.pos < len(data):
        if r.take(4) != FEATURE_MAGIC:
            raise FeatureDumpError(f"bad record magic at offset {r.pos - 4}")
        name = r.string()
        _, values = r.array()
        out[name] = values
    return out


def dump_features(path, features: Mapping[str, object]) -> None:
    Path(path).write_bytes(encode_features(features))


def load_features(path) -> dict[str, np.ndarray]:
    return decode_features(Path(path).read_bytes())


# --- config files ----------------------------------------------------------------


def load_config(path) -> tuple[ModelConfig, int]:
    """Read a JSON model config; an optional ``seed`` key defaults to 0."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return ModelConfig.from_dict(data), int(data.get("seed", 0))


def save_config(path, cfg: ModelConfig, seed: int = 0) -> None:
    data = cfg.to_dict()
    data["seed"] = seed
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
