"""Full network: stem, four FSB stages, BEM on stage 3, pyramid-fusion decoder."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

import numpy as np

from . import ops
from .blocks import BlockConfig, bem, fsb, init_bem, init_fsb
from .errors import ConfigError, GeometryError, ShapeError
from .params import ParamScope, ParamStore, init_conv, init_norm, norm_groups
from .tensor import Tensor, no_grad

ABLATION_ROWS = {
    1: dict(use_mcfs=False, use_sm=False, use_bem=False),
    2: dict(use_mcfs=True, use_sm=False, use_bem=False),
    3: dict(use_mcfs=True, use_sm=True, use_bem=False),
    4: dict(use_mcfs=True, use_sm=True, use_bem=True),
}


@dataclass(frozen=True)
class ModelConfig:
    stage_channels: tuple[int, int, int, int] = (8, 16, 32, 64)
    stage_depths: tuple[int, int, int, int] = (1, 1, 2, 1)
    mcfs_dilations: tuple[int, int] = (1, 3)
    mcfs_groups: int = 4
    num_classes: int = 5
    use_mcfs: bool = True
    use_sm: bool = True
    use_bem: bool = True
    decoder_width: int = 32
    input_channels: int = 3
    mlp_ratio: int = 4
    sm_kernel: int = 3
    bem_pool: int = 2
    residual: bool = True
    ppm_scales: tuple[int, ...] = (1, 2, 3, 6)

    def __post_init__(self):
        for name in ("stage_channels", "stage_depths", "mcfs_dilations", "ppm_scales"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if len(self.stage_channels) != 4 or len(self.stage_depths) != 4:
            raise ConfigError("stage_channels and stage_depths need exactly four entries")
        if min(self.stage_channels) < 1 or min(self.stage_depths) < 1:
            raise ConfigError("stage widths and depths must be positive")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.use_sm and not self.use_mcfs:
            raise ConfigError("use_sm requires use_mcfs (the sharpening module is part of MCFS)")
        if self.stage_channels[0] < 2:
            raise ConfigError("first stage needs at least 2 channels (stem halves it)")
        self.block_config()

    def block_config(self) -> BlockConfig:
        return BlockConfig(
            dilations=self.mcfs_dilations,
            groups=self.mcfs_groups,
            sm_kernel=self.sm_kernel,
            mlp_ratio=self.mlp_ratio,
            use_mcfs=self.use_mcfs,
            use_sm=self.use_sm,
            residual=self.residual,
        )

    def ablation(self, row: int) -> "ModelConfig":
        """The four enhancement-module variants: 1 none, 2 +MCFS, 3 +SM, 4 +BEM."""
        if row not in ABLATION_ROWS:
            raise ConfigError(f"ablation row must be 1..4, got {row}")
        return replace(self, **ABLATION_ROWS[row])

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known - {"seed"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in data.items() if k in known})


TOY_CONFIG = ModelConfig()

# Unvalidated guess at a full-size network; widths/depths are not published.
FULL_SCALE_GUESS = ModelConfig(
    stage_channels=(64, 128, 320, 512),
    stage_depths=(3, 4, 12, 3),
    decoder_width=512,
    num_classes=5,
)


@dataclass
class FeaturePyramid:
    f1: Tensor
    f2: Tensor
    f3: Tensor
    f4: Tensor
    f5: Optional[Tensor] = None

    def levels(self) -> dict[str, Tensor]:
        out = {"F1": self.f1, "F2": self.f2, "F3": self.f3, "F4": self.f4}
        if self.f5 is not None:
            out["F5"] = self.f5
        return out


# --- parameter construction --------------------------------------------------


def _init_cna(p: ParamScope, cout: int, cin: int, k: int, rng) -> None:
    init_conv(p.scope("conv"), cout, cin, k, rng)
    init_norm(p.scope("norm"), cout)


def _cna(x: Tensor, p: ParamScope, stride: int = 1) -> Tensor:
    """conv -> group norm -> GELU"""
    w = p["conv.weight"]
    k = w.shape[-1]
    h = ops.conv2d(x, w, p["conv.bias"], stride=stride, padding=k // 2)
    h = ops.group_norm(h, norm_groups(h.shape[1]), p["norm.weight"], p["norm.bias"])
    return ops.gelu(h)


def stem_width(cfg: ModelConfig) -> int:
    return max(cfg.stage_channels[0] // 2, 1)


def build_model(cfg: ModelConfig, seed: int = 0) -> ParamStore:
    """Deterministically initialised parameters for ``cfg``."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    c = cfg.stage_channels
    bcfg = cfg.block_config()

    _init_cna(store.scope("stem.0"), stem_width(cfg), cfg.input_channels, 3, rng)
    _init_cna(store.scope("stem.1"), c[0], stem_width(cfg), 3, rng)
    for i in range(4):
        stage = store.scope(f"stages.{i}")
        if i > 0:
            _init_cna(stage.scope("down"), c[i], c[i - 1], 3, rng)
        for j in range(cfg.stage_depths[i]):
            init_fsb(stage.scope(f"blocks.{j}"), c[i], bcfg, rng)
    if cfg.use_bem:
        init_bem(store.scope("bem"), c[2], rng)

    d = cfg.decoder_width
    dec = store.scope("decoder")
    for s in cfg.ppm_scales:
        _init_cna(dec.scope(f"ppm.{s}"), d, c[3], 1, rng)
    _init_cna(dec.scope("ppm_fuse"), d, c[3] + d * len(cfg.ppm_scales), 3, rng)
    for name, cin in (("f1", c[0]), ("f2", c[1]), ("f5", c[2])):
        _init_cna(dec.scope(f"lateral.{name}"), d, cin, 1, rng)
        _init_cna(dec.scope(f"smooth.{name}"), d, d, 3, rng)
    _init_cna(dec.scope("fuse"), d, 4 * d + c[2], 3, rng)
    init_conv(dec.scope("classifier"), cfg.num_classes, d, 1, rng)
    return store


def check_params(store: ParamStore, cfg: ModelConfig) -> None:
    """Raise if ``store`` does not have exactly the layout ``cfg`` builds."""
    ref = build_model(cfg, seed=0)
    missing = [k for k in ref if k not in store]
    extra = [k for k in store if k not in ref]
    if missing or extra:
        raise ConfigError(f"parameter/config mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
    for k, t in ref.items():
        if store[k].shape != t.shape:
            raise ConfigError(f"parameter '{k}' has shape {store[k].shape}, config expects {t.shape}")


# --- forward passes ------------------------------------------------------------


def _as_image(image, cfg: ModelConfig) -> Tensor:
    x = image if isinstance(image, Tensor) else Tensor(image)
    if x.data.ndim != 4 or x.shape[1] != cfg.input_channels:
        raise ShapeError(f"expected image [N,{cfg.input_channels},H,W], got {x.shape}")
    h, w = x.shape[2:]
    if h % 32 or w % 32:
        raise GeometryError(f"input extents must be divisible by 32, got {h}x{w}")
    return x


def stem(image, store: ParamStore, cfg: ModelConfig) -> Tensor:
    """Two stride-2 conv/norm/GELU layers: 4x spatial reduction."""
    x = _as_image(image, cfg)
    x = _cna(x, store.scope("stem.0"), stride=2)
    return _cna(x, store.scope("stem.1"), stride=2)


def backbone_forward(image, store: ParamStore, cfg: ModelConfig) -> FeaturePyramid:
    bcfg = cfg.block_config()
    x = stem(image, store, cfg)
    feats = []
    for i in range(4):
        stage = store.scope(f"stages.{i}")
        if i > 0:
            x = _cna(x, stage.scope("down"), stride=2)
        for j in range(cfg.stage_depths[i]):
            x = fsb(x, stage.scope(f"blocks.{j}"), bcfg)
        feats.append(x)
    return FeaturePyramid(*feats)


def intermediate_forward(pyr: FeaturePyramid, store: ParamStore, cfg: ModelConfig) -> FeaturePyramid:
    """F5 = BEM(F3), or F3 itself when BEM is disabled."""
    f5 = bem(pyr.f3, store.scope("bem"), pool=cfg.bem_pool) if cfg.use_bem else pyr.f3
    return FeaturePyramid(pyr.f1, pyr.f2, pyr.f3, pyr.f4, f5)


def _resize_to(x: Tensor, ref: Tensor) -> Tensor:
    return ops.bilinear_upsample(x, ref.shape[2], ref.shape[3])


def decoder_forward(
    pyr: FeaturePyramid, store: ParamStore, cfg: ModelConfig, out_size: Optional[tuple[int, int]] = None
) -> Tensor:
    """Pyramid pooling on F4, top-down fusion through F5, F2, F1, then a
    multi-level concat (plus raw F3) at F1 resolution and a 1x1 classifier.

    Logits are bilinearly resized to ``out_size`` (default 4x the F1 extent).
    """
    if pyr.f5 is None:
        raise ConfigError("decoder needs F5; run intermediate_forward first")
    dec = store.scope("decoder")
    f4 = pyr.f4
    h4, w4 = f4.shape[2:]
    pooled = [f4]
    for s in cfg.ppm_scales:
        ctx = _cna(ops.adaptive_avg_pool2d(f4, s, s), dec.scope(f"ppm.{s}"))
        pooled.append(ops.bilinear_upsample(ctx, h4, w4))
    p4 = _cna(ops.concat(pooled, axis=1), dec.scope("ppm_fuse"))

    top = p4
    outs = [p4]
    for name, feat in (("f5", pyr.f5), ("f2", pyr.f2), ("f1", pyr.f1)):
        lat = _cna(feat, dec.scope(f"lateral.{name}"))
        merged = ops.add(lat, _resize_to(top, lat))
        top = _cna(merged, dec.scope(f"smooth.{name}"))
        outs.append(top)

    p1 = outs[-1]
    levels = [p1] + [_resize_to(t, p1) for t in outs[-2::-1]] + [_resize_to(pyr.f3, p1)]
    fused = _cna(ops.concat(levels, axis=1), dec.scope("fuse"))
    cls = dec.scope("classifier")
    logits = ops.conv2d(fused, cls["weight"], cls["bias"])
    if out_size is None:
        out_size = (4 * p1.shape[2], 4 * p1.shape[3])
    return ops.bilinear_upsample(logits, *out_size)


def forward(image, store: ParamStore, cfg: ModelConfig, return_pyramid: bool = False):
    x = _as_image(image, cfg)
    pyr = intermediate_forward(backbone_forward(x, store, cfg), store, cfg)
    logits = decoder_forward(pyr, store, cfg, out_size=x.shape[2:])
    return (logits, pyr) if return_pyramid else logits


def predict_mask(image, store: ParamStore, cfg: ModelConfig) -> np.ndarray:
    """Argmax label map [N,H,W]; ties resolve to the lowest class index."""
    with no_grad():
        logits = forward(image, store, cfg)
    return np.argmax(logits.data, axis=1)


def parameter_count(cfg: ModelConfig) -> int:
    return build_model(cfg, seed=0).count()
