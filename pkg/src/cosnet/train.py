"""Toy-scale training: synthetic data, AdamW, polynomial LR decay."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import ops
from .errors import ConfigError, CosnetError, NonFiniteError
from .metrics import ConfusionMatrix, accumulate, miou
from .model import ModelConfig, build_model, forward, predict_mask
from .params import ParamStore
from .tensor import backward, no_grad

log = logging.getLogger(__name__)


class TrainingDivergedError(CosnetError, FloatingPointError):
    def __init__(self, iteration: int, detail: str = ""):
        super().__init__(f"training diverged at iteration {iteration}{': ' + detail if detail else ''}")
        self.iteration = iteration


def poly_lr(iteration: int, total: int, base_lr: float, power: float = 1.0) -> float:
    """base_lr * (1 - iteration/total) ** power"""
    if total <= 0:
        raise ValueError(f"total must be positive, got {total}")
    if not 0 <= iteration <= total:
        raise ValueError(f"iteration {iteration} outside [0, {total}]")
    return base_lr * (1.0 - iteration / total) ** power


# --- AdamW ---------------------------------------------------------------------


@dataclass
class OptimState:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(params: ParamStore, grads: dict, state: OptimState, lr: Optional[float] = None) -> None:
    """One AdamW update, in place. Decay is applied to the weights before the
    adaptive step: theta -= lr * wd * theta."""
    lr = state.lr if lr is None else lr
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter '{name}'")
        if g.shape != params[name].shape:
            raise ConfigError(f"gradient for '{name}' has shape {g.shape}, parameter {params[name].shape}")
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, g in grads.items():
        theta = params[name].data
        m = state.m.setdefault(name, np.zeros_like(theta))
        v = state.v.setdefault(name, np.zeros_like(theta))
        if state.weight_decay:
            theta -= lr * state.weight_decay * theta
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# --- synthetic data ------------------------------------------------------------

SHAPE_KINDS = ("rectangle", "disk", "hbar", "vbar")

CLASS_COLORS = np.array(
    [
        [0.40, 0.40, 0.40],  # background (textured around this)
        [0.85, 0.25, 0.20],
        [0.20, 0.75, 0.30],
        [0.25, 0.35, 0.90],
        [0.90, 0.85, 0.20],
    ]
)


@dataclass(frozen=True)
class ToySpec:
    seed: int = 0
    num_images: int = 8
    size: int = 64
    num_classes: int = 5

    def __post_init__(self):
        if self.size % 32:
            raise ConfigError(f"canvas size must be divisible by 32, got {self.size}")
        if not 2 <= self.num_classes <= len(SHAPE_KINDS) + 1:
            raise ConfigError(f"toy data supports 2..{len(SHAPE_KINDS) + 1} classes")


@dataclass(frozen=True)
class Shape:
    label: int
    cy: float
    cx: float
    half_h: float
    half_w: float
    color: tuple[float, float, float]

    @property
    def kind(self) -> str:
        return SHAPE_KINDS[self.label - 1]


def shape_mask(shape: Shape, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    dy, dx = (yy - shape.cy) / shape.half_h, (xx - shape.cx) / shape.half_w
    if shape.kind == "disk":
        return dy * dy + dx * dx <= 1.0
    return (np.abs(dy) <= 1.0) & (np.abs(dx) <= 1.0)


def _random_shape(label: int, size: int, rng: np.random.Generator) -> Shape:
    kind = SHAPE_KINDS[label - 1]
    s = size / 64.0
    if kind == "rectangle":
        hh, hw = rng.uniform(6, 11, size=2) * s
    elif kind == "disk":
        hh = hw = rng.uniform(6, 11) * s
    elif kind == "hbar":
        hh, hw = rng.uniform(3, 4.5) * s, rng.uniform(13, 20) * s
    else:
        hh, hw = rng.uniform(13, 20) * s, rng.uniform(3, 4.5) * s
    cy = rng.uniform(hh, size - hh)
    cx = rng.uniform(hw, size - hw)
    color = np.clip(CLASS_COLORS[label] + rng.uniform(-0.06, 0.06, size=3), 0, 1)
    return Shape(label, float(cy), float(cx), float(hh), float(hw), tuple(float(c) for c in color))


def rasterize(shapes: list[Shape], size: int, texture: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Paint shapes in order over ``texture`` (H, W, 3); later shapes win."""
    image = texture.copy()
    labels = np.zeros((size, size), dtype=np.int64)
    for shape in shapes:
        m = shape_mask(shape, size)
        image[m] = shape.color
        labels[m] = shape.label
    return image, labels


def _texture(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    freq = rng.uniform(0.2, 0.5)
    stripes = 0.06 * np.sin(freq * (xx + 0.7 * yy) + rng.uniform(0, 2 * math.pi))
    noise = rng.normal(scale=0.03, size=(size, size))
    base = CLASS_COLORS[0][None, None, :] + (stripes + noise)[:, :, None]
    return np.clip(base, 0.0, 1.0)


@dataclass
class ToyDataset:
    images: np.ndarray  # [N, 3, H, W] floats in [0, 1]
    labels: np.ndarray  # [N, H, W] ints
    shapes: list[list[Shape]]
    textures: np.ndarray  # [N, H, W, 3]
    spec: ToySpec

    def tobytes(self) -> bytes:
        return self.images.tobytes() + self.labels.tobytes()


def generate_toy_dataset(spec: ToySpec = ToySpec()) -> ToyDataset:
    """Coloured rectangles, disks and bars on a striped, noisy background.

    Each shape kind is one class; shapes may overlap. Every foreground class
    is drawn last (unoccluded) in at least one image, so all classes occur.
    """
    rng = np.random.default_rng(spec.seed)
    n, size, k = spec.num_images, spec.size, spec.num_classes
    images, labels, all_shapes, textures = [], [], [], []
    for i in range(n):
        texture = _texture(size, rng)
        count = int(rng.integers(2, 4))
        picks = [int(rng.integers(1, k)) for _ in range(count - 1)]
        picks.append(1 + i % (k - 1))  # guaranteed class, painted on top
        shapes = [_random_shape(lbl, size, rng) for lbl in picks]
        img, lab = rasterize(shapes, size, texture)
        images.append(img.transpose(2, 0, 1))
        labels.append(lab)
        all_shapes.append(shapes)
        textures.append(texture)
    return ToyDataset(np.stack(images), np.stack(labels), all_shapes, np.stack(textures), spec)


# --- training loop -------------------------------------------------------------


@dataclass
class TrainResult:
    params: ParamStore
    losses: list[float]
    final_loss: float
    train_miou: float


def evaluate_miou(params: ParamStore, cfg: ModelConfig, images, labels) -> float:
    conf = ConfusionMatrix(cfg.num_classes)
    pred = predict_mask(images, params, cfg)
    for p, g in zip(pred, labels):
        conf = accumulate(conf, p, g)
    return miou(conf)


def train_toy(
    cfg: ModelConfig,
    data: ToyDataset,
    iters: int,
    seed: int = 0,
    *,
    lr: float = 1e-3,
    weight_decay: float = 0.01,
    power: float = 1.0,
    params: Optional[ParamStore] = None,
    on_step: Optional[Callable[[int, float, float], None]] = None,
) -> TrainResult:
    """Full-batch AdamW on ``data``; returns final params, per-step losses and train mIoU."""
    if data.spec.num_classes != cfg.num_classes:
        raise ConfigError(f"dataset has {data.spec.num_classes} classes, model {cfg.num_classes}")
    params = params if params is not None else build_model(cfg, seed)
    state = OptimState(lr=lr, weight_decay=weight_decay)
    losses: list[float] = []
    for it in range(iters):
        step_lr = poly_lr(it, iters, lr, power)
        params.zero_grad()
        try:
            loss = ops.cross_entropy(forward(data.images, params, cfg), data.labels)
            backward(loss, leaves=params.values())
            grads = {k: t.grad for k, t in params.items()}
            optimizer_step(params, grads, state, step_lr)
        except NonFiniteError as exc:
            raise TrainingDivergedError(it, str(exc)) from exc
        losses.append(loss.item())
        if on_step is not None:
            on_step(it, losses[-1], step_lr)
        log.debug("iter %d loss %.6f lr %.3g", it, losses[-1], step_lr)
    params.zero_grad()
    with no_grad():
        final = ops.cross_entropy(forward(data.images, params, cfg), data.labels).item()
    return TrainResult(params, losses, final, evaluate_miou(params, cfg, data.images, data.labels))
