"""Confusion-matrix based segmentation metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CosnetError, LabelError, ShapeError


class UndefinedMetricError(CosnetError, ValueError):
    """Metric requested from a matrix with no counted pixels."""


@dataclass
class ConfusionMatrix:
    """K x K pixel counts; rows are ground truth, columns predictions."""

    num_classes: int
    counts: np.ndarray = field(default=None)
    ignored: int = 0

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (self.num_classes, self.num_classes) or (self.counts < 0).any():
            raise ShapeError(f"invalid confusion counts for K={self.num_classes}")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ShapeError("cannot merge confusion matrices of different class counts")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts, self.ignored + other.ignored)


def accumulate(conf: ConfusionMatrix, pred, gt, ignore_index: int | None = 255) -> ConfusionMatrix:
    """Return ``conf`` plus the counts of one prediction / ground-truth pair."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    k = conf.num_classes
    keep = np.ones(gt.shape, bool) if ignore_index is None else gt != ignore_index
    p, g = pred[keep].astype(np.int64), gt[keep].astype(np.int64)
    for name, arr in (("ground-truth", g), ("predicted", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise LabelError(f"{name} label outside [0, {k})")
    counts = np.bincount(g * k + p, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(k, conf.counts + counts, conf.ignored + int((~keep).sum()))


def _require_counts(conf: ConfusionMatrix) -> None:
    if conf.total == 0:
        raise UndefinedMetricError("confusion matrix is empty")


def class_iou(conf: ConfusionMatrix) -> np.ndarray:
    """Per-class IoU; NaN where a class never occurs in prediction or truth."""
    _require_counts(conf)
    tp = np.diag(conf.counts).astype(np.float64)
    union = conf.counts.sum(axis=0) + conf.counts.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, tp / union, np.nan)


def mean_of_present(ious) -> float:
    """Unweighted mean that skips classes with no union (NaN entries)."""
    ious = np.asarray(ious, dtype=np.float64)
    present = ious[~np.isnan(ious)]
    if present.size == 0:
        raise UndefinedMetricError("no class has a non-empty union")
    return float(present.mean())


def miou(conf: ConfusionMatrix) -> float:
    return mean_of_present(class_iou(conf))


def pixel_accuracy(conf: ConfusionMatrix) -> float:
    _require_counts(conf)
    return float(np.trace(conf.counts) / conf.total)


def format_report(conf: ConfusionMatrix, class_names=None) -> str:
    """Per-class IoU, mIoU and pixel accuracy as a plain-text table (percent)."""
    names = class_names or [f"class {i}" for i in range(conf.num_classes)]
    ious = class_iou(conf)
    width = max(len(n) for n in names + ["Pix. Acc."])
    lines = [f"{'Class':<{width}} | IoU (%)", "-" * (width + 11)]
    for name, v in zip(names, ious):
        cell = "   n/a" if np.isnan(v) else f"{100 * v:6.2f}"
        lines.append(f"{name:<{width}} | {cell}")
    lines.append("-" * (width + 11))
    lines.append(f"{'mIoU':<{width}} | {100 * miou(conf):6.2f}")
    lines.append(f"{'Pix. Acc.':<{width}} | {100 * pixel_accuracy(conf):6.2f}")
    if conf.ignored:
        lines.append(f"note: {conf.ignored} ignored pixels excluded from all metrics")
    return "\n".join(lines)
