"""Confusion-matrix accumulation and mean IoU with ignore-region exclusion."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .centroid_codec import LabelMap
from .errors import ValidationError


@dataclass
class ConfusionMatrix:
    """N x N counts, rows ground truth, columns prediction.

    Matrices over the same class count merge additively, so tiles may be
    accumulated in parallel and combined at the end.
    """

    num_classes: int
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValidationError(f"need at least one class, got {self.num_classes}")
        if self.counts is None:
            self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (self.num_classes, self.num_classes):
                raise ValidationError(
                    f"count table shape {self.counts.shape} does not match "
                    f"{self.num_classes} classes"
                )
            if (self.counts < 0).any():
                raise ValidationError("counts must be non-negative")

    @property
    def valid_count(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValidationError(
                f"cannot merge {other.num_classes}-class matrix into "
                f"{self.num_classes}-class matrix"
            )
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)


def accumulate(cm: ConfusionMatrix, gt: LabelMap, pred: LabelMap) -> ConfusionMatrix:
    """Add one (ground truth, prediction) pair of label maps into ``cm``.

    Pixels where the ground truth is the ignore value are skipped entirely,
    whatever the prediction says there. At counted pixels the prediction must
    be a real class index.
    """
    if gt.labels.shape != pred.labels.shape:
        raise ValidationError(
            f"shape mismatch: gt {gt.labels.shape} vs pred {pred.labels.shape}"
        )
    keep = gt.valid
    g = gt.labels[keep]
    p = pred.labels[keep]
    n = cm.num_classes
    if g.size:
        if g.min() < 0 or g.max() >= n:
            raise ValidationError(
                f"ground-truth label out of range for {n} classes: "
                f"{int(g.min())}..{int(g.max())}"
            )
        if p.min() < 0 or p.max() >= n:
            raise ValidationError(
                f"predicted label out of range for {n} classes at a counted pixel: "
                f"{int(p.min())}..{int(p.max())}"
            )
        np.add.at(cm.counts, (g, p), 1)
    return cm


def miou(cm: ConfusionMatrix) -> tuple[float, np.ndarray]:
    """Mean intersection-over-union and the per-class vector.

    IoU_k = tp / (row_k + col_k - tp). Classes with an empty union are
    excluded from the mean and marked NaN in the per-class vector. Raises if
    no class has any support at all.
    """
    counts = cm.counts
    tp = np.diag(counts).astype(np.float64)
    union = counts.sum(axis=1) + counts.sum(axis=0) - np.diag(counts)
    present = union > 0
    if not present.any():
        raise ValidationError("empty evaluation: no class present in the matrix")
    per_class = np.full(cm.num_classes, np.nan)
    per_class[present] = tp[present] / union[present]
    return float(per_class[present].mean()), per_class


def miou_report(cm: ConfusionMatrix) -> str:
    """JSON metric report: {miou, per_class, valid_count}; absent classes null."""
    value, per_class = miou(cm)
    return json.dumps(
        {
            "miou": value,
            "per_class": [None if np.isnan(v) else float(v) for v in per_class],
            "valid_count": cm.valid_count,
        },
        indent=2,
    )


def compare_maps(gt: LabelMap, pred: LabelMap, num_classes: int) -> ConfusionMatrix:
    """One-shot confusion matrix from a single pair of label maps."""
    return accumulate(ConfusionMatrix(num_classes), gt, pred)


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    """Fraction of counted pixels on the diagonal."""
    total = cm.valid_count
    if total == 0:
        raise ValidationError("empty evaluation: no counted pixels")
    return float(np.diag(cm.counts).sum() / total)
