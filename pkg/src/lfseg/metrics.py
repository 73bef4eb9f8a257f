"""Label-wise IoU and mIoU from a global confusion matrix.

Rows index ground truth, columns index prediction. The 'other' class is
excluded from the mean; scored classes absent from both truth and prediction
have an undefined IoU and are excluded from the mean rather than counted as 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import DEFAULT_NOMENCLATURE, N_CLASSES, LabelMask, Nomenclature


class ConfusionMatrix:
    def __init__(self, n_classes: int = N_CLASSES,
                 counts: Optional[np.ndarray] = None):
        if counts is None:
            counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (n_classes, n_classes):
            raise ValueError(
                f"counts must be [{n_classes},{n_classes}], got {counts.shape}"
            )
        if (counts < 0).any():
            raise ValueError("counts must be nonnegative")
        self.n_classes = n_classes
        self.counts = counts

    def accumulate(self, pred: LabelMask, truth: LabelMask) -> "ConfusionMatrix":
        p = pred.labels if isinstance(pred, LabelMask) else np.asarray(pred)
        t = truth.labels if isinstance(truth, LabelMask) else np.asarray(truth)
        if p.shape != t.shape:
            raise ValueError(f"shape mismatch: pred {p.shape} vs truth {t.shape}")
        if p.size and (p.min() < 0 or p.max() >= self.n_classes
                       or t.min() < 0 or t.max() >= self.n_classes):
            raise ValueError("labels outside the class range")
        flat = t.astype(np.int64).ravel() * self.n_classes + p.astype(np.int64).ravel()
        self.counts += np.bincount(
            flat, minlength=self.n_classes ** 2
        ).reshape(self.n_classes, self.n_classes)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.n_classes != self.n_classes:
            raise ValueError("class-count mismatch")
        self.counts += other.counts
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_normalized(self) -> np.ndarray:
        """Per-truth-class distribution over predictions; zero rows stay zero."""
        sums = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        out = np.divide(self.counts, sums, out=np.zeros_like(self.counts, dtype=np.float64),
                        where=sums > 0)
        return out

    def copy(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.n_classes, self.counts.copy())


@dataclass(frozen=True)
class IoUReport:
    """Per-class IoU over the scored classes plus their mean.

    Entries are None where neither truth nor prediction contains the class;
    those classes are excluded from the mean and listed in `undefined`.
    """

    per_label: tuple[Optional[float], ...]
    miou: float
    class_names: tuple[str, ...]
    undefined: tuple[str, ...] = ()

    def defined_items(self) -> list[tuple[str, float]]:
        return [(n, v) for n, v in zip(self.class_names, self.per_label)
                if v is not None]

    def to_dict(self) -> dict:
        return {
            "per_label": {n: v for n, v in zip(self.class_names, self.per_label)},
            "miou": self.miou,
            "undefined": list(self.undefined),
        }


def iou_report(cm: ConfusionMatrix,
               nomenclature: Nomenclature = DEFAULT_NOMENCLATURE) -> IoUReport:
    if cm.n_classes != len(nomenclature.classes):
        raise ValueError("confusion matrix does not match the nomenclature")
    counts = cm.counts
    row = counts.sum(axis=1)
    col = counts.sum(axis=0)
    per_label: list[Optional[float]] = []
    names: list[str] = []
    undefined: list[str] = []
    values: list[float] = []
    for c in nomenclature.scored_indices:
        names.append(nomenclature.classes[c])
        denom = int(row[c] + col[c] - counts[c, c])
        if denom == 0:
            per_label.append(None)
            undefined.append(nomenclature.classes[c])
        else:
            v = float(counts[c, c] / denom)
            per_label.append(v)
            values.append(v)
    if not values:
        raise ValueError("no scored class present in truth or prediction")
    return IoUReport(
        per_label=tuple(per_label),
        miou=float(np.mean(values)),
        class_names=tuple(names),
        undefined=tuple(undefined),
    )


def accumulate(cm: ConfusionMatrix, pred: LabelMask, truth: LabelMask) -> ConfusionMatrix:
    return cm.accumulate(pred, truth)
