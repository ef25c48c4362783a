"""Confusion matrices and Matthews correlation, pooled across folds.

Cross-validated results are aggregated by pooling all validation predictions
into one confusion matrix and computing MCC once on the pool. Averaging
per-fold MCCs is not the same number (folds with different class mixes weight
differently) and is deliberately not offered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInput


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[true_class][predicted_class], shape (C, C)."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] == 0:
            raise InvalidInput("confusion matrix must be square and non-empty")
        if np.any(c < 0):
            raise InvalidInput("confusion matrix entries must be non-negative")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(preds: Sequence[int], labels: Sequence[int], num_classes: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise InvalidInput("preds and labels must be equal-length 1-D sequences")
    if preds.size and (preds.min() < 0 or preds.max() >= num_classes):
        raise InvalidInput("prediction index out of range")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InvalidInput("label index out of range")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


def mcc_multiclass(cm: ConfusionMatrix) -> float:
    """R_K correlation from a pooled confusion matrix; 0 when degenerate."""
    counts = cm.counts.astype(np.float64)
    s = counts.sum()
    if s == 0:
        raise InvalidInput("empty confusion matrix")
    c = np.trace(counts)
    t = counts.sum(axis=1)  # per-class true counts
    p = counts.sum(axis=0)  # per-class predicted counts
    denom_t = s * s - float(t @ t)
    denom_p = s * s - float(p @ p)
    if denom_t <= 0 or denom_p <= 0:
        return 0.0
    return float((c * s - float(t @ p)) / math.sqrt(denom_p * denom_t))


def mcc_binary(cm2: ConfusionMatrix) -> float:
    if cm2.num_classes != 2:
        raise InvalidInput("mcc_binary needs a 2x2 matrix")
    if cm2.total == 0:
        raise InvalidInput("empty confusion matrix")
    # rows are true, cols are predicted; class 1 is "positive"
    tn, fp = (int(v) for v in cm2.counts[0])
    fn, tp = (int(v) for v in cm2.counts[1])
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def binarize(cm: ConfusionMatrix, positive: int) -> ConfusionMatrix:
    """Collapse to 2x2: class ``positive`` vs everything else."""
    if not 0 <= positive < cm.num_classes:
        raise InvalidInput("positive class index out of range")
    counts = cm.counts
    tp = int(counts[positive, positive])
    fn = int(counts[positive].sum()) - tp
    fp = int(counts[:, positive].sum()) - tp
    tn = cm.total - tp - fn - fp
    return ConfusionMatrix(np.array([[tn, fp], [fn, tp]], dtype=np.int64))


def per_class_mcc(cm: ConfusionMatrix) -> np.ndarray:
    return np.array([mcc_binary(binarize(cm, k)) for k in range(cm.num_classes)])


def aggregate_folds(
    folds: Iterable[tuple[Sequence, Sequence[int], Sequence[int]]],
    num_classes: int,
) -> ConfusionMatrix:
    """Pool per-fold (ids, preds, labels) into one confusion matrix.

    Folds must not share datapoint ids; cross-validation is a partition, and
    a repeated id means the split upstream was wrong.
    """
    pooled = np.zeros((num_classes, num_classes), dtype=np.int64)
    seen: set = set()
    for ids, preds, labels in folds:
        ids = list(ids)
        if len(ids) != len(list(preds)):
            raise InvalidInput("fold ids and preds must have equal length")
        dup = seen.intersection(ids)
        if dup:
            raise InvalidInput(f"folds overlap on ids: {sorted(dup)[:5]}")
        if len(set(ids)) != len(ids):
            raise InvalidInput("duplicate ids within a fold")
        seen.update(ids)
        pooled += confusion(preds, labels, num_classes).counts
    return ConfusionMatrix(pooled)


def metrics_report(cm: ConfusionMatrix, class_names: Sequence[str] | None = None) -> dict:
    """JSON-shaped summary: multiclass MCC, per-class MCC, raw counts."""
    names = list(class_names) if class_names else [str(k) for k in range(cm.num_classes)]
    if len(names) != cm.num_classes:
        raise InvalidInput("class_names length must match matrix size")
    per = per_class_mcc(cm)
    return {
        "mcc_multiclass": mcc_multiclass(cm),
        "per_class": {name: float(v) for name, v in zip(names, per)},
        "confusion": cm.counts.tolist(),
        "n": cm.total,
    }
