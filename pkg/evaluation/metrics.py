"""One-vs-rest classification metrics.

Per-class precision, recall and F1 treat each class against all others. A
ratio whose denominator is zero is reported as 0, and such classes still count
in the macro (unweighted) mean.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional

import numpy as np
from sklearn.metrics import auc, confusion_matrix, roc_curve


class Average(str, Enum):
    MACRO = "macro"
    WEIGHTED = "weighted"


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts [K, K]; rows are true classes, columns predicted classes."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {counts.shape}")
        if counts.size and (counts.min() < 0 or not np.all(counts == np.round(counts))):
            raise ValueError("confusion counts must be non-negative integers")
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class OvrMetrics:
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    support: tuple[int, ...]
    accuracy: float
    average: Average = Average.MACRO

    def _mean(self, values: tuple[float, ...]) -> float:
        if self.average is Average.WEIGHTED:
            total = sum(self.support)
            return sum(v * s for v, s in zip(values, self.support)) / total if total else 0.0
        return sum(values) / len(values)

    @property
    def mean_precision(self) -> float:
        return self._mean(self.precision)

    @property
    def mean_recall(self) -> float:
        return self._mean(self.recall)

    @property
    def mean_f1(self) -> float:
        return self._mean(self.f1)

    def to_dict(self) -> dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "average": self.average.value,
            "precision": self.mean_precision,
            "recall": self.mean_recall,
            "f1": self.mean_f1,
        }


@dataclass(frozen=True)
class RocCurve:
    """One-vs-rest ROC of one class; ``auc`` is None when the class (or its
    complement) is absent from the truths."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: Optional[float]


def _ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    numerator = numerator.astype(np.float64)
    return np.divide(
        numerator, denominator, out=np.zeros_like(numerator), where=denominator > 0
    )


def confusion(preds: np.ndarray, truths: np.ndarray, num_classes: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if preds.shape != truths.shape or preds.ndim != 1:
        raise ValueError(f"predictions {preds.shape} and truths {truths.shape} must be equal 1-D")
    for name, values in (("prediction", preds), ("truth", truths)):
        if values.size and (values.min() < 0 or values.max() >= num_classes):
            raise ValueError(f"{name} index outside [0, {num_classes})")
    counts = confusion_matrix(truths, preds, labels=np.arange(num_classes))
    return ConfusionMatrix(counts)


def ovr_metrics(cm: ConfusionMatrix, average: Average = Average.MACRO) -> OvrMetrics:
    """Per-class one-vs-rest P/R/F1 plus accuracy = trace / total."""
    if cm.total == 0:
        raise ValueError("metrics of an empty confusion matrix")
    counts = cm.counts
    hits = np.diag(counts)
    precision = _ratio(hits, counts.sum(axis=0))
    recall = _ratio(hits, counts.sum(axis=1))
    f1 = _ratio(2 * precision * recall, precision + recall)
    return OvrMetrics(
        precision=tuple(precision.tolist()),
        recall=tuple(recall.tolist()),
        f1=tuple(f1.tolist()),
        support=tuple(counts.sum(axis=1).tolist()),
        accuracy=float(hits.sum() / cm.total),
        average=Average(average),
    )


def roc_auc(scores: np.ndarray, truths: np.ndarray, k: int) -> RocCurve:
    """ROC of class ``k`` against the rest, swept over the distinct values of
    ``scores[:, k]``; AUC by the trapezoid rule."""
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.int64)
    if scores.ndim != 2 or len(scores) != len(truths):
        raise ValueError(f"scores must be [N, K] with N={len(truths)}, got {scores.shape}")
    if not 0 <= k < scores.shape[1]:
        raise ValueError(f"class {k} outside [0, {scores.shape[1]})")
    positive = truths == k
    if positive.all() or not positive.any():
        empty = np.zeros(0)
        return RocCurve(empty, empty, empty, None)
    fpr, tpr, thresholds = roc_curve(positive, scores[:, k], drop_intermediate=False)
    return RocCurve(fpr, tpr, thresholds, float(auc(fpr, tpr)))
