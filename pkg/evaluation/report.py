"""Evaluation reports and embedding export.

File formats (field order is fixed):

``<name>.json``
    class_names, accuracy, macro {precision, recall, f1}, weighted {precision,
    recall, f1}, per_class [{class, precision, recall, f1, support, auc}],
    confusion [[...]], roc {class: {fpr, tpr, thresholds}}. A missing AUC is
    ``null``; the leading ROC threshold (above every score) is ``null`` too.
``<name>.confusion.csv``
    ``true`` followed by one column per predicted class name.
``<name>.roc.csv``
    class, threshold, fpr, tpr; one row per ROC point.
embedding export (CSV)
    pair_id, domain, label, e0 .. e{d-1}; label is empty for unlabeled windows
    and values carry 9 significant digits.
"""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import pandas as pd
from loguru import logger

from data.windows import LabeledWindows
from evaluation.metrics import (
    Average,
    ConfusionMatrix,
    OvrMetrics,
    RocCurve,
    confusion,
    ovr_metrics,
    roc_auc,
)
from model.convlstm import ModelParams, classify_batch, embed_batch

EMBEDDING_FLOAT_FORMAT = "%.9g"


def _finite_or_none(values: np.ndarray) -> list[Optional[float]]:
    return [float(v) if math.isfinite(v) else None for v in np.asarray(values, dtype=np.float64)]


@dataclass(frozen=True)
class MetricsReport:
    class_names: tuple[str, ...]
    accuracy: float
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    support: tuple[int, ...]
    macro: dict[str, float]
    weighted: dict[str, float]
    confusion: ConfusionMatrix
    roc: tuple[RocCurve, ...]

    @property
    def macro_f1(self) -> float:
        return self.macro["f1"]

    @property
    def auc(self) -> tuple[Optional[float], ...]:
        return tuple(curve.auc for curve in self.roc)

    def to_dict(self) -> dict[str, Any]:
        per_class = [
            {
                "class": name,
                "precision": self.precision[k],
                "recall": self.recall[k],
                "f1": self.f1[k],
                "support": self.support[k],
                "auc": self.roc[k].auc,
            }
            for k, name in enumerate(self.class_names)
        ]
        return {
            "class_names": list(self.class_names),
            "accuracy": self.accuracy,
            "macro": dict(self.macro),
            "weighted": dict(self.weighted),
            "per_class": per_class,
            "confusion": self.confusion.counts.tolist(),
            "roc": {
                name: {
                    "fpr": curve.fpr.tolist(),
                    "tpr": curve.tpr.tolist(),
                    "thresholds": _finite_or_none(curve.thresholds),
                }
                for name, curve in zip(self.class_names, self.roc)
            },
        }

    def confusion_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.confusion.counts, columns=list(self.class_names))
        frame.insert(0, "true", list(self.class_names))
        return frame

    def roc_frame(self) -> pd.DataFrame:
        rows = [
            {"class": name, "threshold": threshold, "fpr": fpr, "tpr": tpr}
            for name, curve in zip(self.class_names, self.roc)
            for threshold, fpr, tpr in zip(curve.thresholds, curve.fpr, curve.tpr)
        ]
        return pd.DataFrame(rows, columns=["class", "threshold", "fpr", "tpr"])


def _summary(metrics: OvrMetrics) -> dict[str, float]:
    return {
        "precision": metrics.mean_precision,
        "recall": metrics.mean_recall,
        "f1": metrics.mean_f1,
    }


def report_from_scores(
    probabilities: np.ndarray, truths: np.ndarray, class_names: Sequence[str]
) -> MetricsReport:
    """Metrics of class-probability rows ``probabilities`` against ``truths``."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.int64)
    if len(truths) == 0:
        raise ValueError("cannot evaluate an empty test set")
    num_classes = len(class_names)
    if probabilities.shape != (len(truths), num_classes):
        raise ValueError(
            f"expected scores shaped ({len(truths)}, {num_classes}), got {probabilities.shape}"
        )
    cm = confusion(np.argmax(probabilities, axis=1), truths, num_classes)
    macro = ovr_metrics(cm, Average.MACRO)
    weighted = ovr_metrics(cm, Average.WEIGHTED)
    return MetricsReport(
        class_names=tuple(class_names),
        accuracy=macro.accuracy,
        precision=macro.precision,
        recall=macro.recall,
        f1=macro.f1,
        support=macro.support,
        macro=_summary(macro),
        weighted=_summary(weighted),
        confusion=cm,
        roc=tuple(roc_auc(probabilities, truths, k) for k in range(num_classes)),
    )


def evaluate(model: ModelParams, data: LabeledWindows) -> MetricsReport:
    """Classify every window in archive order and score the predictions."""
    if len(data) == 0:
        raise ValueError("cannot evaluate an empty test set")
    if data.num_classes != model.meta.num_classes:
        raise ValueError(
            f"test set has {data.num_classes} classes, model has {model.meta.num_classes}"
        )
    report = report_from_scores(classify_batch(model, data.windows), data.labels, data.class_names)
    logger.info(
        f"Evaluated {len(data)} windows: accuracy {report.accuracy:.4f}, "
        f"macro F1 {report.macro_f1:.4f}"
    )
    return report


def write_report(report: MetricsReport, path: Union[str, Path]) -> list[Path]:
    """Write ``<path>`` (JSON) plus the confusion and ROC CSVs beside it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    confusion_path = path.with_suffix(".confusion.csv")
    roc_path = path.with_suffix(".roc.csv")
    report.confusion_frame().to_csv(confusion_path, index=False)
    report.roc_frame().to_csv(roc_path, index=False)
    return [path, confusion_path, roc_path]


# ============================================================================
# Embedding export
# ============================================================================


def embedding_frame(
    embeddings: np.ndarray,
    pair_ids: np.ndarray,
    domain: str,
    labels: Optional[Sequence[Optional[str]]] = None,
) -> pd.DataFrame:
    n, dim = embeddings.shape
    if len(pair_ids) != n or (labels is not None and len(labels) != n):
        raise ValueError("pair ids and labels need one entry per embedding")
    frame = pd.DataFrame(
        {
            "pair_id": np.asarray(pair_ids, dtype=np.int64),
            "domain": [domain] * n,
            "label": pd.Series(
                [None] * n if labels is None else list(labels), dtype="string"
            ),
        }
    )
    values = pd.DataFrame(
        np.asarray(embeddings, dtype=np.float32), columns=[f"e{i}" for i in range(dim)]
    )
    return pd.concat([frame, values], axis=1)


def export_embeddings(
    model: ModelParams,
    windows: np.ndarray,
    path: Union[str, Path],
    pair_ids: np.ndarray,
    domain: str,
    labels: Optional[Sequence[Optional[str]]] = None,
) -> Path:
    """Write one CSV row of embedder output per window for external projection tools."""
    path = Path(path)
    frame = embedding_frame(embed_batch(model, windows), pair_ids, domain, labels)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=EMBEDDING_FLOAT_FORMAT)
    logger.info(f"Exported {len(frame)} {domain} embeddings to {path}")
    return path


def read_embeddings(path: Union[str, Path]) -> pd.DataFrame:
    """Load an embedding export; empty labels come back as <NA>."""
    return pd.read_csv(
        path,
        dtype={"pair_id": np.int64, "domain": str, "label": "string"},
        keep_default_na=False,
        na_values={"label": [""]},
    )
