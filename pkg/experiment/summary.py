"""Aggregate run records into summary tables.

``summary.csv``  condition, method, fraction, metric, n, mean, sd, min, max
``table.csv``    one row per metric, one column per condition ("mean ± sd" in %)
``series.csv``   method, fraction, metric, n, mean, sd (fraction experiments only)
``summary.json`` the long table plus the config hash
"""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Union

import pandas as pd

if TYPE_CHECKING:
    from experiment.runner import RunRecord

METRICS = ("accuracy", "precision", "recall", "f1")
METRIC_LABELS = {
    "accuracy": "Accuracy",
    "precision": "Precision",
    "recall": "Recall",
    "f1": "F1 score",
}
KEYS = ["condition", "method", "fraction"]


@dataclass(frozen=True)
class Summary:
    config_hash: str
    kind: str
    table: pd.DataFrame
    wide: pd.DataFrame
    series: Optional[pd.DataFrame]


def _check_consistent(records: Sequence[RunRecord]) -> None:
    if not records:
        raise ValueError("nothing to summarize: no run records")
    first = records[0]
    conditions = [c.condition for c in first.conditions]
    for record in records[1:]:
        if (record.config_hash, record.kind) != (first.config_hash, first.kind):
            raise ValueError(
                f"records mix configs {first.config_hash[:12]} and {record.config_hash[:12]}"
            )
        if [c.condition for c in record.conditions] != conditions:
            raise ValueError(
                f"repetition {record.repetition} has conditions that differ from "
                f"repetition {first.repetition}"
            )


def long_frame(records: Sequence[RunRecord]) -> pd.DataFrame:
    rows = [
        {
            "repetition": record.repetition,
            "condition": c.condition,
            "method": c.method,
            "fraction": c.fraction,
            **{metric: getattr(c, metric) for metric in METRICS},
        }
        for record in records
        for c in record.conditions
    ]
    return pd.DataFrame(rows)


def _aggregate(frame: pd.DataFrame, keys: list[str]) -> pd.DataFrame:
    melted = frame.melt(id_vars=keys, value_vars=list(METRICS), var_name="metric")
    grouped = melted.groupby([*keys, "metric"], sort=False, dropna=False)["value"]
    table = grouped.agg(["count", "mean", "std", "min", "max"]).reset_index()
    table = table.rename(columns={"count": "n", "std": "sd"})
    # a single repetition has no spread
    table["sd"] = table["sd"].fillna(0.0)
    return table


def summarize(records: Sequence[RunRecord]) -> Summary:
    """Per-condition mean, sd (ddof=1), min and max over repetitions."""
    _check_consistent(records)
    ordered = sorted(records, key=lambda r: (r.config_hash, r.seed, r.repetition))
    frame = long_frame(ordered)
    table = _aggregate(frame, KEYS)

    conditions = list(dict.fromkeys(frame["condition"]))
    cells = table.assign(
        cell=[f"{100 * m:.2f} ± {100 * s:.2f}" for m, s in zip(table["mean"], table["sd"])]
    )
    wide = cells.pivot(index="metric", columns="condition", values="cell")
    wide = wide.reindex(index=list(METRICS), columns=conditions)
    wide.index = [METRIC_LABELS[m] for m in wide.index]
    wide.index.name = "metric"
    wide.columns.name = None

    series = None
    swept = frame.dropna(subset=["method", "fraction"])
    if not swept.empty:
        series = _aggregate(swept, ["method", "fraction"])[
            ["method", "fraction", "metric", "n", "mean", "sd"]
        ]
    return Summary(ordered[0].config_hash, ordered[0].kind, table, wide, series)


def write_summary(summary: Summary, out_dir: Union[str, Path]) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "summary.csv", out_dir / "table.csv", out_dir / "summary.json"]
    summary.table.to_csv(paths[0], index=False)
    summary.wide.to_csv(paths[1])
    payload = {
        "config_hash": summary.config_hash,
        "kind": summary.kind,
        "rows": json.loads(summary.table.to_json(orient="records")),
    }
    paths[2].write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    if summary.series is not None:
        paths.append(out_dir / "series.csv")
        summary.series.to_csv(paths[-1], index=False)
    return paths
