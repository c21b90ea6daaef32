"""Soft-overlap evaluation metrics and dataset-level aggregation.

All formulas operate directly on soft values in [0, 1]; predictions are never
binarized. Undefined denominators yield an explicit None ("N/A" in reports),
never a silent zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, ParameterError

METRIC_NAMES = ("dice", "precision", "recall", "ver", "aver")

# Column order used by the text report.
TABLE_COLUMNS = ("Dice", "Precision", "Recall", "MVER", "MAVER", "Pearson's r")


def _prep(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def dice(x, y) -> Optional[float]:
    """2*sum(x*y) / (sum(x) + sum(y)); None when both masks are empty."""
    x, y = _prep(x, y)
    denom = x.sum() + y.sum()
    if denom == 0.0:
        return None
    return float(2.0 * (x * y).sum() / denom)


def precision(x, y) -> Optional[float]:
    """sum(x*y) / sum(x); None when the prediction is empty."""
    x, y = _prep(x, y)
    denom = x.sum()
    if denom == 0.0:
        return None
    return float((x * y).sum() / denom)


def recall(x, y) -> Optional[float]:
    """sum(x*y) / sum(y); None when the reference is empty."""
    x, y = _prep(x, y)
    denom = y.sum()
    if denom == 0.0:
        return None
    return float((x * y).sum() / denom)


def volume_error_rate(x, y) -> Optional[float]:
    """(sum(x) - sum(y)) / sum(y), signed; None when the reference is empty."""
    x, y = _prep(x, y)
    denom = y.sum()
    if denom == 0.0:
        return None
    return float((x.sum() - denom) / denom)


def absolute_volume_error_rate(x, y) -> Optional[float]:
    ver = volume_error_rate(x, y)
    return None if ver is None else abs(ver)


def pearson_r(xs: Sequence[float], ys: Sequence[float]) -> Optional[float]:
    """Sample Pearson correlation; None for <2 points or zero variance."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape:
        raise DimensionError(f"length mismatch: {xs.shape} vs {ys.shape}")
    if xs.size < 2:
        return None
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    sx = np.sqrt((xc * xc).sum())
    sy = np.sqrt((yc * yc).sum())
    if sx == 0.0 or sy == 0.0:
        return None
    return float(np.clip((xc * yc).sum() / (sx * sy), -1.0, 1.0))


@dataclass
class SampleMetrics:
    """Per-sample metric record; None marks an undefined value."""

    id: str
    dice: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    ver: Optional[float]
    aver: Optional[float]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "dice": self.dice,
            "precision": self.precision,
            "recall": self.recall,
            "ver": self.ver,
            "aver": self.aver,
        }


@dataclass
class MetricsReport:
    """Per-sample records plus mean/sd aggregates and the volume correlation.

    Standard deviations are the population (divide-by-n) values. Aggregates
    skip undefined samples; if every sample is undefined the aggregate itself
    is None.
    """

    per_sample: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    pearson_r: Optional[float] = None
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "n": len(self.per_sample),
            "note": self.note,
            "aggregate": self.aggregate,
            "pearson_r": self.pearson_r,
            "per_sample": [s.to_dict() for s in self.per_sample],
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        samples = [SampleMetrics(**s) for s in d.get("per_sample", [])]
        return cls(
            per_sample=samples,
            aggregate=d.get("aggregate", {}),
            pearson_r=d.get("pearson_r"),
            note=d.get("note", ""),
        )

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))


def _mean_sd(values) -> Optional[dict]:
    defined = [v for v in values if v is not None]
    if not defined:
        return None
    arr = np.asarray(defined, dtype=np.float64)
    return {"mean": float(arr.mean()), "sd": float(arr.std()), "n": len(defined)}


def evaluate(pairs: Sequence, ids: Optional[Sequence[str]] = None, note: str = "") -> MetricsReport:
    """Score a list of (soft prediction, reference mask) pairs.

    Pearson's r correlates total predicted volume with total reference volume
    across the dataset (soft sums, consistent with the non-binarized metrics).
    """
    pairs = list(pairs)
    if not pairs:
        raise ParameterError("evaluate needs at least one (prediction, mask) pair")
    if ids is None:
        ids = [f"sample{i:04d}" for i in range(len(pairs))]
    if len(ids) != len(pairs):
        raise ParameterError("ids and pairs lengths differ")

    records = []
    pred_volumes = []
    true_volumes = []
    for sample_id, (x, y) in zip(ids, pairs):
        x, y = _prep(x, y)
        records.append(
            SampleMetrics(
                id=str(sample_id),
                dice=dice(x, y),
                precision=precision(x, y),
                recall=recall(x, y),
                ver=volume_error_rate(x, y),
                aver=absolute_volume_error_rate(x, y),
            )
        )
        pred_volumes.append(float(x.sum()))
        true_volumes.append(float(y.sum()))

    aggregate = {
        name: _mean_sd([getattr(r, name) for r in records]) for name in METRIC_NAMES
    }
    r = pearson_r(pred_volumes, true_volumes) if len(pairs) >= 2 else None
    return MetricsReport(per_sample=records, aggregate=aggregate, pearson_r=r, note=note)


def _fmt(stats: Optional[dict]) -> str:
    if stats is None:
        return "N/A"
    return f"{stats['mean']:.3f} +- {stats['sd']:.3f}"


def format_table(report: MetricsReport, label: str = "model") -> str:
    """Aligned-column summary, one row, column order as in the result tables."""
    agg = report.aggregate
    cells = [
        _fmt(agg.get("dice")),
        _fmt(agg.get("precision")),
        _fmt(agg.get("recall")),
        _fmt(agg.get("ver")),
        _fmt(agg.get("aver")),
        "N/A" if report.pearson_r is None else f"{report.pearson_r:.3f}",
    ]
    width = max(len(c) for c in cells + list(TABLE_COLUMNS)) + 2
    name_w = max(len(label), 6) + 2
    lines = []
    if report.note:
        lines.append(f"# {report.note}")
    lines.append("".ljust(name_w) + "".join(c.rjust(width) for c in TABLE_COLUMNS))
    lines.append(label.ljust(name_w) + "".join(c.rjust(width) for c in cells))
    return "\n".join(lines)


def format_csv(report: MetricsReport) -> str:
    """Per-sample rows (empty cell for undefined) plus a trailing mean row."""
    def cell(v):
        return "" if v is None else f"{v:.10g}"

    lines = ["id,dice,precision,recall,ver,aver"]
    for s in report.per_sample:
        lines.append(
            ",".join([s.id] + [cell(getattr(s, name)) for name in METRIC_NAMES])
        )
    agg = report.aggregate
    lines.append(
        ",".join(
            ["mean"]
            + [cell(agg[name]["mean"] if agg.get(name) else None) for name in METRIC_NAMES]
        )
    )
    return "\n".join(lines)
