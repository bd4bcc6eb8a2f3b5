"""Confusion counting, accuracy/precision/recall/IoU, and timing statistics.

Undefined metrics (zero denominator) are reported as ``None``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


def _as_bool(name, arr):
    arr = np.asarray(arr)
    if arr.dtype != bool:
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} must be binary")
        arr = arr.astype(bool)
    return arr


def confusion(pred, truth) -> ConfusionCounts:
    pred = _as_bool("pred", pred)
    truth = _as_bool("truth", truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"pred shape {pred.shape} != truth shape {truth.shape}")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


class StreamingConfusion:
    """Running confusion totals over chunks."""

    def __init__(self):
        self.counts = ConfusionCounts()

    def update(self, pred, truth) -> ConfusionCounts:
        c = confusion(pred, truth)
        self.counts = self.counts + c
        return c


def _ratio(num, den):
    return num / den if den else None


def metrics_from_counts(counts: ConfusionCounts) -> dict:
    return {
        "accuracy": _ratio(counts.tp + counts.tn, counts.n),
        "precision": _ratio(counts.tp, counts.tp + counts.fp),
        "recall": _ratio(counts.tp, counts.tp + counts.fn),
        "iou": _ratio(counts.tp, counts.tp + counts.fp + counts.fn),
    }


def macro_metrics(per_item) -> dict:
    """Average per-item metrics, skipping undefined values."""
    out = {}
    rows = [metrics_from_counts(c) for c in per_item]
    for key in ("accuracy", "precision", "recall", "iou"):
        vals = [r[key] for r in rows if r[key] is not None]
        out[key] = float(np.mean(vals)) if vals else None
    return out


@dataclass(frozen=True)
class TimingStats:
    n: int
    mean_ms: float
    p50_ms: float
    p95_ms: float
    max_ms: float

    @property
    def fps(self) -> float:
        return 1000.0 / self.mean_ms if self.mean_ms > 0 else float("inf")

    def to_dict(self) -> dict:
        return {**asdict(self), "fps": self.fps}


def timing_stats(samples_s) -> TimingStats:
    """Summarize durations given in seconds; results are in milliseconds."""
    arr = np.asarray(list(samples_s), dtype=np.float64) * 1000.0
    if arr.size == 0:
        raise ConfigError("timing_stats needs at least one sample")
    if (arr < 0).any():
        raise ConfigError("durations must be non-negative")
    return TimingStats(
        n=int(arr.size),
        mean_ms=float(arr.mean()),
        p50_ms=float(np.percentile(arr, 50)),
        p95_ms=float(np.percentile(arr, 95)),
        max_ms=float(arr.max()),
    )


REPORT_COLUMNS = ("name", "accuracy", "precision", "recall", "iou", "mean_inference_ms",
                  "patches_evaluated")


@dataclass
class EvalReport:
    accuracy: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    iou: Optional[float]
    mean_inference_ms: Optional[float] = None
    patches_evaluated: int = 0
    counts: ConfusionCounts = field(default_factory=ConfusionCounts)
    name: str = ""

    @classmethod
    def from_counts(cls, counts, name="", mean_inference_ms=None, patches_evaluated=0):
        return cls(**metrics_from_counts(counts), mean_inference_ms=mean_inference_ms,
                   patches_evaluated=patches_evaluated, counts=counts, name=name)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in REPORT_COLUMNS}

    def to_dict(self) -> dict:
        d = self.row()
        d["counts"] = asdict(self.counts)
        return d


def write_reports_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow(["" if v is None else v for v in r.row().values()])


def write_reports_json(reports, path) -> None:
    Path(path).write_text(json.dumps([r.to_dict() for r in reports], indent=2))
