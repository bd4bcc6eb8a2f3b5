"""Spectral ablation, baseline comparison and inference benchmarks."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import DatasetSplit, parse_channels
from .errors import ConfigError, DataError
from .metrics import EvalReport, REPORT_COLUMNS, confusion, timing_stats
from .models import Network, NetworkSpec, TrainConfig, build_network, evaluate, train
from .pipeline import TwoTierModel
from .rules import SCHROEDER_RULE, BandMapping, evaluate_rule, parse_rule

METRIC_NAMES = ("accuracy", "precision", "recall", "iou")
# channel subsets studied in the reference ablation tables
DEFAULT_SUBSETS = ("11,9,2", "10,9,2", "9", "10", "11", "12", "1-8", "5,3,2")


@dataclass
class AblationPlan:
    subsets: list  # [(name, (band, ...)), ...]
    train_config: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple = (0, 1, 2)
    kinds: tuple = ("classifier",)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("ablation needs at least one seed")
        for kind in self.kinds:
            if kind not in ("classifier", "segmenter"):
                raise ConfigError(f"unknown network kind {kind!r}")
        norm = []
        for item in self.subsets:
            if isinstance(item, str):
                name, bands = item, parse_channels(item)
            else:
                name, bands = item
            bands = tuple(int(b) for b in bands)
            if not bands or len(set(bands)) != len(bands) or not all(1 <= b <= 12 for b in bands):
                raise ConfigError(f"invalid channel subset {name!r}: {bands}")
            norm.append((name, bands))
        self.subsets = norm

    @classmethod
    def from_text(cls, text: str, **kw) -> "AblationPlan":
        """``"5,3,2;1-12"`` -> two subsets."""
        parts = [p.strip() for p in text.split(";") if p.strip()]
        return cls(parts, **kw)


@dataclass
class AblationRow:
    channels: str
    kind: str
    accuracy: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    iou: Optional[float]
    n_seeds: int
    std: dict = field(default_factory=dict)
    per_seed: list = field(default_factory=list)

    def to_dict(self, with_std: bool = True) -> dict:
        d = {"channels": self.channels, "kind": self.kind}
        for k in METRIC_NAMES:
            d[k] = getattr(self, k)
        if with_std and self.n_seeds > 1:
            for k in METRIC_NAMES:
                d[f"{k}_std"] = self.std.get(k)
        return d


def _mean_std(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


def run_ablation(plan: AblationPlan, train_split: DatasetSplit, test_split: DatasetSplit,
                 val_split: Optional[DatasetSplit] = None) -> list:
    """Train one network per (kind, subset, seed) and average test metrics over seeds.

    Rows are ordered by kind, then by subset as listed in the plan.
    """
    if not plan.subsets:
        return []
    if not len(train_split) or not len(test_split):
        raise DataError("ablation needs non-empty train and test splits")
    available = set(train_split.patches[0][0].channels)
    for name, bands in plan.subsets:
        missing = set(bands) - available
        if missing:
            raise ConfigError(f"subset {name!r} uses bands {sorted(missing)} absent from the data")
    rows = []
    for kind in plan.kinds:
        for name, bands in plan.subsets:
            reports = []
            for seed in plan.seeds:
                spec = NetworkSpec.for_channels(kind, bands)
                net = build_network(spec, seed=seed)
                cfg = replace(plan.train_config, seed=seed, channels=bands)
                train(net, train_split, cfg, val_split=val_split)
                reports.append(evaluate(net, test_split, cfg.threshold, timed=False))
            stats = {k: _mean_std([getattr(r, k) for r in reports]) for k in METRIC_NAMES}
            rows.append(AblationRow(
                channels=name,
                kind=kind,
                n_seeds=len(reports),
                std={k: s for k, (_, s) in stats.items()},
                per_seed=[r.to_dict() for r in reports],
                **{k: m for k, (m, _) in stats.items()},
            ))
    return rows


def ablation_columns(kind: str, n_seeds: int = 1) -> list:
    metrics = ["accuracy", "precision", "recall"] + (["iou"] if kind == "segmenter" else [])
    cols = ["channels"] + metrics
    if n_seeds > 1:
        cols += [f"{m}_std" for m in metrics]
    return cols


def write_ablation_csv(rows, path, kind: str = "classifier") -> None:
    """One table per network kind; IoU is only reported for segmentation."""
    rows = [r for r in rows if r.kind == kind]
    n_seeds = max((r.n_seeds for r in rows), default=1)
    cols = ablation_columns(kind, n_seeds)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            d = r.to_dict()
            w.writerow(["" if d.get(c) is None else d[c] for c in cols])


def write_ablation_json(rows, path) -> None:
    Path(path).write_text(json.dumps([dict(r.to_dict(), per_seed=r.per_seed) for r in rows], indent=2))


# -- baseline comparison -----------------------------------------------------

def _rule_planes(split: DatasetSplit, expr, mapping):
    channels = list(split.patches[0][0].channels)
    x = split.images()
    planes = {}
    for rule_band in sorted(expr.bands()):
        if rule_band not in mapping:
            raise ConfigError(f"band mapping has no entry for rule band {rule_band}")
        try:
            planes[rule_band] = x[:, channels.index(mapping[rule_band])].astype(np.float64)
        except ValueError:
            raise ConfigError(f"split lacks band {mapping[rule_band]} (rule band {rule_band})") from None
    return planes


def evaluate_rule_on_split(split: DatasetSplit, rule=SCHROEDER_RULE, mapping=None,
                           name: str = "schroeder rule") -> EvalReport:
    """Pixel-level scores of a color rule on every patch of ``split``."""
    if not len(split):
        raise DataError("evaluation split is empty")
    expr = parse_rule(rule) if isinstance(rule, str) else rule
    mapping = BandMapping.schroeder_ams() if mapping is None else mapping
    t0 = time.perf_counter()
    pred = evaluate_rule(expr, _rule_planes(split, expr, mapping))
    elapsed = time.perf_counter() - t0
    counts = confusion(np.asarray(pred, dtype=bool), split.masks().astype(bool))
    return EvalReport.from_counts(counts, name=name, mean_inference_ms=elapsed * 1000.0 / len(split),
                                  patches_evaluated=len(split))


def evaluate_two_tier(model: TwoTierModel, split: DatasetSplit, name: str = "two-tier") -> EvalReport:
    """Pixel-level scores of the gated model; suppressed patches count as blank masks."""
    if not len(split):
        raise DataError("evaluation split is empty")
    counts = None
    durations = []
    for patch, mask in split.patches:
        t0 = time.perf_counter()
        pred, _ = model.infer(patch)
        durations.append(time.perf_counter() - t0)
        c = confusion(pred, mask.data)
        counts = c if counts is None else counts + c
    return EvalReport.from_counts(counts, name=name, mean_inference_ms=timing_stats(durations).mean_ms,
                                  patches_evaluated=len(split))


def run_baseline_comparison(test_split: DatasetSplit, classifier: Optional[Network] = None,
                            segmenter: Optional[Network] = None, rule=SCHROEDER_RULE, mapping=None,
                            threshold: float = 0.5) -> list:
    """Rows for the color rule and for whichever networks are supplied.

    The classifier row is patch-level; the others are pixel-level.
    """
    rows = [evaluate_rule_on_split(test_split, rule, mapping)]
    if classifier is not None:
        rows.append(evaluate(classifier, test_split, threshold, name="classifier"))
    if segmenter is not None:
        rows.append(evaluate(segmenter, test_split, threshold, name="segmenter"))
    if classifier is not None and segmenter is not None:
        rows.append(evaluate_two_tier(TwoTierModel(classifier, segmenter, threshold), test_split))
    return rows


def write_report_table(reports, path) -> None:
    """CSV (or JSON when ``path`` ends in .json) with a leading method column."""
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps([r.to_dict() | {"method": r.name} for r in reports], indent=2))
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", *REPORT_COLUMNS])
        for r in reports:
            row = r.row()
            w.writerow([r.name] + ["" if row[c] is None else row[c] for c in REPORT_COLUMNS])


# -- benchmarks --------------------------------------------------------------

def benchmark_inference(networks, n_patches: int = 20, warmup: int = 1, size: int = 256,
                        seed: int = 0) -> dict:
    """Per-patch inference timing for each network on random inputs.

    ``networks`` maps a stage name to a Network (a sequence is keyed by kind).
    Warmup passes are run first and excluded.
    """
    if n_patches < 1:
        raise ConfigError("n_patches must be >= 1")
    if warmup < 1:
        raise ConfigError("warmup must be >= 1")
    if not isinstance(networks, dict):
        networks = {net.kind: net for net in networks}
    rng = np.random.default_rng(seed)
    out = {}
    for name, net in networks.items():
        x = rng.random((n_patches, len(net.channels), size, size), dtype=np.float32)
        for i in range(warmup):
            net.forward(x[i % n_patches:i % n_patches + 1])
        samples = []
        for i in range(n_patches):
            t0 = time.perf_counter()
            net.forward(x[i:i + 1])
            samples.append(time.perf_counter() - t0)
        out[name] = timing_stats(samples)
    return out


def timing_table(stats: dict) -> list:
    rows = []
    for name, s in stats.items():
        rows.append({"stage": name, **s.to_dict()})
    return rows
