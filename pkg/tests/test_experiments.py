import csv
import json

import numpy as np
import pytest

from firescan.dataset import DatasetSplit
from firescan.errors import ConfigError, DataError
from firescan.experiments import (
    AblationPlan,
    DEFAULT_SUBSETS,
    ablation_columns,
    benchmark_inference,
    evaluate_rule_on_split,
    run_ablation,
    run_baseline_comparison,
    timing_table,
    write_ablation_csv,
    write_ablation_json,
    write_report_table,
)
from firescan.models import TrainConfig, build_classifier, build_segmenter
from firescan.synthgen import generate_patch_set
from handnets import band10_classifier, band10_segmenter

FAST = TrainConfig(epochs=2, batch_size=8, val_fraction=0)


@pytest.fixture(scope="module")
def tiny():
    return generate_patch_set(12, size=32, positive_fraction=0.5, seed=1), \
        generate_patch_set(8, size=32, positive_fraction=0.5, seed=2)


def test_plan_parsing():
    plan = AblationPlan.from_text("5,3,2;1-12")
    assert plan.subsets == [("5,3,2", (5, 3, 2)), ("1-12", tuple(range(1, 13)))]
    assert len(AblationPlan(list(DEFAULT_SUBSETS)).subsets) == 8
    for bad in (dict(subsets=["13"]), dict(subsets=[("x", (2, 2))]), dict(subsets=[], seeds=()),
                dict(subsets=[], kinds=("gan",))):
        with pytest.raises(ConfigError):
            AblationPlan(**bad)


def test_empty_plan_is_empty_table(tiny):
    assert run_ablation(AblationPlan([]), *tiny) == []


def test_single_seed_has_no_std(tiny, tmp_path):
    rows = run_ablation(AblationPlan(["10", "5,3,2"], FAST, seeds=(0,)), *tiny)
    assert [r.channels for r in rows] == ["10", "5,3,2"]
    assert all(r.n_seeds == 1 and "recall_std" not in r.to_dict() for r in rows)
    write_ablation_csv(rows, tmp_path / "a.csv")
    with open(tmp_path / "a.csv") as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["channels", "accuracy", "precision", "recall"]
    assert len(table) == 3


def test_seed_averaging_and_determinism(tiny, tmp_path):
    plan = AblationPlan(["10,9,2"], FAST, seeds=(0, 1))
    a = run_ablation(plan, *tiny)
    b = run_ablation(plan, *tiny)
    assert [r.to_dict() for r in a] == [r.to_dict() for r in b]
    (row,) = a
    accs = [s["accuracy"] for s in row.per_seed]
    assert row.accuracy == pytest.approx(np.mean(accs)) and row.std["accuracy"] == pytest.approx(np.std(accs))
    assert "accuracy_std" in row.to_dict()
    write_ablation_json(a, tmp_path / "a.json")
    assert len(json.loads((tmp_path / "a.json").read_text())[0]["per_seed"]) == 2


def test_ablation_rejects_missing_bands(tiny):
    train_split, test_split = tiny
    from firescan.dataset import select_channels
    narrow = select_channels(train_split, [10, 9])
    with pytest.raises(ConfigError):
        run_ablation(AblationPlan(["2"], FAST), narrow, test_split)
    with pytest.raises(DataError):
        run_ablation(AblationPlan(["2"], FAST), DatasetSplit([]), test_split)


def test_columns():
    assert ablation_columns("segmenter") == ["channels", "accuracy", "precision", "recall", "iou"]
    assert ablation_columns("classifier", 3)[-1] == "recall_std"


def _clause1_split(seed=0):
    """Synthetic patches whose fire pixels satisfy the first rule clause under the default mapping."""
    ds = generate_patch_set(6, size=32, positive_fraction=0.5, seed=seed)
    for patch, mask in ds.patches:
        fire = mask.data.astype(bool)
        patch.data[6][fire] = 0.1  # rule band 5 -> AMS band 7
        patch.data[9][fire] = np.maximum(patch.data[9][fire], 0.7)  # rule band 7 -> AMS band 10
    return ds


def test_rule_recall_on_constructed_truth():
    r = evaluate_rule_on_split(_clause1_split())
    assert r.recall == 1.0 and r.counts.tp > 0


def test_rule_on_zero_imagery():
    ds = _clause1_split()
    for patch, _ in ds.patches:
        patch.data[...] = 0.0
    r = evaluate_rule_on_split(ds)
    assert r.counts.tp + r.counts.fp == 0 and r.precision is None


def test_baseline_table(tmp_path):
    ds = _clause1_split(3)
    assert len(run_baseline_comparison(ds)) == 1
    rows = run_baseline_comparison(ds, band10_classifier(), band10_segmenter())
    assert [r.name for r in rows] == ["schroeder rule", "classifier", "segmenter", "two-tier"]
    assert rows[2].iou == 1.0 and rows[3].iou == 1.0
    write_report_table(rows, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert len(lines) == 5 and lines[0].startswith("method,name,accuracy")
    write_report_table(rows, tmp_path / "t.json")
    assert [r["method"] for r in json.loads((tmp_path / "t.json").read_text())][-1] == "two-tier"


def test_benchmark_validation():
    net = build_classifier()
    with pytest.raises(ConfigError):
        benchmark_inference([net], n_patches=0)
    with pytest.raises(ConfigError):
        benchmark_inference([net], warmup=0)


def test_segmenter_slower_than_classifier():
    stats = benchmark_inference([build_classifier(), build_segmenter()], n_patches=3, size=128)
    assert set(stats) == {"classifier", "segmenter"}
    assert stats["segmenter"].mean_ms > stats["classifier"].mean_ms
    rows = timing_table(stats)
    assert rows[0]["stage"] == "classifier" and rows[0]["n"] == 3 and rows[0]["fps"] > 0
