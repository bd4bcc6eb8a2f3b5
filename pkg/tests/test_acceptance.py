"""Acceptance criteria 1-10. Each test records one pass/fail line for the terminal summary."""

import gc
import os
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

import conftest
from firescan.dataset import read_patch_dataset
from firescan.experiments import AblationPlan, run_ablation
from firescan.metrics import StreamingConfusion, confusion, metrics_from_counts
from firescan.models import TrainConfig, build_classifier, build_segmenter, evaluate, train
from firescan.pipeline import TwoTierModel, infer_offline, simulate_feed
from firescan.raster_io import (AMS_BANDS, MaskImage, RasterImage, load_checkpoint, read_mask,
                                read_raster, save_checkpoint, write_mask, write_raster)
from firescan.rules import SCHROEDER_RULE, PixelSpectrum, evaluate_rule, schroeder_predicates, schroeder_rule
from firescan.synthgen import SceneSpec, generate_patch_set, generate_scene
from gradcases import CASES, run_case
from oracles import naive_confusion, naive_metrics, schroeder_by_hand


def record(n, ok, detail, elapsed, limit):
    ok = bool(ok) and elapsed < limit
    status = "PASS" if ok else "FAIL"
    conftest.ACCEPTANCE_LINES.append(f"criterion {n}: {status}  {detail}  [{elapsed:.1f} s, limit {limit:g} s]")
    return ok


# -- 1 -----------------------------------------------------------------------

def test_criterion_1_gradient_suite():
    t0 = time.perf_counter()
    worst, worst_name, ops = 0.0, "", {}
    for name, fn in CASES:
        errs = run_case(name, fn)
        op = name.rsplit("-", 1)[0]
        ops[op] = ops.get(op, 0) + 1
        e = max(errs.values())
        if e > worst:
            worst, worst_name = e, name
    elapsed = time.perf_counter() - t0
    enough = min(ops.values()) >= 5
    ok = record(1, worst < 1e-3 and enough,
                f"{len(CASES)} cases over {len(ops)} ops, max rel error {worst:.2e} ({worst_name})",
                elapsed, 60)
    assert ok


# -- 2 -----------------------------------------------------------------------

def test_criterion_2_metric_oracle():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(100):
        p = rng.random((64, 64)) < rng.random()
        t = rng.random((64, 64)) < rng.random()
        s = StreamingConfusion()
        cut = int(rng.integers(1, 64))
        s.update(p[:cut], t[:cut])
        s.update(p[cut:], t[cut:])
        c = s.counts
        ref = naive_confusion(p, t)
        if (c.tp, c.fp, c.fn, c.tn) != ref or metrics_from_counts(c) != naive_metrics(*ref) \
                or c != confusion(p, t):
            mismatches += 1
    elapsed = time.perf_counter() - t0
    assert record(2, mismatches == 0, f"100 mask pairs 64x64, {mismatches} mismatches", elapsed, 10)


# -- 3 -----------------------------------------------------------------------

_BOUNDARY_PIXELS = [
    # (predicate, ">" or "<", pixel builder taking the probe value)
    ("R75>2.5", ">", lambda v: {1: 0.5, 5: 1.0, 6: 0.0, 7: v}, 2.5),
    ("b7-b5>0.3", ">", lambda v: {1: 0.5, 5: 0.0, 6: 0.0, 7: v}, 0.3),
    ("b7>0.5", ">", lambda v: {1: 0.5, 5: 0.1, 6: 0.0, 7: v}, 0.5),
    ("b6>0.8", ">", lambda v: {1: 0.1, 5: 0.5, 6: v, 7: 0.0}, 0.8),
    ("b1<0.2", "<", lambda v: {1: v, 5: 0.5, 6: 0.9, 7: 0.0}, 0.2),
    ("b5>0.4", ">", lambda v: {1: 0.1, 5: v, 6: 0.9, 7: 0.2}, 0.4),
    ("b7<0.1", "<", lambda v: {1: 0.1, 5: 0.0, 6: 0.9, 7: v}, 0.1),
]


def test_criterion_3_schroeder_rule():
    eps = 1e-6
    t0 = time.perf_counter()
    failures = []
    for name, op, build, thr in _BOUNDARY_PIXELS:
        expect = (False, False, True) if op == ">" else (True, False, False)
        for v, e in zip((thr - eps, thr, thr + eps), expect):
            rho = build(v)
            if schroeder_predicates(PixelSpectrum(rho))[name] is not e:
                failures.append(f"{name}@{v}")
            # the whole rule must agree with a literal transcription at every probe
            if schroeder_rule(PixelSpectrum(rho)) != schroeder_by_hand(rho[1], rho[5], rho[6], rho[7]) \
                    or bool(evaluate_rule(SCHROEDER_RULE, rho)) != schroeder_rule(PixelSpectrum(rho)):
                failures.append(f"rule@{name}={v}")
    rng = np.random.default_rng(3)
    planes = {b: rng.random(10_000) * 1.2 - 0.1 for b in (1, 5, 6, 7)}
    vec = evaluate_rule(SCHROEDER_RULE, planes)
    mism = sum(vec[i] != schroeder_rule(PixelSpectrum({b: float(planes[b][i]) for b in planes}))
               for i in range(10_000))
    elapsed = time.perf_counter() - t0
    assert record(3, not failures and mism == 0,
                  f"{len(_BOUNDARY_PIXELS)} predicates x 3 probes, {len(failures)} boundary failures; "
                  f"10^4 pixels, {mism} scalar/vector mismatches ({int(vec.sum())} fire)", elapsed, 10)


# -- shared trained networks -------------------------------------------------

def _train_until(net, ds, cfg, metric, target):
    """Train until the inference-mode ``metric`` on ``ds`` reaches ``target``."""
    history = []

    def reached(row):
        value = getattr(evaluate(net, ds, timed=False), metric)
        history.append(value)
        return value is not None and value >= target

    result = train(net, ds, TrainConfig(**{**cfg.__dict__, "stop_when": reached}))
    return result, history


@pytest.fixture(scope="session")
def overfit_classifier():
    ds = generate_patch_set(64, size=64, positive_fraction=0.5, seed=40)
    cfg = TrainConfig.for_classifier(epochs=200, batch_size=16, val_fraction=0, seed=0)
    t0 = time.perf_counter()
    net = build_classifier(seed=0)
    result, history = _train_until(net, ds, cfg, "accuracy", 0.95)
    elapsed = time.perf_counter() - t0
    return net, ds, cfg, result, history, elapsed


@pytest.fixture(scope="session")
def overfit_segmenter():
    ds = generate_patch_set(32, size=64, positive_fraction=1.0, seed=50)
    cfg = TrainConfig.for_segmenter(epochs=200, batch_size=8, val_fraction=0, seed=0)
    t0 = time.perf_counter()
    net = build_segmenter(seed=0)
    result, history = _train_until(net, ds, cfg, "iou", 0.85)
    elapsed = time.perf_counter() - t0
    return net, ds, result, history, elapsed


# -- 4 -----------------------------------------------------------------------

def test_criterion_4_classifier_overfit(overfit_classifier):
    net, ds, cfg, result, history, elapsed = overfit_classifier
    acc = history[-1]
    # determinism: retrain the same number of epochs with the same seed
    t0 = time.perf_counter()
    twin = build_classifier(seed=0)
    train(twin, ds, TrainConfig(**{**cfg.__dict__, "epochs": len(result.curves)}))
    elapsed += time.perf_counter() - t0
    same = all(np.array_equal(a, b) for a, b in zip(net.state_dict().values(), twin.state_dict().values()))
    assert record(4, acc >= 0.95 and same,
                  f"train accuracy {acc:.3f} after {len(history)} epochs (64 patches 64x64x12), "
                  f"retrain bit-identical: {same}", elapsed, 300)


# -- 5 -----------------------------------------------------------------------

def test_criterion_5_segmenter_overfit(overfit_segmenter):
    net, ds, result, history, elapsed = overfit_segmenter
    iou = history[-1]
    assert record(5, iou is not None and iou >= 0.85,
                  f"train IoU {iou:.3f} after {len(history)} epochs (32 positive patches 64x64x12)", elapsed, 600)


# -- 6 -----------------------------------------------------------------------

def _gate_feed(classifier, n_neg=80, n_pos=20, seed=60):
    """Exactly ``n_neg`` gate-negative and ``n_pos`` gate-positive 256x256 patches, shuffled."""
    pool = generate_patch_set(int(1.25 * (n_neg + n_pos)), size=256, positive_fraction=0.25, seed=seed,
                              fire_radius_px=(6, 14))
    probs = [float(classifier.forward(p.data[None])[0]) for p, _ in pool.patches]
    neg = [pm for pm, q in zip(pool.patches, probs) if not q > 0.5][:n_neg]
    pos = [pm for pm, q in zip(pool.patches, probs) if q > 0.5][:n_pos]
    feed = neg + pos
    del pool, probs  # keep only the feed resident while timing
    order = np.random.default_rng(seed).permutation(len(feed))
    return [feed[i] for i in order], len(neg), len(pos)


def test_criterion_6_two_tier_gating(overfit_classifier, overfit_segmenter):
    feed, n_neg, n_pos = _gate_feed(overfit_classifier[0])
    gc.collect()
    warm = TwoTierModel(overfit_classifier[0], overfit_segmenter[0])
    warm.infer(feed[0][0], segment_all=True)
    warm.infer(feed[0][0])
    model = TwoTierModel(overfit_classifier[0], overfit_segmenter[0])
    t0 = time.perf_counter()
    gated, tier_s = 0, []
    for patch, _ in feed:
        s = time.perf_counter()
        _, d = model.infer(patch)
        tier_s.append(time.perf_counter() - s)
        gated += d.probability > model.threshold
    calls = model.segmenter_calls
    base_s = []
    for patch, _ in feed:
        s = time.perf_counter()
        model.infer(patch, segment_all=True)
        base_s.append(time.perf_counter() - s)
    elapsed = time.perf_counter() - t0
    ratio = np.mean(tier_s) / np.mean(base_s)
    ok = (n_neg, n_pos) == (80, 20) and calls == gated == 20 and ratio < 0.5
    assert record(6, ok,
                  f"{n_neg}/{n_neg + n_pos} gate-negative feed, segmenter calls {calls} = gate-positive {gated}; "
                  f"latency {1000 * np.mean(tier_s):.1f} ms vs always-segment {1000 * np.mean(base_s):.1f} ms "
                  f"(ratio {ratio:.2f})", elapsed, 60)


# -- 7 -----------------------------------------------------------------------

def test_criterion_7_stream_offline(overfit_classifier, overfit_segmenter):
    t0 = time.perf_counter()
    details, ok = [], True
    for seed in range(3):
        image, mask = generate_scene(SceneSpec(512, 512, fire_fraction=0.02), seed=70 + seed)
        model = TwoTierModel(overfit_classifier[0], overfit_segmenter[0])
        offline = infer_offline(image, model)
        report = simulate_feed(image, model, rate=1.0, mask=mask, threaded=True)
        same = report.mask.data.tobytes() == offline.data.tobytes()
        ok &= same and report.realtime_ok
        details.append(f"scene {seed}: identical={same} contract={'held' if report.realtime_ok else 'VIOLATED'} "
                       f"max lag {1000 * report.max_lag_s:.0f} ms")
    elapsed = time.perf_counter() - t0
    assert record(7, ok, "; ".join(details) + " at 1 patch/s", elapsed, 120)


# -- 8 -----------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_8_spectral_ablation():
    train_split = generate_patch_set(100, positive_fraction=0.18, seed=10)
    val_split = generate_patch_set(100, positive_fraction=0.18, seed=11)
    test_split = generate_patch_set(200, positive_fraction=0.18, seed=12)
    cfg = TrainConfig.for_classifier(epochs=20, batch_size=8, oversample=False)
    plan = AblationPlan(["5,3,2", "10,9,2", "10"], cfg, seeds=(0, 1, 2))
    t0 = time.perf_counter()
    rows = {r.channels: r for r in run_ablation(plan, train_split, test_split, val_split)}
    elapsed = time.perf_counter() - t0
    rgb = rows["5,3,2"].recall
    band10 = {k: rows[k].recall for k in ("10,9,2", "10")}
    ok = rgb < 0.15 and all(v > 0.70 for v in band10.values())
    assert record(8, ok, f"recall 5,3,2 = {rgb:.3f}; 10,9,2 = {band10['10,9,2']:.3f}; 10 = {band10['10']:.3f} "
                         f"(mean of 3 seeds)", elapsed, 1800)


# -- 9 -----------------------------------------------------------------------

def test_criterion_9_format_round_trips():
    rng = np.random.default_rng(9)
    t0 = time.perf_counter()
    bad = {"raster": 0, "mask": 0, "checkpoint": 0}
    states = ("raw_radiance", "brightness_temperature_mixed", "normalized")
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        for i in range(100):
            b, h, w = (int(v) for v in rng.integers(1, [13, 24, 24]))
            state = states[i % 3]
            data = rng.random((b, h, w), dtype=np.float32)
            if state != "normalized":
                data = data * 1000 - 50
            bands = tuple(AMS_BANDS[j] for j in rng.permutation(12)[:b])
            img = RasterImage(data, bands, gsd_m=float(rng.uniform(0.5, 50)), units_state=state)
            write_raster(img, tmp / "r.msrf")
            back = read_raster(tmp / "r.msrf")
            bad["raster"] += not (back.data.tobytes() == img.data.tobytes() and back.bands == img.bands
                                  and back.gsd_m == img.gsd_m and back.units_state == img.units_state)

            m = MaskImage((rng.random((h, w)) < rng.random()).astype(np.uint8))
            write_mask(m, tmp / "m.msrf")
            bad["mask"] += read_mask(tmp / "m.msrf").data.tobytes() != m.data.tobytes()

            tensors = {f"t{k}": rng.standard_normal(tuple(rng.integers(0, 5, rng.integers(0, 4)))).astype(np.float32)
                       for k in range(int(rng.integers(0, 6)))}
            save_checkpoint(tensors, tmp / "c.fsck")
            got = load_checkpoint(tmp / "c.fsck")
            bad["checkpoint"] += not (list(got) == list(tensors) and all(
                got[k].shape == v.shape and got[k].tobytes() == v.tobytes() for k, v in tensors.items()))
    elapsed = time.perf_counter() - t0
    assert record(9, not any(bad.values()),
                  "100 instances each; failures " + ", ".join(f"{k} {v}" for k, v in bad.items()), elapsed, 30)


# -- 10 (optional) -----------------------------------------------------------

AMS_DATA = os.environ.get("FIRESCAN_AMS_DATA")


@pytest.mark.skipif(not AMS_DATA, reason="optional: set FIRESCAN_AMS_DATA to a prepared AMS patch dataset")
@pytest.mark.slow
def test_criterion_10_full_dataset():
    splits = read_patch_dataset(AMS_DATA)
    t0 = time.perf_counter()
    clf = build_classifier(seed=0)
    train(clf, splits["train"], TrainConfig.for_classifier(epochs=500))
    seg = build_segmenter(seed=0)
    train(seg, splits["train"], TrainConfig.for_segmenter(epochs=500, patience=50))
    acc = evaluate(clf, splits["test"]).accuracy
    iou = evaluate(seg, splits["test"]).iou
    elapsed = time.perf_counter() - t0
    ok = abs(acc - 0.968) <= 0.03 and abs(iou - 0.740) <= 0.05
    assert record(10, ok, f"classifier accuracy {acc:.3f}, segmenter IoU {iou:.3f}", elapsed, float("inf"))


def test_criterion_10_reported_when_skipped():
    if not AMS_DATA:
        conftest.ACCEPTANCE_LINES.append(
            "criterion 10: SKIP  optional full-dataset run; set FIRESCAN_AMS_DATA to enable (not gating)")
