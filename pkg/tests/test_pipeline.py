import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from firescan.dataset import Patch
from firescan.errors import ConfigError, ShapeError
from firescan.models import build_classifier, build_segmenter, NetworkSpec, save_network
from firescan.pipeline import (
    TwoTierConfig,
    TwoTierModel,
    grid_positions,
    infer_offline,
    simulate_feed,
    stitch,
    two_tier_infer,
    write_stitch_report,
)
from firescan.raster_io import read_mask
from firescan.synthgen import SceneSpec, generate_patch_set, generate_scene
from handnets import band10_classifier, band10_segmenter, constant_classifier

TINY_SEG = NetworkSpec("segmenter", widths=(2, 2), decoder_widths=(2, 2))


def _model(classifier=None, segmenter=None):
    return TwoTierModel(classifier or band10_classifier(), segmenter or band10_segmenter())


def test_zero_head_gate_blocks_blank_patch():
    model = TwoTierModel(build_classifier(zero_head=True), build_segmenter(TINY_SEG))
    mask, d = model.infer(np.zeros((12, 32, 32), np.float32))
    assert d.probability == 0.5 and not d.gated and not d.segmented
    assert not mask.any() and mask.dtype == np.uint8 and model.segmenter_calls == 0
    assert d.segment_ms == 0.0 and d.classify_ms >= 0.0


def test_forced_gate_invokes_segmenter_once(rng):
    model = TwoTierModel(constant_classifier(50.0), build_segmenter(TINY_SEG))
    mask, d = two_tier_infer(rng.random((12, 32, 32), dtype=np.float32), model)
    assert d.probability == 1.0 and d.gated and d.segmented
    assert model.segmenter_calls == 1 and model.classifier_calls == 1
    assert mask.shape == (32, 32) and set(np.unique(mask)) <= {0, 1}


def test_segment_all_skips_classifier(rng):
    model = TwoTierModel(constant_classifier(-50.0), build_segmenter(TINY_SEG))
    _, d = model.infer(rng.random((12, 16, 16), dtype=np.float32), segment_all=True)
    assert d.segmented and model.classifier_calls == 0 and model.segmenter_calls == 1


def test_counter_audit_on_mostly_negative_feed():
    ds = generate_patch_set(40, size=32, positive_fraction=0.2, seed=2)
    model = _model()
    gated = 0
    for patch, mask in ds.patches:
        pred, d = model.infer(patch)
        gated += d.probability > model.threshold
        assert d.segmented == (d.probability > model.threshold)
        if not d.segmented:
            assert not pred.any()
    assert model.segmenter_calls == gated and gated >= ds.n_positive
    assert model.classifier_calls == 40


@settings(max_examples=40)
@given(st.floats(-5, 5), st.floats(0.05, 0.95))
def test_gate_soundness(logit, threshold):
    model = TwoTierModel(constant_classifier(logit), build_segmenter(TINY_SEG), threshold)
    _, d = model.infer(np.zeros((12, 8, 8), np.float32))
    assert model.segmenter_calls == int(d.probability > threshold)


def test_channel_selection_and_mismatch(rng):
    model = _model()
    patch = rng.random((3, 16, 16), dtype=np.float32)
    model.infer(patch, channels=(2, 10, 9))
    with pytest.raises(ShapeError):
        model.infer(patch, channels=(1, 2, 3))
    with pytest.raises(ShapeError):
        model.infer(patch, channels=(1, 2))
    p = Patch(patch, "s", 0, 0, channels=(10, 9, 2))
    model.infer(p)


def test_two_tier_needs_both_kinds():
    with pytest.raises(ConfigError):
        TwoTierModel(band10_segmenter(), band10_classifier())


def test_from_config(tmp_path):
    save_network(band10_classifier(), tmp_path / "c.fsck")
    save_network(band10_segmenter(), tmp_path / "s.fsck")
    cfg = TwoTierConfig(str(tmp_path / "c.fsck"), str(tmp_path / "s.fsck"), threshold=0.4)
    model = TwoTierModel.from_config(cfg)
    assert model.threshold == 0.4 and model.classifier.channels == (10,)
    with pytest.raises(ConfigError):
        TwoTierModel.from_config(TwoTierConfig(str(tmp_path / "c.fsck"), str(tmp_path / "s.fsck"), channels=(1, 2)))
    with pytest.raises(ConfigError):
        TwoTierModel.from_config(TwoTierConfig(str(tmp_path / "c.fsck")))


# -- stitching ---------------------------------------------------------------

def test_grid_positions_row_major():
    assert grid_positions(512, 768, 256) == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]
    assert grid_positions(100, 100, 256) == []


def test_stitch_examples():
    tiles = [np.full((4, 4), v % 2, np.uint8) for v in range(4)]
    out = stitch(tiles, grid_positions(8, 8, 4), (8, 8), 4).data
    assert (out[:4, :4] == 0).all() and (out[:4, 4:] == 1).all()
    assert (out[4:, :4] == 0).all() and (out[4:, 4:] == 1).all()
    one = (np.indices((4, 4)).sum(0) % 2).astype(np.uint8)
    np.testing.assert_array_equal(stitch([one], [(0, 0)], (4, 4), 4).data, one)
    border = stitch([np.ones((4, 4), np.uint8)], [(0, 0)], (6, 7), 4).data
    assert border[:4, :4].all() and border.sum() == 16


def test_stitch_errors():
    tiles = [np.zeros((4, 4), np.uint8)] * 2
    with pytest.raises(ConfigError):
        stitch(tiles, [(0, 0), (0, 1)], (8, 8), 4)
    with pytest.raises(ConfigError):
        stitch(tiles + tiles, [(0, 0), (0, 0), (1, 0), (1, 1)], (8, 8), 4)
    with pytest.raises(ConfigError):
        stitch([tiles[0]], [(2, 0)], (4, 4), 4)
    with pytest.raises(ShapeError):
        stitch([np.zeros((3, 4), np.uint8)], [(0, 0)], (4, 4), 4)


# -- feed simulation ---------------------------------------------------------

@pytest.fixture(scope="module")
def scene():
    return generate_scene(SceneSpec(160, 224, n_fires=6, fire_radius_px=(3, 9)), seed=7)


def test_rate_must_be_positive(scene):
    for rate in (0, -1.0):
        with pytest.raises(ConfigError):
            simulate_feed(scene[0], _model(), rate, size=32)
    with pytest.raises(ConfigError):
        simulate_feed(scene[0], _model(), 1.0, queue_depth=0, size=32)


@pytest.mark.parametrize("threaded", [True, False])
def test_stream_matches_offline(scene, threaded):
    image, truth = scene
    offline = infer_offline(image, _model(), size=32)
    report = simulate_feed(image, _model(), rate=500.0, mask=truth, size=32, threaded=threaded)
    assert report.mask.data.tobytes() == offline.data.tobytes()
    assert report.mask.data.shape == (160, 224)
    # the hand-wired pair is exact on synthetic fires
    assert report.evaluation.iou == 1.0
    d = report.decisions
    assert [(r["row"], r["col"]) for r in d] == grid_positions(160, 224, 32)
    arrivals = [r["arrival_s"] for r in d]
    assert arrivals == sorted(arrivals)
    for r in d:
        assert r["start_s"] >= r["arrival_s"] - 1e-9 and r["done_s"] >= r["start_s"]
        assert r["lag_s"] >= 0 and r["classify_ms"] >= 0 and r["segment_ms"] >= 0
        assert not r["segmented"] or r["gated"]
    assert report.max_queue_depth <= report.queue_depth


def test_slow_rate_holds_contract(scene):
    report = simulate_feed(scene[0], _model(), rate=200.0, size=32, threaded=False)
    assert report.realtime_ok and not report.overflow


def test_virtual_clock_flags_overflow(scene):
    report = simulate_feed(scene[0], _model(), rate=1e7, queue_depth=1, size=32, threaded=False)
    assert report.overflow and not report.realtime_ok


def test_non_normalized_feed_rejected(scene):
    image = scene[0]
    raw = image.with_data(image.data, units_state="raw_radiance")
    with pytest.raises(ConfigError):
        simulate_feed(raw, _model(), 1.0, size=32)


def test_write_stitch_report(tmp_path, scene):
    report = simulate_feed(scene[0], _model(), rate=500.0, mask=scene[1], size=32, threaded=False)
    paths = write_stitch_report(report, tmp_path)
    doc = json.loads(paths["report"].read_text())
    assert doc["summary"]["patches"] == len(grid_positions(160, 224, 32))
    assert doc["summary"]["evaluation"]["iou"] == 1.0
    assert read_mask(paths["mask"]).data.tobytes() == report.mask.data.tobytes()
    raw = paths["preview"].read_bytes()
    assert set(raw[18:]) <= {0, 255}
