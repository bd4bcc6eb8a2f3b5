"""Stream a scene through the two-tier model at a fixed tile rate.

The classifier screens each tile; only tiles it flags go to the segmenter.
Hand-set networks keep the demo training-free: both react to the hot band.

Run: python demos/03_two_tier_stream.py
"""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from handnets import band10_classifier, band10_segmenter  # noqa: E402

from firescan.pipeline import TwoTierModel, infer_offline, simulate_feed  # noqa: E402
from firescan.synthgen import SceneSpec, generate_scene  # noqa: E402

image, truth = generate_scene(SceneSpec(512, 512, fire_fraction=0.01), seed=3)
model = TwoTierModel(band10_classifier(), band10_segmenter())

report = simulate_feed(image, model, rate=1.0, mask=truth, queue_depth=4)
s = report.summary()
print(f"tiles {s['patches']}, segmenter calls {s['segmenter_calls']}")
print(f"mean per-tile {s['mean_patch_ms']:.1f} ms, max lag {s['max_lag_s']:.3f} s, realtime {s['realtime_ok']}")
print("stitched mask vs truth:", report.evaluation.row())

offline = infer_offline(image, model)
print("streamed == offline:", bool((offline.data == report.mask.data).all()))
