"""Synthetic scene -> color-rule fire mask, scored against the truth mask.

Run: python demos/01_color_rule_baseline.py
"""
import numpy as np

from firescan.metrics import confusion, metrics_from_counts
from firescan.rules import SCHROEDER_RULE, apply_rule, format_rule
from firescan.synthgen import SceneSpec, generate_scene

image, truth = generate_scene(SceneSpec(256, 256, fire_fraction=0.02), seed=1)
print(f"scene {image.height}x{image.width}, {image.data.shape[0]} bands, fire pixels {int(truth.data.sum())}")

# the rule compares band reflectances; its thresholds were tuned for a
# satellite sensor, and smoke brightens the reference band it divides by,
# so expect it to miss most of the fire here
print("rule:", format_rule(SCHROEDER_RULE))
pred = apply_rule(image)
m = metrics_from_counts(confusion(pred.data, truth.data))
for k in ("accuracy", "precision", "recall", "iou"):
    v = m[k]
    print(f"  {k:9s} {'undefined' if v is None else f'{v:.3f}'}")

# visual bands alone carry almost no signal: smoke covers the flame front
visual = image.data[[4, 2, 1]].mean(axis=0)
print(f"corr(visual brightness, fire) = {np.corrcoef(visual.ravel(), truth.data.ravel())[0, 1]:+.3f}")
