"""Train a small classifier and segmenter on synthetic patches.

Patches are 64x64 here so the demo finishes in about a minute on one core;
the networks are the same ones used on 256x256 patches.

Run: python demos/02_train_networks.py
"""
from firescan.models import TrainConfig, build_classifier, build_segmenter, evaluate, train
from firescan.synthgen import generate_patch_set

train_split = generate_patch_set(64, size=64, positive_fraction=0.5, seed=10)
test_split = generate_patch_set(32, size=64, positive_fraction=0.5, seed=11)
print(f"train {len(train_split)} patches ({train_split.n_positive} positive), test {len(test_split)}")

clf = build_classifier(seed=0)
print(f"classifier: {clf.param_count()} parameters")
res = train(clf, train_split, TrainConfig.for_classifier(epochs=15, batch_size=8, val_fraction=0))
print(f"  final train loss {res.curves[-1]['loss']:.4f}")
print("  test:", evaluate(clf, test_split, timed=False).row())

seg = build_segmenter(seed=0)
print(f"segmenter: {seg.param_count()} parameters")
res = train(seg, train_split, TrainConfig.for_segmenter(epochs=15, batch_size=8, val_fraction=0))
print(f"  final train loss {res.curves[-1]['loss']:.4f}")
print("  test (positives):", evaluate(seg, test_split.positives(), timed=False).row())
