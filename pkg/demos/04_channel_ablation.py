"""Which bands matter? Train the classifier on band subsets and compare.

Visible-only input should trail any subset that includes the hot bands.

Run: python demos/04_channel_ablation.py
"""
from firescan.experiments import AblationPlan, run_ablation
from firescan.models import TrainConfig
from firescan.synthgen import generate_patch_set

train_split = generate_patch_set(48, size=64, positive_fraction=0.5, seed=20, smoke_opacity=1.0)
test_split = generate_patch_set(32, size=64, positive_fraction=0.5, seed=21, smoke_opacity=1.0)

plan = AblationPlan.from_text(
    "5,3,2;10,9,2;1-12",
    train_config=TrainConfig.for_classifier(epochs=10, batch_size=8, val_fraction=0),
    seeds=(0,),
)
for row in run_ablation(plan, train_split, test_split):
    print(f"bands {row.channels:10s} accuracy {row.accuracy:.3f}  recall {row.recall:.3f}")
