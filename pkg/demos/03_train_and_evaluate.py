"""Train a small count regressor end to end on synthetic data and score it.

Uses a reduced setting (300 images, capped epochs) so it finishes in a
couple of minutes on a laptop CPU; expect |DiC| well under 0.5 on the
held-out test part.
"""

import time
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np

from leafcount import (
    AugmentConfig,
    BackboneSpec,
    HeadSpec,
    PredictionSet,
    PreprocessConfig,
    SyntheticConfig,
    TrainConfig,
    build_model,
    evaluate_by_source,
    format_table,
    generate_synthetic,
    make_split,
    preprocess_all,
    select_samples,
    train,
)

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

samples = generate_synthetic(
    SyntheticConfig(image_size=64, count_range=(1, 8), n_images=300, seed=0),
    source_id="S1",
)
samples = preprocess_all(samples, PreprocessConfig(target_size=64))
split = make_split(samples, seed=0)
print(f"split: {len(split.train_ids)} train / {len(split.val_ids)} val / "
      f"{len(split.test_ids)} test")

network = build_model(BackboneSpec(feature_dim=24),
                      HeadSpec(fc1_units=64, fc2_units=32), 64, seed=1)
t0 = time.time()
network, history = train(
    network, samples, split,
    AugmentConfig(seed=2),
    TrainConfig(max_epochs=25, patience=6, seed=0),
    log_path=OUT / "03_history.csv",
)
print(f"trained {history.epochs_run} epochs in {(time.time() - t0) / 60:.1f} min "
      f"(best epoch {history.best_epoch}, {history.stop_reason})")

test_samples = select_samples(samples, split.test_ids)
preds = PredictionSet(
    image_ids=tuple(s.image_id for s in test_samples),
    predicted=network.predict_count(test_samples),
    true=np.array([s.count for s in test_samples]),
    sources=tuple(s.source_id for s in test_samples),
)
print(format_table(evaluate_by_source(preds)))

fig, ax = plt.subplots(figsize=(5.5, 3.2))
epochs = np.arange(1, history.epochs_run + 1)
ax.plot(epochs, history.train_loss, label="train loss")
ax.plot(epochs, history.val_loss, label="val loss (MSE)")
ax.axvline(history.best_epoch, color="gray", ls="--", lw=1, label="best epoch")
ax.set_xlabel("epoch")
ax.set_ylabel("loss")
ax.set_yscale("log")
ax.legend()
fig.tight_layout()
fig.savefig(OUT / "03_training_curves.png", dpi=120)
print(f"wrote {OUT / '03_training_curves.png'}")
