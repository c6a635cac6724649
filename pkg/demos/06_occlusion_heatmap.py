"""Occlusion-sensitivity diagnostic: where does the counter actually look?

A black window slides across a test image; each position's absolute count
error becomes one heatmap cell. A model that counts objects (rather than
background cues) shows errors only where objects are.
"""

import time
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np

from leafcount import (
    AugmentConfig,
    BackboneSpec,
    HeadSpec,
    OcclusionConfig,
    PreprocessConfig,
    SyntheticConfig,
    TrainConfig,
    build_model,
    generate_synthetic,
    make_split,
    occlusion_map,
    preprocess_all,
    render_heatmap,
    select_samples,
    train,
    write_heatmap_csv,
)

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

samples = generate_synthetic(
    SyntheticConfig(image_size=64, count_range=(1, 8), n_images=300, seed=0),
    source_id="S1",
)
samples = preprocess_all(samples, PreprocessConfig(target_size=64))
split = make_split(samples, seed=0)

network = build_model(BackboneSpec(feature_dim=24),
                      HeadSpec(fc1_units=64, fc2_units=32), 64, seed=1)
t0 = time.time()
network, history = train(network, samples, split, AugmentConfig(seed=2),
                         TrainConfig(max_epochs=20, patience=6, seed=0))
print(f"trained {history.epochs_run} epochs in {(time.time() - t0) / 60:.1f} min")

sample = select_samples(samples, split.test_ids)[0]
cfg = OcclusionConfig(window_size=16, stride=4)
heatmap = occlusion_map(network, sample, cfg)
print(f"grid {heatmap.shape}, baseline prediction {heatmap.baseline_prediction:.2f}, "
      f"true count {sample.count}")

render_heatmap(heatmap, OUT / "06_heatmap.png", out_size=256)
write_heatmap_csv(heatmap, OUT / "06_heatmap.csv")

fig, axes = plt.subplots(1, 2, figsize=(8, 3.6))
axes[0].imshow(sample.pixels)
axes[0].set_title(f"test image (count={sample.count})")
axes[0].axis("off")
im = axes[1].imshow(heatmap.errors, cmap="viridis")
axes[1].set_title("|count error| per window position")
fig.colorbar(im, ax=axes[1], shrink=0.85)
fig.tight_layout()
fig.savefig(OUT / "06_side_by_side.png", dpi=120)
print(f"wrote {OUT / '06_side_by_side.png'} and {OUT / '06_heatmap.png'}")
