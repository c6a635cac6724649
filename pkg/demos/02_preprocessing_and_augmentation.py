"""Show what preprocessing and the affine augmentation stream do to an image.

Left: raw vs resized vs histogram-stretched. Right: a grid of augmented
variants drawn from the training-time policy (rotation 0-170 degrees, zoom
up to 10%, random flips, replicated edges).
"""

from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np

from leafcount import (
    AugmentConfig,
    PreprocessConfig,
    SyntheticConfig,
    generate_synthetic,
    histogram_stretch,
    random_affine,
    resize,
)

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

sample = generate_synthetic(
    SyntheticConfig(image_size=96, count_range=(5, 5), shape="ellipse",
                    background_style="textured", n_images=1, seed=7)
)[0]

cfg = PreprocessConfig(target_size=64)
resized = resize(sample, cfg)
stretched = histogram_stretch(resized, cfg)

fig, axes = plt.subplots(1, 3, figsize=(9, 3.2))
for ax, (title, s) in zip(axes, [("raw 96x96", sample),
                                 ("resized 64x64", resized),
                                 ("histogram stretched", stretched)]):
    ax.imshow(s.pixels)
    ax.set_title(title, fontsize=10)
    ax.axis("off")
fig.tight_layout()
fig.savefig(OUT / "02_preprocessing.png", dpi=120)
print(f"wrote {OUT / '02_preprocessing.png'}")

aug = AugmentConfig(rotation_range=170.0, zoom_range=0.10, seed=0)
fig, axes = plt.subplots(3, 5, figsize=(10, 6.4))
for i, ax in enumerate(axes.ravel()):
    variant = random_affine(stretched, aug, np.random.default_rng(i))
    ax.imshow(variant.pixels)
    ax.set_title(f"count={variant.count}", fontsize=8)
    ax.axis("off")
fig.suptitle("augmented variants keep the label by construction")
fig.tight_layout()
fig.savefig(OUT / "02_augmentation_grid.png", dpi=120)
print(f"wrote {OUT / '02_augmentation_grid.png'}")
