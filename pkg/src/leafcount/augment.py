"""Random-affine training augmentation and the epoch batch stream.

The augmentation policy: rotation drawn uniformly from [0, rotation_range]
degrees, zoom-in drawn uniformly from [1, 1 + zoom_range] (content magnified
about the center, implicitly cropped back to the original frame), and
independent horizontal/vertical flips firing with probability 0.5 when
enabled. Rotation border regions are filled by nearest-edge replication.

An epoch consists of ``steps_per_epoch`` batches of ``batch_size`` samples,
with base images drawn uniformly with replacement; with the default plan
(steps = 2 x n_train, batch = 6) the stream emits 12 x n_train augmented
samples per epoch.

Per-sample parameter draws come from rng substreams derived from
(seed, epoch, step, slot), so batches may be assembled in parallel without
changing the emitted stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import cv2
import numpy as np

from .datasets import ImageSample

DEFAULT_BATCH_SIZE = 6
DEFAULT_STEPS_MULTIPLIER = 2


@dataclass(frozen=True)
class AugmentConfig:
    rotation_range: float = 170.0
    zoom_range: float = 0.10
    flip_horizontal: bool = True
    flip_vertical: bool = True
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.rotation_range <= 360.0):
            raise ValueError(f"rotation_range must be in [0, 360], got {self.rotation_range}")
        if not (0.0 <= self.zoom_range < 1.0):
            raise ValueError(f"zoom_range must be in [0, 1), got {self.zoom_range}")

    @classmethod
    def identity(cls, seed: int = 0) -> "AugmentConfig":
        """A config whose transforms are all no-ops (for unaugmented runs)."""
        return cls(rotation_range=0.0, zoom_range=0.0,
                   flip_horizontal=False, flip_vertical=False, seed=seed)


@dataclass(frozen=True)
class EpochPlan:
    steps_per_epoch: int
    batch_size: int = DEFAULT_BATCH_SIZE

    def __post_init__(self):
        if self.steps_per_epoch < 1 or self.batch_size < 1:
            raise ValueError("steps_per_epoch and batch_size must be >= 1")

    @classmethod
    def for_training_set(cls, n_train: int, steps_multiplier: int = DEFAULT_STEPS_MULTIPLIER,
                         batch_size: int = DEFAULT_BATCH_SIZE) -> "EpochPlan":
        """Default policy: steps = 2 x n_train, batch = 6 (12 x n_train per epoch)."""
        if n_train < 1:
            raise ValueError("n_train must be >= 1")
        return cls(steps_per_epoch=steps_multiplier * n_train, batch_size=batch_size)

    @property
    def samples_per_epoch(self) -> int:
        return self.steps_per_epoch * self.batch_size


@dataclass(frozen=True)
class AffineParams:
    """The transform actually applied to one emitted sample."""

    base_id: str
    angle: float
    zoom: float
    flip_h: bool
    flip_v: bool


@dataclass(frozen=True)
class AugmentedBatch:
    samples: tuple[ImageSample, ...]
    params: tuple[AffineParams, ...]


def apply_affine(pixels: np.ndarray, angle: float, zoom: float,
                 flip_h: bool = False, flip_v: bool = False) -> np.ndarray:
    """Rotate by ``angle`` degrees (counter-clockwise) and zoom about the
    image center, then apply the requested flips.

    The identity parameter set returns the pixels bit-for-bit.
    """
    pixels = np.asarray(pixels)
    h, w = pixels.shape[:2]
    out = pixels
    if angle != 0.0 or zoom != 1.0:
        matrix = cv2.getRotationMatrix2D(((w - 1) / 2.0, (h - 1) / 2.0), angle, zoom)
        out = cv2.warpAffine(out, matrix, (w, h), flags=cv2.INTER_LINEAR,
                             borderMode=cv2.BORDER_REPLICATE)
    if flip_h:
        out = out[:, ::-1]
    if flip_v:
        out = out[::-1, :]
    if out is pixels:
        return pixels.copy()
    return np.ascontiguousarray(out)


def draw_affine_params(config: AugmentConfig, rng: np.random.Generator,
                       base_id: str = "") -> AffineParams:
    """Draw one parameter set. Always consumes four variates so traces stay
    aligned across configs."""
    angle = rng.uniform(0.0, config.rotation_range)
    zoom = rng.uniform(1.0, 1.0 + config.zoom_range)
    u_h, u_v = rng.uniform(size=2)
    return AffineParams(
        base_id=base_id,
        angle=float(angle),
        zoom=float(zoom),
        flip_h=bool(config.flip_horizontal and u_h < 0.5),
        flip_v=bool(config.flip_vertical and u_v < 0.5),
    )


def random_affine(sample: ImageSample, config: AugmentConfig,
                  rng: np.random.Generator) -> ImageSample:
    """Apply one random affine transform; the count is untouched by construction."""
    p = draw_affine_params(config, rng, sample.image_id)
    pixels = apply_affine(sample.pixels, p.angle, p.zoom, p.flip_h, p.flip_v)
    return ImageSample(sample.image_id, pixels, sample.count, sample.source_id)


def epoch_stream(train: Sequence[ImageSample], config: AugmentConfig,
                 plan: EpochPlan, epoch: int = 0) -> Iterator[AugmentedBatch]:
    """Yield the augmented batches of one training epoch.

    Base samples are drawn uniformly with replacement. Fully deterministic
    given (config.seed, epoch); distinct epochs get distinct streams.
    """
    if len(train) < 1:
        raise ValueError("epoch_stream needs at least one training sample")
    index_rng = np.random.default_rng((config.seed, epoch))
    base_idx = index_rng.integers(0, len(train), size=(plan.steps_per_epoch, plan.batch_size))
    for step in range(plan.steps_per_epoch):
        samples = []
        params = []
        for slot in range(plan.batch_size):
            base = train[base_idx[step, slot]]
            rng = np.random.default_rng((config.seed, epoch, step, slot))
            p = draw_affine_params(config, rng, base.image_id)
            pixels = apply_affine(base.pixels, p.angle, p.zoom, p.flip_h, p.flip_v)
            samples.append(ImageSample(base.image_id, pixels, base.count, base.source_id))
            params.append(p)
        yield AugmentedBatch(samples=tuple(samples), params=tuple(params))
