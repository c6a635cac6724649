"""Deterministic image normalization, applied identically at train and test time."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import cv2
import numpy as np

from .datasets import ImageSample


class DegenerateChannelWarning(UserWarning):
    """A channel had equal low/high stretch percentiles and was passed through."""


@dataclass(frozen=True)
class PreprocessConfig:
    target_size: int = 320
    stretch_low: float = 1.0
    stretch_high: float = 99.0

    def __post_init__(self):
        if self.target_size < 32:
            raise ValueError(f"target_size must be >= 32, got {self.target_size}")
        if not (0.0 <= self.stretch_low < self.stretch_high <= 100.0):
            raise ValueError(
                f"need 0 <= stretch_low < stretch_high <= 100, got "
                f"({self.stretch_low}, {self.stretch_high})"
            )


def resize(sample: ImageSample, config: PreprocessConfig) -> ImageSample:
    """Bilinear resize to target_size x target_size; count and ids unchanged."""
    size = config.target_size
    if sample.height == size and sample.width == size:
        return sample
    resized = cv2.resize(np.asarray(sample.pixels), (size, size), interpolation=cv2.INTER_LINEAR)
    return ImageSample(sample.image_id, resized, sample.count, sample.source_id)


def histogram_stretch(sample: ImageSample, config: PreprocessConfig) -> ImageSample:
    """Per-channel linear contrast stretch.

    The stretch_low percentile maps to 0 and the stretch_high percentile to
    255, clamped. A channel whose two percentiles coincide is passed
    through unchanged and a DegenerateChannelWarning is emitted.
    """
    pixels = np.asarray(sample.pixels)
    out = np.empty_like(pixels)
    for c in range(3):
        channel = pixels[:, :, c]
        lo, hi = np.percentile(channel, [config.stretch_low, config.stretch_high])
        if hi - lo < 1e-12:
            warnings.warn(
                f"{sample.image_id}: channel {c} has a degenerate intensity range; "
                "left unchanged",
                DegenerateChannelWarning,
                stacklevel=2,
            )
            out[:, :, c] = channel
            continue
        stretched = (channel.astype(np.float64) - lo) * 255.0 / (hi - lo)
        out[:, :, c] = np.clip(np.rint(stretched), 0, 255).astype(np.uint8)
    return ImageSample(sample.image_id, out, sample.count, sample.source_id)


def preprocess(sample: ImageSample, config: PreprocessConfig) -> ImageSample:
    """Resize then histogram-stretch one sample."""
    return histogram_stretch(resize(sample, config), config)


def preprocess_all(samples: Sequence[ImageSample], config: PreprocessConfig) -> list[ImageSample]:
    return [preprocess(s, config) for s in samples]
