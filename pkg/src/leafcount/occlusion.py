"""Occlusion-sensitivity diagnostics.

A square window of constant fill (black by default) slides across the
image on a regular grid; the model predicts a count for every occluded
variant and the per-position absolute count error becomes a heatmap. A
model that truly attends to the objects shows errors concentrated where
the objects are, not on the background.

Only fully contained window positions are evaluated, so the grid is
exactly floor((H - window)/stride) + 1 rows by the analogous number of
columns.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .datasets import ImageSample
from .exceptions import LeafcountError

_LEGEND_WIDTH = 56


@dataclass(frozen=True)
class OcclusionConfig:
    window_size: int = 60
    stride: int = 20
    fill_value: int = 0

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError(f"window_size must be >= 1, got {self.window_size}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if not (0 <= self.fill_value <= 255):
            raise ValueError(f"fill_value must be an 8-bit intensity, got {self.fill_value}")


@dataclass(frozen=True)
class OcclusionHeatmap:
    errors: np.ndarray  # R x C grid of per-position count errors
    window_size: int
    stride: int
    image_id: str
    baseline_prediction: float
    true_count: int
    signed: bool = False

    def __post_init__(self):
        arr = np.asarray(self.errors, dtype=np.float64)
        arr.flags.writeable = False
        object.__setattr__(self, "errors", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.errors.shape

    def window_origin(self, row: int, col: int) -> tuple[int, int]:
        """Top-left pixel (y, x) of the window at a grid position."""
        return row * self.stride, col * self.stride


def grid_shape(height: int, width: int, window_size: int, stride: int) -> tuple[int, int]:
    if window_size > height or window_size > width:
        raise LeafcountError(
            f"occlusion window {window_size} exceeds image size {height}x{width}"
        )
    return ((height - window_size) // stride + 1,
            (width - window_size) // stride + 1)


def occlusion_map(predictor, sample: ImageSample, config: OcclusionConfig,
                  signed: bool = False, batch_size: int = 64) -> OcclusionHeatmap:
    """Slide the window over the sample and record the count error at each
    position. ``predictor`` is anything with predict_raw/predict_count
    (a single network or an ensemble); the input image is never mutated.
    """
    pixels = np.asarray(sample.pixels)
    h, w = pixels.shape[:2]
    rows, cols = grid_shape(h, w, config.window_size, config.stride)
    fill = np.uint8(config.fill_value)

    occluded = np.empty((rows * cols, h, w, 3), dtype=np.uint8)
    for r in range(rows):
        for c in range(cols):
            y, x = r * config.stride, c * config.stride
            variant = occluded[r * cols + c]
            variant[:] = pixels
            variant[y:y + config.window_size, x:x + config.window_size, :] = fill

    counts = predictor.predict_count(occluded, batch_size=batch_size).astype(np.float64)
    diffs = (counts - sample.count).reshape(rows, cols)
    baseline = float(predictor.predict_raw(pixels[None])[0])
    return OcclusionHeatmap(
        errors=diffs if signed else np.abs(diffs),
        window_size=config.window_size,
        stride=config.stride,
        image_id=sample.image_id,
        baseline_prediction=baseline,
        true_count=sample.count,
        signed=signed,
    )


# viridis-like control points, interpolated to build the render LUT
_CMAP_POINTS = np.array([
    [68, 1, 84], [72, 40, 120], [62, 74, 137], [49, 104, 142],
    [38, 130, 142], [31, 158, 137], [53, 183, 121], [109, 205, 89],
    [180, 222, 44], [253, 231, 37],
], dtype=np.float64)


def colormap_lut(n: int = 256) -> np.ndarray:
    """n x 3 uint8 RGB lookup table, dark-to-bright."""
    positions = np.linspace(0.0, 1.0, len(_CMAP_POINTS))
    samples = np.linspace(0.0, 1.0, n)
    lut = np.empty((n, 3), dtype=np.uint8)
    for c in range(3):
        lut[:, c] = np.clip(np.interp(samples, positions, _CMAP_POINTS[:, c]), 0, 255)
    return lut


def heatmap_to_rgb(heatmap: OcclusionHeatmap, out_height: int, out_width: int) -> np.ndarray:
    """Color-map the error grid and upsample it (nearest) to the target size."""
    errors = heatmap.errors
    lo, hi = float(errors.min()), float(errors.max())
    if hi - lo < 1e-12:
        normalized = np.zeros_like(errors)
    else:
        normalized = (errors - lo) / (hi - lo)
    lut = colormap_lut()
    indices = np.clip((normalized * 255).astype(np.int64), 0, 255)
    rgb = lut[indices]
    return cv2.resize(rgb, (out_width, out_height), interpolation=cv2.INTER_NEAREST)


def render_heatmap(heatmap: OcclusionHeatmap, out_path: Path | str,
                   out_size: int | None = None) -> Path:
    """Write a PNG of the color-mapped grid with a value-scale legend strip.

    The left ``out_size`` x ``out_size`` region is exactly the upsampled
    heatmap; the legend occupies extra columns appended on the right.
    """
    out_path = Path(out_path)
    rows, cols = heatmap.shape
    if out_size is None:
        out_size = max(rows, cols) * heatmap.stride + heatmap.window_size - heatmap.stride
    image = heatmap_to_rgb(heatmap, out_size, out_size)

    legend = np.empty((out_size, _LEGEND_WIDTH, 3), dtype=np.uint8)
    legend[:] = 255
    lut = colormap_lut(out_size)
    legend[:, 8:24] = lut[::-1, None, :]  # high values on top
    lo, hi = float(heatmap.errors.min()), float(heatmap.errors.max())
    cv2.putText(legend, f"{hi:.3g}", (6, 12), cv2.FONT_HERSHEY_PLAIN, 0.7, (0, 0, 0), 1)
    cv2.putText(legend, f"{lo:.3g}", (6, out_size - 4), cv2.FONT_HERSHEY_PLAIN, 0.7, (0, 0, 0), 1)

    composed = np.concatenate([image, legend], axis=1)
    if not cv2.imwrite(str(out_path), cv2.cvtColor(composed, cv2.COLOR_RGB2BGR)):
        raise LeafcountError(f"could not write heatmap image: {out_path}")
    return out_path


def write_heatmap_csv(heatmap: OcclusionHeatmap, path: Path | str) -> None:
    """Numeric grid dump for regression testing, with geometry in a comment row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"# image={heatmap.image_id}",
                         f"window={heatmap.window_size}", f"stride={heatmap.stride}",
                         f"baseline={heatmap.baseline_prediction:.10g}",
                         f"true={heatmap.true_count}",
                         f"signed={heatmap.signed}"])
        for row in heatmap.errors:
            writer.writerow([f"{v:.10g}" for v in row])
