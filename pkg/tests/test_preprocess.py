import numpy as np
import pytest

from leafcount.datasets import ImageSample
from leafcount.preprocess import (
    DegenerateChannelWarning,
    PreprocessConfig,
    histogram_stretch,
    preprocess,
    resize,
)

CFG = PreprocessConfig(target_size=320)
CFG64 = PreprocessConfig(target_size=64)


def _sample(pixels, count=4):
    return ImageSample("t/img.png", pixels, count, "t")


def test_resize_large_input(rng):
    # A3-like resolution down to the working size
    big = rng.integers(0, 255, (2048, 2448, 3)).astype(np.uint8)
    out = resize(_sample(big), CFG)
    assert out.pixels.shape == (320, 320, 3)
    assert out.count == 4 and out.image_id == "t/img.png" and out.source_id == "t"


def test_resize_identity(rng):
    img = rng.integers(0, 255, (320, 320, 3)).astype(np.uint8)
    out = resize(_sample(img), CFG)
    np.testing.assert_array_equal(out.pixels, img)


def test_resize_constant_stays_constant():
    img = np.full((640, 640, 3), 137, np.uint8)
    out = resize(_sample(img), CFG)
    assert out.pixels.shape == (320, 320, 3)
    assert np.all(out.pixels == 137)


def test_stretch_full_range_nearly_unchanged(rng):
    img = rng.integers(0, 256, (64, 64, 3)).astype(np.uint8)
    out = histogram_stretch(_sample(img), CFG64)
    # already spans [0,255] at the percentiles, so the remap is ~identity
    delta = np.abs(out.pixels.astype(int) - img.astype(int))
    assert np.percentile(delta, 99) <= 3


def test_stretch_constant_channel_warns_and_passes_through():
    img = np.full((32, 32, 3), 200, np.uint8)
    with pytest.warns(DegenerateChannelWarning):
        out = histogram_stretch(_sample(img), CFG64)
    np.testing.assert_array_equal(out.pixels, img)


def test_stretch_matches_scalar_remap_oracle(rng):
    """Narrow-band channel vs a per-pixel scalar remap computed independently."""
    chan = rng.integers(100, 151, (64, 64)).astype(np.uint8)
    img = np.stack([chan] * 3, axis=-1)
    out = histogram_stretch(_sample(img), CFG64).pixels

    lo, hi = np.percentile(chan, [1.0, 99.0])
    oracle = np.empty_like(chan)
    for i in range(64):
        for j in range(64):
            v = (float(chan[i, j]) - lo) * 255.0 / (hi - lo)
            oracle[i, j] = np.uint8(min(255.0, max(0.0, round(v))))
    assert np.abs(out[:, :, 0].astype(int) - oracle.astype(int)).max() <= 1
    assert out.min() == 0 and out.max() == 255


def test_stretch_monotone_per_channel(rng):
    img = rng.integers(0, 256, (48, 48, 3)).astype(np.uint8)
    out = histogram_stretch(_sample(img), CFG64).pixels
    for c in range(3):
        xs = img[:, :, c].ravel()
        ys = out[:, :, c].ravel()
        order = np.argsort(xs, kind="stable")
        assert np.all(np.diff(ys[order].astype(int)) >= 0)


def test_stretch_near_idempotent(rng):
    for seed in range(5):
        img = np.random.default_rng(seed).integers(0, 256, (48, 48, 3)).astype(np.uint8)
        once = histogram_stretch(_sample(img), CFG64)
        twice = histogram_stretch(once, CFG64)
        assert np.abs(once.pixels.astype(int) - twice.pixels.astype(int)).max() <= 1


def test_preprocess_preserves_labels(rng):
    img = rng.integers(0, 255, (77, 55, 3)).astype(np.uint8)
    out = preprocess(ImageSample("src/x.png", img, 9, "src"), CFG64)
    assert out.pixels.shape == (64, 64, 3)
    assert (out.image_id, out.count, out.source_id) == ("src/x.png", 9, "src")


def test_config_validation():
    with pytest.raises(ValueError):
        PreprocessConfig(target_size=8)
    with pytest.raises(ValueError):
        PreprocessConfig(stretch_low=99.0, stretch_high=1.0)
