import numpy as np
import pytest
from scipy import stats

from leafcount.augment import (
    AffineParams,
    AugmentConfig,
    EpochPlan,
    apply_affine,
    draw_affine_params,
    epoch_stream,
    random_affine,
)
from leafcount.datasets import ImageSample


def _pattern(size=64, seed=0):
    return np.random.default_rng(seed).integers(0, 255, (size, size, 3)).astype(np.uint8)


def _sample(pixels, count=5):
    return ImageSample("t/p.png", pixels, count, "t")


def test_identity_config_is_pixel_exact(rng):
    cfg = AugmentConfig.identity(seed=0)
    sample = _sample(_pattern())
    out = random_affine(sample, cfg, np.random.default_rng(0))
    np.testing.assert_array_equal(out.pixels, sample.pixels)


def test_labels_survive_any_transform(rng):
    cfg = AugmentConfig(seed=0)
    sample = _sample(_pattern(), count=7)
    for i in range(20):
        out = random_affine(sample, cfg, np.random.default_rng(i))
        assert out.count == 7
        assert out.image_id == sample.image_id
        assert out.pixels.shape == sample.pixels.shape
        assert out.pixels.dtype == np.uint8


def test_quarter_turn_matches_index_permutation():
    """90 degrees with no zoom must equal the exact rot90 permutation."""
    pattern = _pattern(seed=3)
    rotated = apply_affine(pattern, 90.0, 1.0)
    oracle = np.rot90(pattern, k=1)
    assert np.abs(rotated.astype(int) - oracle.astype(int)).max() <= 1


def test_flips_are_exact():
    pattern = _pattern(seed=4)
    np.testing.assert_array_equal(apply_affine(pattern, 0.0, 1.0, flip_h=True),
                                  pattern[:, ::-1])
    np.testing.assert_array_equal(apply_affine(pattern, 0.0, 1.0, flip_v=True),
                                  pattern[::-1, :])


def test_zoom_magnifies_center_content():
    blob = np.zeros((64, 64, 3), np.uint8)
    blob[28:36, 28:36] = 200
    zoomed = apply_affine(blob, 0.0, 2.0)
    assert (zoomed > 100).sum() > (blob > 100).sum()


def test_rotation_fills_edges_by_replication():
    # constant image stays constant under any rotation with replicate border
    flat = np.full((64, 64, 3), 91, np.uint8)
    out = apply_affine(flat, 37.0, 1.0)
    assert np.all(out == 91)


def test_epoch_plan_arithmetic():
    plan = EpochPlan.for_training_set(50)
    assert plan.steps_per_epoch == 100
    assert plan.batch_size == 6
    assert plan.samples_per_epoch == 600  # 12 x n_train
    with pytest.raises(ValueError):
        EpochPlan(steps_per_epoch=0, batch_size=6)


def _trace(samples, cfg, plan, epoch=0):
    return [(p.base_id, p.angle, p.zoom, p.flip_h, p.flip_v)
            for batch in epoch_stream(samples, cfg, plan, epoch=epoch)
            for p in batch.params]


def test_epoch_stream_count_and_determinism():
    samples = [
        ImageSample(f"s/{i}.png", _pattern(32, i), i % 4, "s") for i in range(50)
    ]
    cfg = AugmentConfig(seed=9)
    plan = EpochPlan.for_training_set(50)
    t1 = _trace(samples, cfg, plan)
    t2 = _trace(samples, cfg, plan)
    assert len(t1) == 600
    assert t1 == t2
    assert _trace(samples, cfg, plan, epoch=1) != t1
    assert _trace(samples, AugmentConfig(seed=10), plan) != t1


def test_epoch_stream_single_image():
    samples = [ImageSample("s/only.png", _pattern(32), 2, "s")]
    plan = EpochPlan.for_training_set(1)
    batches = list(epoch_stream(samples, AugmentConfig(seed=1), plan))
    assert len(batches) == 2
    for batch in batches:
        assert len(batch.samples) == 6
        assert all(s.image_id == "s/only.png" for s in batch.samples)
        assert all(s.count == 2 for s in batch.samples)


def test_epoch_stream_batches_are_consistent():
    samples = [ImageSample(f"s/{i}.png", _pattern(32, i), i, "s") for i in range(4)]
    plan = EpochPlan(steps_per_epoch=3, batch_size=5)
    for batch in epoch_stream(samples, AugmentConfig(seed=2), plan):
        assert len(batch.samples) == len(batch.params) == 5
        for s, p in zip(batch.samples, batch.params):
            assert s.image_id == p.base_id


def test_parameter_distributions():
    cfg = AugmentConfig(rotation_range=170.0, zoom_range=0.1, seed=0)
    draws = [draw_affine_params(cfg, np.random.default_rng((0, 0, i, 0)))
             for i in range(4000)]
    angles = np.array([d.angle for d in draws])
    zooms = np.array([d.zoom for d in draws])
    assert stats.kstest(angles, stats.uniform(loc=0, scale=170).cdf).pvalue > 0.01
    assert zooms.min() >= 1.0 and zooms.max() <= 1.1
    assert abs(np.mean([d.flip_h for d in draws]) - 0.5) <= 0.03
    assert abs(np.mean([d.flip_v for d in draws]) - 0.5) <= 0.03


def test_disabled_flips_never_fire():
    cfg = AugmentConfig(flip_horizontal=False, flip_vertical=False, seed=0)
    draws = [draw_affine_params(cfg, np.random.default_rng(i)) for i in range(200)]
    assert not any(d.flip_h or d.flip_v for d in draws)


def test_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(rotation_range=400.0)
    with pytest.raises(ValueError):
        AugmentConfig(zoom_range=1.5)
