import numpy as np
import pytest

from leafcount.datasets import ImageSample
from leafcount.exceptions import BuildError, CheckpointError, ShapeError
from leafcount.model import (
    BackboneSpec,
    HeadSpec,
    build_model,
    load_checkpoint,
    register_backbone,
    round_count,
    save_backbone,
    save_checkpoint,
)
from leafcount.nn import Dense, num_params

from conftest import tiny_network
from test_nn import finite_difference_check


def test_head_param_count_formula():
    head = HeadSpec()  # 1024 / 512
    f = 24
    expected = f * 1024 + 1024 + 1024 * 512 + 512 + 512 * 1 + 1
    assert head.param_count(f) == expected
    net = build_model(BackboneSpec(feature_dim=f), head, 32, seed=0)
    head_params = net.params()[net.n_backbone_params:]
    assert sum(p.size for p in head_params) == expected


def test_tiny_conv_forward_shape():
    net = build_model(BackboneSpec(feature_dim=64),
                      HeadSpec(fc1_units=64, fc2_units=32), 64, seed=0)
    out = net.predict_raw(np.zeros((1, 64, 64, 3), np.uint8))
    assert out.shape == (1,)
    assert np.isfinite(out[0])


def test_missing_pretrained_artifact():
    spec = BackboneSpec(feature_dim=8, pretrained_weights="/nonexistent/w.npz")
    with pytest.raises(BuildError, match="artifact"):
        build_model(spec, HeadSpec(fc1_units=8, fc2_units=4), 32, seed=0)


def test_backbone_artifact_round_trip(tmp_path):
    donor = tiny_network(seed=3)
    path = tmp_path / "backbone.npz"
    save_backbone(donor, path)
    spec = BackboneSpec(feature_dim=8, pretrained_weights=str(path))
    net = build_model(spec, HeadSpec(fc1_units=16, fc2_units=8), 32, seed=99)
    for a, b in zip(net.backbone_params(), donor.backbone_params()):
        np.testing.assert_array_equal(a, b)


def test_backbone_artifact_shape_mismatch(tmp_path):
    donor = tiny_network(seed=3, feature_dim=16)
    path = tmp_path / "backbone16.npz"
    save_backbone(donor, path)
    spec = BackboneSpec(feature_dim=8, pretrained_weights=str(path))
    with pytest.raises(BuildError, match="backbone_000"):
        build_model(spec, HeadSpec(fc1_units=16, fc2_units=8), 32, seed=0)


def test_unknown_backbone_name():
    with pytest.raises(BuildError, match="unknown backbone"):
        build_model(BackboneSpec(name="residual-50-pretrained", feature_dim=2048),
                    HeadSpec(), 320, seed=0)


def test_backbone_registry_is_pluggable():
    def flat_backbone(spec, input_size, rng, dtype):
        from leafcount.nn import Flatten
        return [Flatten()]

    register_backbone("flat-test", flat_backbone)
    spec = BackboneSpec(name="flat-test", feature_dim=8 * 8 * 3)
    net = build_model(spec, HeadSpec(fc1_units=4, fc2_units=2), 8, seed=0)
    assert net.predict_raw(np.zeros((2, 8, 8, 3), np.uint8)).shape == (2,)


def test_tiny_conv_spec_validation():
    with pytest.raises(BuildError, match="divisible by 8"):
        build_model(BackboneSpec(feature_dim=8), HeadSpec(fc1_units=4, fc2_units=2),
                    36, seed=0)
    with pytest.raises(BuildError, match="multiple of 4"):
        build_model(BackboneSpec(feature_dim=6), HeadSpec(fc1_units=4, fc2_units=2),
                    32, seed=0)


def test_predict_is_deterministic_and_shape_stable(rng):
    net = tiny_network(seed=1)
    img = rng.integers(0, 255, (32, 32, 3)).astype(np.uint8)
    batch = np.stack([img, img, img])
    out = net.predict_raw(batch)
    assert out.shape == (3,)
    assert out[0] == out[1] == out[2]
    again = net.predict_raw(batch)
    np.testing.assert_array_equal(out, again)


def test_predict_accepts_samples_and_arrays(rng):
    net = tiny_network(seed=1)
    img = rng.integers(0, 255, (32, 32, 3)).astype(np.uint8)
    s = ImageSample("t/x.png", img, 3, "t")
    np.testing.assert_array_equal(net.predict_raw([s]), net.predict_raw(img))


def test_predict_shape_errors(rng):
    net = tiny_network(seed=1)
    with pytest.raises(ShapeError):
        net.predict_raw(np.zeros((1, 16, 16, 3), np.uint8))
    with pytest.raises(ShapeError):
        net.predict_raw(np.zeros((1, 32, 32, 4), np.uint8))


def test_constant_head_outputs_bias(rng):
    """Zero the final layer weights and set its bias: output must equal it."""
    net = tiny_network(seed=2)
    final = [l for l in net.net.layers if isinstance(l, Dense)][-1]
    final.W[:] = 0.0
    final.b[:] = 4.0
    x = rng.integers(0, 255, (5, 32, 32, 3)).astype(np.uint8)
    np.testing.assert_allclose(net.predict_raw(x), 4.0, atol=1e-6)
    np.testing.assert_array_equal(net.predict_count(x), [4, 4, 4, 4, 4])


def test_round_count_rules():
    raw = np.array([5.49, 5.5, -0.3, 7.0, 0.49, 0.5, 2.5, 3.5])
    np.testing.assert_array_equal(round_count(raw), [5, 6, 0, 7, 0, 1, 3, 4])


def test_predict_count_is_clamped_round_of_raw(rng):
    """predict_count must equal clamp(round(predict_raw)) for arbitrary raw values."""
    net = tiny_network(seed=2)
    final = [l for l in net.net.layers if isinstance(l, Dense)][-1]
    final.W[:] = 0.0
    x = rng.integers(0, 255, (1, 32, 32, 3)).astype(np.uint8)
    for raw in [-3.2, -0.5, 0.0, 0.49, 0.51, 3.49, 3.5, 8.999]:
        final.b[:] = raw
        raw_out = net.predict_raw(x)
        assert raw_out[0] == pytest.approx(raw, abs=1e-5)
        assert net.predict_count(x)[0] == round_count(raw_out)[0]


def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    net = tiny_network(seed=7)
    probe = rng.integers(0, 255, (4, 32, 32, 3)).astype(np.uint8)
    before = net.predict_raw(probe)
    path = tmp_path / "ckpt.npz"
    save_checkpoint(net, path, extra_meta={"preprocess": {"target_size": 32}})
    loaded, extra = load_checkpoint(path)
    assert extra == {"preprocess": {"target_size": 32}}
    after = loaded.predict_raw(probe)
    np.testing.assert_array_equal(before, after)
    for a, b in zip(net.params(), loaded.params()):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "missing.npz")
    bad = tmp_path / "bad.npz"
    np.savez(bad, foo=np.zeros(3))
    with pytest.raises(CheckpointError, match="meta"):
        load_checkpoint(bad)


def test_trainable_flag_freezes_backbone():
    frozen = build_model(BackboneSpec(feature_dim=8, trainable=False),
                         HeadSpec(fc1_units=16, fc2_units=8), 32, seed=0)
    assert len(frozen.trainable_params()) == len(frozen.params()) - frozen.n_backbone_params
    thawed = tiny_network(seed=0)
    assert len(thawed.trainable_params()) == len(thawed.params())


def test_network_gradcheck_small():
    net = tiny_network(seed=5, feature_dim=8, dtype=np.float64)
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (2, 32, 32, 3))
    y = rng.uniform(1, 8, (2, 1))
    assert finite_difference_check(net.net, x, y, n_coords=10) < 1e-5
    assert num_params(net.net) < 10_000
