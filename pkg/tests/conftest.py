import numpy as np
import pytest

from leafcount.datasets import ImageSample
from leafcount.model import BackboneSpec, HeadSpec, build_model


def make_samples(n, source, counts=None, size=4, seed=None):
    """Tiny in-memory samples for logic tests that never look at pixels."""
    rng = np.random.default_rng(abs(hash(source)) % 2**31 if seed is None else seed)
    if counts is None:
        counts = rng.integers(1, 12, n)
    pixels = np.zeros((size, size, 3), np.uint8)
    return [ImageSample(f"{source}/f{i:04d}.png", pixels, int(c), source)
            for i, c in enumerate(counts)]


def tiny_network(seed=0, input_size=32, feature_dim=8, fc1=16, fc2=8,
                 l2=0.01, dtype=np.float32):
    return build_model(
        BackboneSpec(name="tiny-conv", feature_dim=feature_dim),
        HeadSpec(fc1_units=fc1, fc2_units=fc2, fc2_activity_l2=l2),
        input_size, seed=seed, dtype=dtype,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
