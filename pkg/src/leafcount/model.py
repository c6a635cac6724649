"""Count-regression network: pluggable convolutional backbone + FC head.

The head follows the counting-by-regression design: two fully connected
layers with ReLU activations (1024 and 512 units by default), an L2
activity penalty on the second one, and a single linear output node whose
value is the real-valued count. Integer counts come from rounding the raw
output half away from zero and clamping at 0.

Backbones are looked up in a registry by name so a full-scale residual
network can be plugged in without touching this module; the built-in
``tiny-conv`` backbone (three conv/pool stages and a global average pool)
keeps the whole pipeline runnable on a CPU.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .datasets import ImageSample
from .exceptions import BuildError, CheckpointError, ShapeError

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class BackboneSpec:
    name: str = "tiny-conv"
    feature_dim: int = 24
    pretrained_weights: str | None = None
    trainable: bool = True

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ValueError(f"feature_dim must be >= 1, got {self.feature_dim}")


@dataclass(frozen=True)
class HeadSpec:
    fc1_units: int = 1024
    fc2_units: int = 512
    fc2_activity_l2: float = 0.01

    def __post_init__(self):
        if self.fc1_units < 1 or self.fc2_units < 1:
            raise ValueError("fc1_units and fc2_units must be >= 1")
        if self.fc2_activity_l2 < 0:
            raise ValueError(f"fc2_activity_l2 must be >= 0, got {self.fc2_activity_l2}")

    def param_count(self, feature_dim: int) -> int:
        """Closed-form head parameter count given the backbone feature width."""
        return (feature_dim * self.fc1_units + self.fc1_units
                + self.fc1_units * self.fc2_units + self.fc2_units
                + self.fc2_units + 1)


BackboneBuilder = Callable[[BackboneSpec, int, np.random.Generator, type], list[nn.Layer]]

_BACKBONES: dict[str, BackboneBuilder] = {}


def register_backbone(name: str, builder: BackboneBuilder) -> None:
    _BACKBONES[name] = builder


def backbone_names() -> list[str]:
    return sorted(_BACKBONES)


def _build_tiny_conv(spec: BackboneSpec, input_size: int,
                     rng: np.random.Generator, dtype: type) -> list[nn.Layer]:
    f = spec.feature_dim
    if f % 4 != 0 or f < 4:
        raise BuildError(f"tiny-conv feature_dim must be a positive multiple of 4, got {f}")
    if input_size % 8 != 0:
        raise BuildError(f"tiny-conv input_size must be divisible by 8, got {input_size}")
    c1, c2, c3 = f // 4, f // 2, f
    return [
        nn.Conv3x3(3, c1, rng, dtype=dtype, need_input_grad=False),
        nn.ReLU(), nn.MaxPool2(),
        nn.Conv3x3(c1, c2, rng, dtype=dtype), nn.ReLU(), nn.MaxPool2(),
        nn.Conv3x3(c2, c3, rng, dtype=dtype), nn.ReLU(), nn.MaxPool2(),
        nn.GlobalAvgPool(),
    ]


register_backbone("tiny-conv", _build_tiny_conv)


class RegressionNetwork:
    """A built network: backbone spec + head spec + parameters."""

    def __init__(self, backbone_spec: BackboneSpec, head_spec: HeadSpec,
                 input_size: int, net: nn.Sequential, n_backbone_params: int,
                 dtype=np.float32):
        self.backbone_spec = backbone_spec
        self.head_spec = head_spec
        self.input_size = input_size
        self.net = net
        self.n_backbone_params = n_backbone_params
        self.dtype = dtype

    # --- inference ---------------------------------------------------------

    def to_batch(self, images) -> np.ndarray:
        """Normalize accepted image containers to a float batch in [0, 1]."""
        if isinstance(images, ImageSample):
            images = [images]
        if isinstance(images, np.ndarray):
            arr = images
            if arr.ndim == 3:
                arr = arr[None]
        else:
            arr = np.stack([np.asarray(s.pixels) for s in images])
        if arr.ndim != 4 or arr.shape[3] != 3:
            raise ShapeError(f"expected (B, H, W, 3) images, got shape {arr.shape}")
        if arr.shape[1] != self.input_size or arr.shape[2] != self.input_size:
            raise ShapeError(
                f"network expects {self.input_size}x{self.input_size} inputs, "
                f"got {arr.shape[1]}x{arr.shape[2]}"
            )
        if arr.dtype == np.uint8:
            return arr.astype(self.dtype) / self.dtype(255)
        return arr.astype(self.dtype, copy=False)

    def predict_raw(self, images, batch_size: int = 64) -> np.ndarray:
        """Real-valued count per image (deterministic; no training-time noise)."""
        x = self.to_batch(images)
        chunks = [
            self.net.forward(x[i:i + batch_size], train=False)[:, 0]
            for i in range(0, len(x), batch_size)
        ]
        return np.concatenate(chunks).astype(np.float64)

    def predict_count(self, images, batch_size: int = 64) -> np.ndarray:
        return round_count(self.predict_raw(images, batch_size=batch_size))

    # --- parameters --------------------------------------------------------

    def params(self) -> list[np.ndarray]:
        return self.net.params()

    def grads(self) -> list[np.ndarray]:
        return self.net.grads()

    def trainable_params(self) -> list[np.ndarray]:
        p = self.net.params()
        return p if self.backbone_spec.trainable else p[self.n_backbone_params:]

    def trainable_grads(self) -> list[np.ndarray]:
        g = self.net.grads()
        return g if self.backbone_spec.trainable else g[self.n_backbone_params:]

    def backbone_params(self) -> list[np.ndarray]:
        return self.net.params()[:self.n_backbone_params]

    def get_state(self) -> list[np.ndarray]:
        return [p.copy() for p in self.net.params()]

    def set_state(self, state: Sequence[np.ndarray]) -> None:
        params = self.net.params()
        if len(state) != len(params):
            raise CheckpointError(f"state has {len(state)} arrays, network has {len(params)}")
        for p, s in zip(params, state):
            p[:] = s


def round_count(raw: np.ndarray) -> np.ndarray:
    """Round half away from zero, then clamp below at 0 (integer counts)."""
    raw = np.asarray(raw, dtype=np.float64)
    rounded = np.copysign(np.floor(np.abs(raw) + 0.5), raw)
    return np.maximum(rounded, 0.0).astype(np.int64)


def build_model(backbone: BackboneSpec, head: HeadSpec, input_size: int,
                seed: int = 0, dtype=np.float32) -> RegressionNetwork:
    """Assemble backbone + head; backbone weights come from the pretrained
    artifact when one is referenced, head weights are freshly initialized."""
    builder = _BACKBONES.get(backbone.name)
    if builder is None:
        raise BuildError(
            f"unknown backbone {backbone.name!r}; registered: {backbone_names()}"
        )
    rng = np.random.default_rng(seed)
    backbone_layers = builder(backbone, input_size, rng, dtype)
    n_backbone_params = sum(len(l.params()) for l in backbone_layers)
    head_layers = [
        nn.Dense(backbone.feature_dim, head.fc1_units, rng, dtype=dtype),
        nn.ReLU(),
        nn.Dense(head.fc1_units, head.fc2_units, rng, dtype=dtype),
        nn.ReLU(),
        nn.ActivityL2(head.fc2_activity_l2),
        nn.Dense(head.fc2_units, 1, rng, dtype=dtype, init="linear"),
    ]
    net = nn.Sequential(backbone_layers + head_layers)
    network = RegressionNetwork(backbone, head, input_size, net, n_backbone_params, dtype)

    # probe the backbone's actual feature width against the declared one
    probe = np.zeros((1, input_size, input_size, 3), dtype=dtype)
    feat = nn.Sequential(backbone_layers).forward(probe)
    if feat.ndim != 2 or feat.shape[1] != backbone.feature_dim:
        raise BuildError(
            f"backbone {backbone.name!r} produced features of shape {feat.shape}, "
            f"declared feature_dim is {backbone.feature_dim}"
        )

    if backbone.pretrained_weights is not None:
        _load_backbone_weights(network, backbone.pretrained_weights)
    return network


def _backbone_keys(network: RegressionNetwork) -> list[str]:
    return [f"backbone_{i:03d}" for i in range(network.n_backbone_params)]


def save_backbone(network: RegressionNetwork, path: Path | str) -> None:
    """Persist backbone weights as a reusable pretrained artifact."""
    arrays = dict(zip(_backbone_keys(network), network.backbone_params()))
    np.savez(path, **arrays)


def _load_backbone_weights(network: RegressionNetwork, path: Path | str) -> None:
    path = Path(path)
    if not path.is_file():
        raise BuildError(f"pretrained weight artifact not found: {path}")
    with np.load(path) as data:
        params = network.backbone_params()
        keys = _backbone_keys(network)
        missing = [k for k in keys if k not in data.files]
        if missing:
            raise BuildError(f"{path}: weight artifact is missing arrays {missing}")
        for key, param in zip(keys, params):
            loaded = data[key]
            if loaded.shape != param.shape:
                raise BuildError(
                    f"{path}: array {key} has shape {loaded.shape}, "
                    f"layer expects {param.shape}"
                )
            param[:] = loaded.astype(param.dtype)


# --- checkpoints -----------------------------------------------------------


def save_checkpoint(network: RegressionNetwork, path: Path | str,
                    extra_meta: dict | None = None) -> None:
    """Self-describing checkpoint: specs, input size, version, all weights."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "backbone": asdict(network.backbone_spec),
        "head": asdict(network.head_spec),
        "input_size": network.input_size,
        "dtype": np.dtype(network.dtype).name,
        "extra": extra_meta or {},
    }
    arrays = {f"param_{i:03d}": p for i, p in enumerate(network.params())}
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
             **arrays)


def load_checkpoint(path: Path | str) -> tuple[RegressionNetwork, dict]:
    """Rebuild a network from a checkpoint; weights restore bit-exactly."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        data = np.load(path)
    except Exception as exc:
        raise CheckpointError(f"could not read checkpoint {path}: {exc}") from exc
    with data:
        if "meta" not in data.files:
            raise CheckpointError(f"{path}: not a leafcount checkpoint (no meta entry)")
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {meta.get('version')}"
            )
        backbone = BackboneSpec(**{**meta["backbone"], "pretrained_weights": None})
        head = HeadSpec(**meta["head"])
        dtype = np.dtype(meta["dtype"]).type
        network = build_model(backbone, head, meta["input_size"], dtype=dtype)
        params = network.params()
        for i, p in enumerate(params):
            key = f"param_{i:03d}"
            if key not in data.files:
                raise CheckpointError(f"{path}: missing weight array {key}")
            loaded = data[key]
            if loaded.shape != p.shape:
                raise CheckpointError(
                    f"{path}: array {key} has shape {loaded.shape}, expected {p.shape}"
                )
            p[:] = loaded
    return network, meta.get("extra", {})
