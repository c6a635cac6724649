"""Ensembles: k models trained on disjoint equal data portions, fused by averaging.

Fusion averages the raw (pre-rounding) member outputs and rounds once at
the end; averaging already-rounded integers would throw information away.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .augment import AugmentConfig
from .datasets import ImageSample, SplitPlan, make_split, partition_equal
from .exceptions import FusionError
from .model import RegressionNetwork, load_checkpoint, round_count, save_checkpoint
from .training import TrainConfig, TrainHistory, train

MANIFEST_VERSION = 1
FUSION_RULE = "mean-raw-then-round"


@dataclass(frozen=True)
class Ensemble:
    members: tuple[RegressionNetwork, ...]

    def __post_init__(self):
        if len(self.members) < 1:
            raise ValueError("ensemble needs at least one member")
        sizes = {m.input_size for m in self.members}
        if len(sizes) != 1:
            raise ValueError(f"members disagree on input size: {sorted(sizes)}")
        object.__setattr__(self, "members", tuple(self.members))

    @property
    def k(self) -> int:
        return len(self.members)

    @property
    def input_size(self) -> int:
        return self.members[0].input_size

    def predict_raw(self, images, batch_size: int = 64) -> np.ndarray:
        outputs = [m.predict_raw(images, batch_size=batch_size) for m in self.members]
        return np.mean(outputs, axis=0)

    def predict_count(self, images, batch_size: int = 64) -> np.ndarray:
        return round_count(self.predict_raw(images, batch_size=batch_size))


def fuse_predictions(member_outputs: Sequence[Sequence[float]]) -> np.ndarray:
    """Average raw member outputs per image, then round half away from zero
    and clamp at zero."""
    if len(member_outputs) < 1:
        raise FusionError("need at least one member output list")
    lengths = {len(o) for o in member_outputs}
    if len(lengths) != 1:
        raise FusionError(f"member output lengths differ: {sorted(lengths)}")
    stacked = np.asarray(member_outputs, dtype=np.float64)
    return round_count(stacked.mean(axis=0))


@dataclass(frozen=True)
class EnsembleTrainResult:
    ensemble: Ensemble
    histories: tuple[TrainHistory, ...]
    portion_ids: tuple[tuple[str, ...], ...]  # training-portion ids per member
    splits: tuple[SplitPlan, ...]  # each member's internal split of its portion


def train_ensemble(samples: Sequence[ImageSample],
                   model_factory: Callable[[int], RegressionNetwork],
                   aug: AugmentConfig, config: TrainConfig, k: int = 4,
                   fractions=(0.5, 0.25, 0.25)) -> EnsembleTrainResult:
    """Partition the pool into k equal portions and train one member per
    portion, each with its own internal train/val/test split."""
    portions = partition_equal(samples, k, seed=config.seed)
    members = []
    histories = []
    portion_ids = []
    splits = []
    for i, portion in enumerate(portions):
        member_seed = config.seed + i
        split = make_split(portion, fractions=fractions, seed=member_seed)
        network = model_factory(member_seed)
        member_aug = replace(aug, seed=aug.seed + i)
        network, history = train(network, portion, split, member_aug, config)
        members.append(network)
        histories.append(history)
        portion_ids.append(tuple(s.image_id for s in portion))
        splits.append(split)
    return EnsembleTrainResult(
        ensemble=Ensemble(members=tuple(members)),
        histories=tuple(histories),
        portion_ids=tuple(portion_ids),
        splits=tuple(splits),
    )


def save_ensemble(result_or_ensemble, directory: Path | str,
                  extra_meta: dict | None = None) -> Path:
    """Write member checkpoints plus a manifest naming them and the fusion rule."""
    ensemble = getattr(result_or_ensemble, "ensemble", result_or_ensemble)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    member_files = []
    for i, member in enumerate(ensemble.members):
        name = f"member_{i}.npz"
        save_checkpoint(member, directory / name, extra_meta=extra_meta)
        member_files.append(name)
    manifest = {
        "version": MANIFEST_VERSION,
        "fusion_rule": FUSION_RULE,
        "members": member_files,
        "extra": extra_meta or {},
        "note": "each member was trained on its own disjoint data portion "
                "with an internal train/val/test split",
    }
    manifest_path = directory / "ensemble.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest_path


def load_ensemble(manifest_path: Path | str) -> Ensemble:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("version") != MANIFEST_VERSION:
        raise FusionError(f"unsupported ensemble manifest version {manifest.get('version')}")
    members = []
    for name in manifest["members"]:
        network, _ = load_checkpoint(manifest_path.parent / name)
        members.append(network)
    return Ensemble(members=tuple(members))
