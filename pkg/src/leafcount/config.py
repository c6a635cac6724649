"""Declarative run configuration for the command-line pipeline.

A single YAML file captures everything a run needs (datasets, pooling,
preprocessing, augmentation, model, training, ensembling, occlusion and
seeds), so re-running a saved config reproduces the run. Validation is
strict: unknown keys are rejected, and the fully resolved ("effective")
config round-trips through YAML.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .exceptions import ConfigError


def _require_mapping(value, where: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{where} must be a mapping, got {type(value).__name__}")
    return dict(value)


def _check_keys(d: dict, allowed: set[str], where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


def _get(d: dict, key: str, default, caster, where: str):
    if key not in d or d[key] is None:
        return default
    try:
        return caster(d[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {where}.{key}: {exc}") from exc


def _as_bool(v) -> bool:
    if not isinstance(v, bool):
        raise ValueError(f"expected boolean, got {v!r}")
    return v


@dataclass(frozen=True)
class DatasetEntry:
    id: str
    root: str


@dataclass(frozen=True)
class PreprocessSection:
    target_size: int = 320
    stretch_low: float = 1.0
    stretch_high: float = 99.0


@dataclass(frozen=True)
class AugmentSection:
    enabled: bool = True
    rotation_range: float = 170.0
    zoom_range: float = 0.10
    flip_horizontal: bool = True
    flip_vertical: bool = True


@dataclass(frozen=True)
class ModelSection:
    backbone: str = "tiny-conv"
    feature_dim: int = 24
    pretrained_weights: str | None = None
    trainable: bool = True
    fc1_units: int = 1024
    fc2_units: int = 512
    fc2_activity_l2: float = 0.01


@dataclass(frozen=True)
class TrainSection:
    learning_rate: float = 0.001
    max_epochs: int = 200
    patience: int = 10
    min_delta: float = 0.01
    batch_size: int = 6
    steps_multiplier: int = 2


@dataclass(frozen=True)
class SplitSection:
    fractions: tuple[float, float, float] = (0.5, 0.25, 0.25)


@dataclass(frozen=True)
class EnsembleSection:
    k: int = 1


@dataclass(frozen=True)
class OcclusionSection:
    window_size: int = 60
    stride: int = 20
    fill_value: int = 0


@dataclass(frozen=True)
class RunConfig:
    seed: int
    output_dir: str
    datasets: tuple[DatasetEntry, ...]
    pool: tuple[str, ...]
    preprocess: PreprocessSection
    augment: AugmentSection
    model: ModelSection
    train: TrainSection
    split: SplitSection
    ensemble: EnsembleSection
    occlusion: OcclusionSection

    # seeds for the individual stages are derived from the run seed so one
    # number pins the whole run
    @property
    def split_seed(self) -> int:
        return self.seed

    @property
    def init_seed(self) -> int:
        return self.seed + 1

    @property
    def augment_seed(self) -> int:
        return self.seed + 2

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = _require_mapping(raw, "config")
        _check_keys(raw, {"seed", "output_dir", "datasets", "pool", "preprocess",
                          "augment", "model", "train", "split", "ensemble",
                          "occlusion"}, "config")
        if "output_dir" not in raw:
            raise ConfigError("config needs an output_dir")
        if "datasets" not in raw or not raw["datasets"]:
            raise ConfigError("config needs a non-empty datasets list")

        entries = []
        for i, item in enumerate(raw["datasets"]):
            item = _require_mapping(item, f"datasets[{i}]")
            _check_keys(item, {"id", "root"}, f"datasets[{i}]")
            if "id" not in item or "root" not in item:
                raise ConfigError(f"datasets[{i}] needs both 'id' and 'root'")
            entries.append(DatasetEntry(id=str(item["id"]), root=str(item["root"])))
        ids = [e.id for e in entries]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate dataset ids: {ids}")

        pool = raw.get("pool")
        if pool is None:
            pool = ids
        if not isinstance(pool, (list, tuple)) or not pool:
            raise ConfigError("pool must be a non-empty list of dataset ids")
        missing = [p for p in pool if p not in ids]
        if missing:
            raise ConfigError(f"pool references undeclared dataset ids: {missing}")

        pre = _require_mapping(raw.get("preprocess"), "preprocess")
        _check_keys(pre, {"target_size", "stretch_low", "stretch_high"}, "preprocess")
        preprocess = PreprocessSection(
            target_size=_get(pre, "target_size", 320, int, "preprocess"),
            stretch_low=_get(pre, "stretch_low", 1.0, float, "preprocess"),
            stretch_high=_get(pre, "stretch_high", 99.0, float, "preprocess"),
        )

        aug = _require_mapping(raw.get("augment"), "augment")
        _check_keys(aug, {"enabled", "rotation_range", "zoom_range",
                          "flip_horizontal", "flip_vertical"}, "augment")
        augment = AugmentSection(
            enabled=_get(aug, "enabled", True, _as_bool, "augment"),
            rotation_range=_get(aug, "rotation_range", 170.0, float, "augment"),
            zoom_range=_get(aug, "zoom_range", 0.10, float, "augment"),
            flip_horizontal=_get(aug, "flip_horizontal", True, _as_bool, "augment"),
            flip_vertical=_get(aug, "flip_vertical", True, _as_bool, "augment"),
        )

        mdl = _require_mapping(raw.get("model"), "model")
        _check_keys(mdl, {"backbone", "feature_dim", "pretrained_weights", "trainable",
                          "fc1_units", "fc2_units", "fc2_activity_l2"}, "model")
        model = ModelSection(
            backbone=_get(mdl, "backbone", "tiny-conv", str, "model"),
            feature_dim=_get(mdl, "feature_dim", 24, int, "model"),
            pretrained_weights=_get(mdl, "pretrained_weights", None, str, "model"),
            trainable=_get(mdl, "trainable", True, _as_bool, "model"),
            fc1_units=_get(mdl, "fc1_units", 1024, int, "model"),
            fc2_units=_get(mdl, "fc2_units", 512, int, "model"),
            fc2_activity_l2=_get(mdl, "fc2_activity_l2", 0.01, float, "model"),
        )

        trn = _require_mapping(raw.get("train"), "train")
        _check_keys(trn, {"learning_rate", "max_epochs", "patience", "min_delta",
                          "batch_size", "steps_multiplier"}, "train")
        train = TrainSection(
            learning_rate=_get(trn, "learning_rate", 0.001, float, "train"),
            max_epochs=_get(trn, "max_epochs", 200, int, "train"),
            patience=_get(trn, "patience", 10, int, "train"),
            min_delta=_get(trn, "min_delta", 0.01, float, "train"),
            batch_size=_get(trn, "batch_size", 6, int, "train"),
            steps_multiplier=_get(trn, "steps_multiplier", 2, int, "train"),
        )

        spl = _require_mapping(raw.get("split"), "split")
        _check_keys(spl, {"fractions"}, "split")
        fractions = spl.get("fractions", [0.5, 0.25, 0.25])
        if not isinstance(fractions, (list, tuple)) or len(fractions) != 3:
            raise ConfigError("split.fractions must be a list of three numbers")
        split = SplitSection(fractions=tuple(float(f) for f in fractions))

        ens = _require_mapping(raw.get("ensemble"), "ensemble")
        _check_keys(ens, {"k"}, "ensemble")
        ensemble = EnsembleSection(k=_get(ens, "k", 1, int, "ensemble"))
        if ensemble.k < 1:
            raise ConfigError(f"ensemble.k must be >= 1, got {ensemble.k}")

        occ = _require_mapping(raw.get("occlusion"), "occlusion")
        _check_keys(occ, {"window_size", "stride", "fill_value"}, "occlusion")
        occlusion = OcclusionSection(
            window_size=_get(occ, "window_size", 60, int, "occlusion"),
            stride=_get(occ, "stride", 20, int, "occlusion"),
            fill_value=_get(occ, "fill_value", 0, int, "occlusion"),
        )

        return cls(
            seed=_get(raw, "seed", 0, int, "config"),
            output_dir=str(raw["output_dir"]),
            datasets=tuple(entries),
            pool=tuple(str(p) for p in pool),
            preprocess=preprocess,
            augment=augment,
            model=model,
            train=train,
            split=split,
            ensemble=ensemble,
            occlusion=occlusion,
        )

    @classmethod
    def from_yaml(cls, path: Path | str) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"could not parse {path}: {exc}") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        """Fully resolved config; parsing it back yields an equal RunConfig."""
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "datasets": [{"id": e.id, "root": e.root} for e in self.datasets],
            "pool": list(self.pool),
            "preprocess": {
                "target_size": self.preprocess.target_size,
                "stretch_low": self.preprocess.stretch_low,
                "stretch_high": self.preprocess.stretch_high,
            },
            "augment": {
                "enabled": self.augment.enabled,
                "rotation_range": self.augment.rotation_range,
                "zoom_range": self.augment.zoom_range,
                "flip_horizontal": self.augment.flip_horizontal,
                "flip_vertical": self.augment.flip_vertical,
            },
            "model": {
                "backbone": self.model.backbone,
                "feature_dim": self.model.feature_dim,
                "pretrained_weights": self.model.pretrained_weights,
                "trainable": self.model.trainable,
                "fc1_units": self.model.fc1_units,
                "fc2_units": self.model.fc2_units,
                "fc2_activity_l2": self.model.fc2_activity_l2,
            },
            "train": {
                "learning_rate": self.train.learning_rate,
                "max_epochs": self.train.max_epochs,
                "patience": self.train.patience,
                "min_delta": self.train.min_delta,
                "batch_size": self.train.batch_size,
                "steps_multiplier": self.train.steps_multiplier,
            },
            "split": {"fractions": list(self.split.fractions)},
            "ensemble": {"k": self.ensemble.k},
            "occlusion": {
                "window_size": self.occlusion.window_size,
                "stride": self.occlusion.stride,
                "fill_value": self.occlusion.fill_value,
            },
        }

    def to_yaml(self, path: Path | str) -> None:
        Path(path).write_text(
            yaml.safe_dump(self.to_dict(), sort_keys=False), encoding="utf-8"
        )


@dataclass(frozen=True)
class SynthConfigFile:
    """Schema of the YAML consumed by the synth command."""

    output_root: str
    dataset_id: str = "synthA"
    image_size: int = 64
    count_range: tuple[int, int] = (1, 8)
    shape: str = "disk"
    background_style: str = "flat"
    n_images: int = 100
    seed: int = 0

    @classmethod
    def from_yaml(cls, path: Path | str) -> "SynthConfigFile":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"could not parse {path}: {exc}") from exc
        raw = _require_mapping(raw, "synth config")
        _check_keys(raw, {"output_root", "dataset_id", "image_size", "count_range",
                          "shape", "background_style", "n_images", "seed"},
                    "synth config")
        if "output_root" not in raw:
            raise ConfigError("synth config needs an output_root")
        count_range = raw.get("count_range", [1, 8])
        if not isinstance(count_range, (list, tuple)) or len(count_range) != 2:
            raise ConfigError("count_range must be a two-element list [min, max]")
        return cls(
            output_root=str(raw["output_root"]),
            dataset_id=_get(raw, "dataset_id", "synthA", str, "synth config"),
            image_size=_get(raw, "image_size", 64, int, "synth config"),
            count_range=(int(count_range[0]), int(count_range[1])),
            shape=_get(raw, "shape", "disk", str, "synth config"),
            background_style=_get(raw, "background_style", "flat", str, "synth config"),
            n_images=_get(raw, "n_images", 100, int, "synth config"),
            seed=_get(raw, "seed", 0, int, "synth config"),
        )
