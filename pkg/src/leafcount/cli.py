"""Command-line entry point.

Subcommands: train, predict, eval, occlude, synth. Every command is driven
by files (YAML configs in, CSV/PNG/NPZ artifacts out) and is idempotent for
a fixed config and seed. Exit codes: 0 success, 2 config or data errors,
3 model or checkpoint compatibility errors, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import cv2
import numpy as np

from . import metrics as metrics_mod
from .augment import AugmentConfig, EpochPlan
from .config import RunConfig, SynthConfigFile
from .datasets import (
    IMAGE_EXTENSIONS,
    DatasetDescriptor,
    ImageSample,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    make_split,
    pool_datasets,
    save_split_plan,
    select_samples,
    write_dataset,
)
from .ensemble import load_ensemble, save_ensemble, train_ensemble
from .exceptions import (
    BuildError,
    CheckpointError,
    ConfigError,
    FusionError,
    LeafcountError,
    ShapeError,
    TrainingDivergedError,
)
from .model import BackboneSpec, HeadSpec, build_model, load_checkpoint, save_checkpoint
from .occlusion import OcclusionConfig, occlusion_map, render_heatmap, write_heatmap_csv
from .preprocess import PreprocessConfig, preprocess, preprocess_all
from .training import TrainConfig, train, write_history_csv

EXIT_OK = 0
EXIT_DATA = 2
EXIT_MODEL = 3
EXIT_DIVERGED = 4


def _augment_config(cfg: RunConfig) -> AugmentConfig:
    if not cfg.augment.enabled:
        return AugmentConfig.identity(seed=cfg.augment_seed)
    return AugmentConfig(
        rotation_range=cfg.augment.rotation_range,
        zoom_range=cfg.augment.zoom_range,
        flip_horizontal=cfg.augment.flip_horizontal,
        flip_vertical=cfg.augment.flip_vertical,
        seed=cfg.augment_seed,
    )


def _model_factory(cfg: RunConfig):
    backbone = BackboneSpec(
        name=cfg.model.backbone,
        feature_dim=cfg.model.feature_dim,
        pretrained_weights=cfg.model.pretrained_weights,
        trainable=cfg.model.trainable,
    )
    head = HeadSpec(
        fc1_units=cfg.model.fc1_units,
        fc2_units=cfg.model.fc2_units,
        fc2_activity_l2=cfg.model.fc2_activity_l2,
    )

    def factory(seed: int):
        return build_model(backbone, head, cfg.preprocess.target_size, seed=seed)

    return factory


def _preprocess_meta(cfg: RunConfig) -> dict:
    return {
        "preprocess": {
            "target_size": cfg.preprocess.target_size,
            "stretch_low": cfg.preprocess.stretch_low,
            "stretch_high": cfg.preprocess.stretch_high,
        }
    }


def _evaluate_to_files(preds: metrics_mod.PredictionSet, out_dir: Path) -> None:
    reports = metrics_mod.evaluate_by_source(preds)
    table = metrics_mod.format_table(reports)
    print(table)
    metrics_mod.write_predictions_csv(preds, out_dir / "predictions.csv")
    metrics_mod.write_report_csv(reports, out_dir / "metrics.csv")
    (out_dir / "metrics.txt").write_text(table + "\n", encoding="utf-8")


def cmd_train(args) -> int:
    cfg = RunConfig.from_yaml(args.config)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.to_yaml(out_dir / "config.effective.yaml")

    by_id = {}
    for entry in cfg.datasets:
        descriptor = DatasetDescriptor(dataset_id=entry.id, root_dir=entry.root)
        by_id[entry.id] = load_dataset(descriptor)
        print(f"loaded {len(by_id[entry.id])} samples from {entry.id} ({entry.root})")
    samples = pool_datasets([by_id[p] for p in cfg.pool])

    pre_cfg = PreprocessConfig(
        target_size=cfg.preprocess.target_size,
        stretch_low=cfg.preprocess.stretch_low,
        stretch_high=cfg.preprocess.stretch_high,
    )
    samples = preprocess_all(samples, pre_cfg)
    aug = _augment_config(cfg)
    train_cfg = TrainConfig(
        learning_rate=cfg.train.learning_rate,
        max_epochs=cfg.train.max_epochs,
        patience=cfg.train.patience,
        min_delta=cfg.train.min_delta,
        seed=cfg.seed,
    )
    factory = _model_factory(cfg)
    meta = _preprocess_meta(cfg)

    if cfg.ensemble.k == 1:
        split = make_split(samples, fractions=cfg.split.fractions, seed=cfg.split_seed)
        save_split_plan(split, out_dir / "split.txt")
        network = factory(cfg.init_seed)
        plan = EpochPlan.for_training_set(
            len(split.train_ids), cfg.train.steps_multiplier, cfg.train.batch_size
        )
        network, history = train(network, samples, split, aug, train_cfg, plan=plan,
                                 log_path=out_dir / "history.csv")
        save_checkpoint(network, out_dir / "checkpoint.npz", extra_meta=meta)
        print(f"trained {history.epochs_run} epochs "
              f"(best {history.best_epoch}, {history.stop_reason})")
        test_samples = select_samples(samples, split.test_ids)
        preds = metrics_mod.PredictionSet(
            image_ids=tuple(s.image_id for s in test_samples),
            predicted=network.predict_count(test_samples),
            true=np.array([s.count for s in test_samples]),
            sources=tuple(s.source_id for s in test_samples),
        )
        _evaluate_to_files(preds, out_dir)
    else:
        result = train_ensemble(samples, factory, aug, train_cfg, k=cfg.ensemble.k,
                                fractions=cfg.split.fractions)
        save_ensemble(result, out_dir, extra_meta=meta)
        for i, history in enumerate(result.histories):
            write_history_csv(history, out_dir / f"member_{i}_history.csv")
            print(f"member {i}: {history.epochs_run} epochs "
                  f"(best {history.best_epoch}, {history.stop_reason})")
        test_ids = [i for split in result.splits for i in split.test_ids]
        test_samples = select_samples(samples, test_ids)
        preds = metrics_mod.PredictionSet(
            image_ids=tuple(s.image_id for s in test_samples),
            predicted=result.ensemble.predict_count(test_samples),
            true=np.array([s.count for s in test_samples]),
            sources=tuple(s.source_id for s in test_samples),
        )
        _evaluate_to_files(preds, out_dir)
    return EXIT_OK


def _load_predictor(path: Path):
    """A checkpoint (.npz) or an ensemble manifest (.json), plus its metadata."""
    if path.suffix == ".json":
        import json

        ensemble = load_ensemble(path)
        manifest = json.loads(path.read_text(encoding="utf-8"))
        return ensemble, manifest.get("extra", {})
    network, extra = load_checkpoint(path)
    return network, extra


def _preprocess_config_from_meta(extra: dict, input_size: int) -> PreprocessConfig:
    pre = extra.get("preprocess", {})
    return PreprocessConfig(
        target_size=int(pre.get("target_size", input_size)),
        stretch_low=float(pre.get("stretch_low", 1.0)),
        stretch_high=float(pre.get("stretch_high", 99.0)),
    )


def cmd_predict(args) -> int:
    predictor, extra = _load_predictor(Path(args.checkpoint))
    pre_cfg = _preprocess_config_from_meta(extra, predictor.input_size)
    image_dir = Path(args.image_dir)
    if not image_dir.is_dir():
        raise ConfigError(f"image directory not found: {image_dir}")
    files = sorted(p for p in image_dir.iterdir()
                   if p.suffix.lower() in IMAGE_EXTENSIONS)
    if not files:
        raise ConfigError(f"no images found in {image_dir}")
    rows = []
    for path in files:
        bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
        if bgr is None:
            raise ConfigError(f"could not decode image: {path}")
        sample = ImageSample(path.name, cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB), 0, "predict")
        sample = preprocess(sample, pre_cfg)
        count = int(predictor.predict_count([sample])[0])
        rows.append((path.name, count))
    out_csv = Path(args.out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "predicted"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} predictions to {out_csv}")
    return EXIT_OK


def _read_two_column_csv(path: Path, value_name: str):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0].strip().lower() != "image":
            raise ConfigError(f"{path}: expected a CSV with an 'image' first column")
        has_source = len(header) >= 3 and header[2].strip().lower() == "source"
        rows = {}
        sources = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows[row[0]] = int(row[1])
            except (IndexError, ValueError):
                raise ConfigError(
                    f"{path}:{lineno}: expected 'image,{value_name}' with integer values"
                ) from None
            if has_source:
                sources[row[0]] = row[2]
    return rows, sources


def cmd_eval(args) -> int:
    pred_rows, _ = _read_two_column_csv(Path(args.predictions), "predicted")
    truth_rows, truth_sources = _read_two_column_csv(Path(args.truth), "count")
    missing = sorted(set(pred_rows) - set(truth_rows))
    if missing:
        raise ConfigError(f"predictions without ground truth: {missing[:5]}")
    pairs = []
    for image_id in pred_rows:
        source = truth_sources.get(image_id)
        if source is None:
            source = image_id.split("/", 1)[0] if "/" in image_id else "all"
        pairs.append((image_id, pred_rows[image_id], truth_rows[image_id], source))
    preds = metrics_mod.PredictionSet.from_pairs(pairs)
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _evaluate_to_files(preds, out_dir)
    else:
        print(metrics_mod.format_table(metrics_mod.evaluate_by_source(preds)))
    return EXIT_OK


def cmd_occlude(args) -> int:
    predictor, extra = _load_predictor(Path(args.checkpoint))
    pre_cfg = _preprocess_config_from_meta(extra, predictor.input_size)
    image_path = Path(args.image)
    bgr = cv2.imread(str(image_path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise ConfigError(f"could not decode image: {image_path}")
    sample = ImageSample(image_path.name, cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB),
                         args.true_count, "occlude")
    sample = preprocess(sample, pre_cfg)
    occ_cfg = OcclusionConfig(window_size=args.window, stride=args.stride,
                              fill_value=args.fill)
    heatmap = occlusion_map(predictor, sample, occ_cfg, signed=args.signed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    render_heatmap(heatmap, out_dir / "heatmap.png", out_size=predictor.input_size)
    write_heatmap_csv(heatmap, out_dir / "heatmap.csv")
    rows, cols = heatmap.shape
    print(f"heatmap {rows}x{cols} written to {out_dir} "
          f"(baseline prediction {heatmap.baseline_prediction:.2f}, "
          f"true count {args.true_count})")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = SynthConfigFile.from_yaml(args.config)
    synth = SyntheticConfig(
        image_size=cfg.image_size,
        count_range=cfg.count_range,
        shape=cfg.shape,
        background_style=cfg.background_style,
        n_images=cfg.n_images,
        seed=cfg.seed,
    )
    samples = generate_synthetic(synth, source_id=cfg.dataset_id)
    root = write_dataset(samples, Path(cfg.output_root) / cfg.dataset_id)
    print(f"wrote {len(samples)} images to {root}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leafcount",
        description="Count-by-regression pipeline: train, predict, evaluate, "
                    "occlusion-map, and synthesize counting datasets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model or ensemble from a run config")
    p.add_argument("config", help="YAML run configuration")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict counts for a directory of images")
    p.add_argument("checkpoint", help="checkpoint .npz or ensemble manifest .json")
    p.add_argument("image_dir", help="directory of images")
    p.add_argument("out_csv", help="output CSV path (image,predicted)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("predictions", help="CSV with header image,predicted")
    p.add_argument("truth", help="CSV with header image,count[,source]")
    p.add_argument("--out-dir", default=None, help="also write metrics artifacts here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("occlude", help="render an occlusion-sensitivity heatmap")
    p.add_argument("checkpoint", help="checkpoint .npz or ensemble manifest .json")
    p.add_argument("image", help="image file")
    p.add_argument("--true-count", type=int, required=True)
    p.add_argument("--window", type=int, default=60)
    p.add_argument("--stride", type=int, default=20)
    p.add_argument("--fill", type=int, default=0)
    p.add_argument("--signed", action="store_true",
                   help="store signed errors instead of absolute")
    p.add_argument("--out-dir", default="occlusion-out")
    p.set_defaults(func=cmd_occlude)

    p = sub.add_parser("synth", help="generate a synthetic counting dataset")
    p.add_argument("config", help="YAML synth configuration")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (BuildError, CheckpointError, ShapeError, FusionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (LeafcountError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
