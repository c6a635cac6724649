"""Training loop: squared-error loss + activity penalty, Adam, early stopping.

The monitored validation loss is the plain MSE of raw predictions on the
un-augmented validation images; the activity penalty only enters the
training loss. Early stopping restores the best-validation weights, so the
returned network is the best epoch's network, not the last one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .augment import AugmentConfig, EpochPlan, epoch_stream
from .datasets import ImageSample, SplitPlan, make_split, select_samples
from .exceptions import TrainingDivergedError
from .metrics import MetricsReport, PredictionSet, evaluate
from .model import RegressionNetwork


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    max_epochs: int = 200
    patience: int = 10
    min_delta: float = 0.01  # smallest val-loss drop counted as improvement
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be >= 1")
        if self.min_delta < 0:
            raise ValueError(f"min_delta must be >= 0, got {self.min_delta}")


@dataclass(frozen=True)
class TrainHistory:
    train_loss: tuple[float, ...]
    val_loss: tuple[float, ...]
    best_epoch: int  # 1-based
    stop_reason: str  # "early-stop" | "max-epochs"

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)


class Adam:
    """Adaptive-moment gradient descent with canonical decay constants."""

    def __init__(self, params: Sequence[np.ndarray], learning_rate: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        lr_t = self.lr * np.sqrt(1.0 - self.beta2 ** self.t) / (1.0 - self.beta1 ** self.t)
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= lr_t * m / (np.sqrt(v) + self.eps)


class EarlyStopping:
    """Stateful min-mode early stopping with best-state restoration.

    An epoch improves when its value drops below ``best - min_delta``;
    ``patience`` consecutive non-improving epochs trigger the stop, so the
    stopping epoch is best_epoch + patience.
    """

    def __init__(self, patience: int, min_delta: float = 0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.best_epoch = 0
        self.best_state: list[np.ndarray] | None = None
        self.wait = 0

    def update(self, epoch: int, value: float, state_fn: Callable[[], list[np.ndarray]]) -> bool:
        """Record one epoch's monitored value; returns True when training should stop."""
        if value < self.best - self.min_delta:
            self.best = value
            self.best_epoch = epoch
            self.best_state = state_fn()
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    diff = pred.astype(np.float64) - target.astype(np.float64)
    return float((diff * diff).mean())


def _validation_loss(network: RegressionNetwork, val_x, val_y: np.ndarray) -> float:
    """Plain MSE of raw predictions on the validation images."""
    return mse_loss(network.predict_raw(val_x), val_y)


def train(network: RegressionNetwork, samples: Sequence[ImageSample], split: SplitPlan,
          aug: AugmentConfig, config: TrainConfig, plan: EpochPlan | None = None,
          log_path: Path | str | None = None) -> tuple[RegressionNetwork, TrainHistory]:
    """Fit the network on the split's train part, early-stopping on its val part.

    Each epoch consumes exactly one augmented epoch stream. Raises
    TrainingDivergedError on a non-finite loss. The returned network
    carries the best-validation epoch's weights.
    """
    train_samples = select_samples(samples, split.train_ids)
    val_samples = select_samples(samples, split.val_ids)
    if not train_samples or not val_samples:
        raise ValueError("train and validation parts must both be non-empty")
    if plan is None:
        plan = EpochPlan.for_training_set(len(train_samples))

    val_x = np.stack([np.asarray(s.pixels) for s in val_samples])
    val_y = np.array([s.count for s in val_samples], dtype=np.float64)

    optimizer = Adam(network.trainable_params(), learning_rate=config.learning_rate)
    stopper = EarlyStopping(patience=config.patience, min_delta=config.min_delta)
    train_losses: list[float] = []
    val_losses: list[float] = []
    stop_reason = "max-epochs"

    for epoch in range(1, config.max_epochs + 1):
        epoch_loss = 0.0
        for batch in epoch_stream(train_samples, aug, plan, epoch=epoch - 1):
            x = network.to_batch(list(batch.samples))
            y = np.array([s.count for s in batch.samples], dtype=network.dtype)[:, None]
            pred = network.net.forward(x, train=True)
            diff = pred - y
            loss = float((diff.astype(np.float64) ** 2).mean()) + network.net.activity_penalty()
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            network.net.backward((2.0 / len(y)) * diff)
            optimizer.step(network.trainable_grads())
            epoch_loss += loss
        train_losses.append(epoch_loss / plan.steps_per_epoch)

        val_loss = _validation_loss(network, val_x, val_y)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(epoch, f"non-finite validation loss at epoch {epoch}")
        val_losses.append(val_loss)
        if stopper.update(epoch, val_loss, network.get_state):
            stop_reason = "early-stop"
            break

    if stopper.best_state is not None:
        network.set_state(stopper.best_state)
    history = TrainHistory(
        train_loss=tuple(train_losses),
        val_loss=tuple(val_losses),
        best_epoch=stopper.best_epoch,
        stop_reason=stop_reason,
    )
    if log_path is not None:
        write_history_csv(history, log_path)
    return network, history


def write_history_csv(history: TrainHistory, path: Path | str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for i, (tl, vl) in enumerate(zip(history.train_loss, history.val_loss), start=1):
            writer.writerow([i, f"{tl:.10g}", f"{vl:.10g}"])


@dataclass(frozen=True)
class CrossValidationRun:
    network: RegressionNetwork
    report: MetricsReport
    history: TrainHistory
    split: SplitPlan


@dataclass(frozen=True)
class CrossValidationResult:
    runs: tuple[CrossValidationRun, ...]
    aggregate: dict[str, tuple[float, float]]  # metric -> (mean over runs, std over runs)


_AGG_FIELDS = ("dic_mean", "abs_dic_mean", "mse", "agreement_pct", "r_squared")


def aggregate_reports(reports: Sequence[MetricsReport]) -> dict[str, tuple[float, float]]:
    """Mean and std over runs for each scalar metric (undefined R² skipped)."""
    aggregate = {}
    for field_name in _AGG_FIELDS:
        values = np.array([
            np.nan if getattr(r, field_name) is None else getattr(r, field_name)
            for r in reports
        ], dtype=np.float64)
        aggregate[field_name] = (float(np.nanmean(values)), float(np.nanstd(values)))
    return aggregate


def cross_validate(samples: Sequence[ImageSample],
                   model_factory: Callable[[int], RegressionNetwork],
                   aug: AugmentConfig, config: TrainConfig, k: int = 4,
                   fractions=(0.5, 0.25, 0.25)) -> CrossValidationResult:
    """Repeated random resampling: k independent splits, trainings, and
    internal-test evaluations, aggregated as mean ± std per metric."""
    if k < 2:
        raise ValueError(f"cross_validate needs k >= 2, got {k}")
    runs = []
    for i in range(k):
        split = make_split(samples, fractions=fractions, seed=config.seed + i)
        network = model_factory(config.seed + i)
        run_aug = replace(aug, seed=aug.seed + i)
        network, history = train(network, samples, split, run_aug, config)
        test_samples = select_samples(samples, split.test_ids)
        predicted = network.predict_count(test_samples)
        preds = PredictionSet(
            image_ids=tuple(s.image_id for s in test_samples),
            predicted=predicted,
            true=np.array([s.count for s in test_samples]),
            sources=tuple(s.source_id for s in test_samples),
        )
        runs.append(CrossValidationRun(network=network, report=evaluate(preds),
                                       history=history, split=split))
    return CrossValidationResult(
        runs=tuple(runs),
        aggregate=aggregate_reports([r.report for r in runs]),
    )
