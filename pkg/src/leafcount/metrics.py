"""Counting evaluation suite: DiC, |DiC|, MSE, percent agreement, R².

Conventions (also recorded in rendered reports): the count difference is
``predicted - true``, so a negative DiC means systematic undercounting;
standard deviations are population (divide by n); all metrics operate on
rounded integer counts. R² is ``1 - sum(d²)/sum((t - mean(t))²)``; when the
truth variance is zero it is 1.0 if the residuals are also all zero and
undefined (None) otherwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .exceptions import EvaluationError

STD_CONVENTION = "population"
ALL_KEY = "All"


@dataclass(frozen=True)
class PredictionSet:
    """Parallel records of (image_id, predicted count, true count, source)."""

    image_ids: tuple[str, ...]
    predicted: np.ndarray
    true: np.ndarray
    sources: tuple[str, ...]

    def __post_init__(self):
        pred = np.asarray(self.predicted, dtype=np.int64)
        true = np.asarray(self.true, dtype=np.int64)
        ids = tuple(self.image_ids)
        sources = tuple(self.sources)
        if not (len(ids) == len(pred) == len(true) == len(sources)):
            raise EvaluationError("prediction set fields have mismatched lengths")
        if len(pred) and (pred.min() < 0 or true.min() < 0):
            raise EvaluationError("counts must be >= 0")
        pred.flags.writeable = False
        true.flags.writeable = False
        object.__setattr__(self, "image_ids", ids)
        object.__setattr__(self, "predicted", pred)
        object.__setattr__(self, "true", true)
        object.__setattr__(self, "sources", sources)

    def __len__(self) -> int:
        return len(self.image_ids)

    @classmethod
    def from_pairs(cls, pairs) -> "PredictionSet":
        """Build from an iterable of (image_id, predicted, true, source)."""
        rows = list(pairs)
        return cls(
            image_ids=tuple(r[0] for r in rows),
            predicted=np.array([r[1] for r in rows], dtype=np.int64),
            true=np.array([r[2] for r in rows], dtype=np.int64),
            sources=tuple(r[3] for r in rows),
        )

    def subset(self, source_id: str) -> "PredictionSet":
        keep = [i for i, s in enumerate(self.sources) if s == source_id]
        return PredictionSet(
            image_ids=tuple(self.image_ids[i] for i in keep),
            predicted=self.predicted[keep],
            true=self.true[keep],
            sources=tuple(self.sources[i] for i in keep),
        )


@dataclass(frozen=True)
class MetricsReport:
    dic_mean: float
    dic_std: float
    abs_dic_mean: float
    abs_dic_std: float
    mse: float
    agreement_pct: float
    r_squared: float | None
    n: int


def evaluate(preds: PredictionSet) -> MetricsReport:
    """Compute the full metric suite over one prediction set."""
    n = len(preds)
    if n < 1:
        raise EvaluationError("cannot evaluate an empty prediction set")
    d = preds.predicted.astype(np.float64) - preds.true.astype(np.float64)
    abs_d = np.abs(d)
    ss_res = float((d ** 2).sum())
    truth = preds.true.astype(np.float64)
    ss_tot = float(((truth - truth.mean()) ** 2).sum())
    if ss_tot > 0.0:
        r_squared = 1.0 - ss_res / ss_tot
    elif ss_res == 0.0:
        r_squared = 1.0
    else:
        r_squared = None
    return MetricsReport(
        dic_mean=float(d.mean()),
        dic_std=float(d.std()),
        abs_dic_mean=float(abs_d.mean()),
        abs_dic_std=float(abs_d.std()),
        mse=float((d ** 2).mean()),
        agreement_pct=float(100.0 * (d == 0).mean()),
        r_squared=r_squared,
        n=n,
    )


def evaluate_by_source(preds: PredictionSet) -> dict[str, MetricsReport]:
    """Per-source reports plus an "All" row computed over the union."""
    if len(preds) < 1:
        raise EvaluationError("cannot evaluate an empty prediction set")
    table: dict[str, MetricsReport] = {}
    for source in sorted(set(preds.sources)):
        table[source] = evaluate(preds.subset(source))
    table[ALL_KEY] = evaluate(preds)
    return table


def format_table(reports: Mapping[str, MetricsReport]) -> str:
    """Human-readable aligned table, one row per source plus the All row."""
    header = f"{'Set':<10} {'DiC':>13} {'|DiC|':>13} {'Agreement [%]':>14} {'MSE':>8} {'R2':>7} {'n':>6}"
    lines = [header, "-" * len(header)]
    keys = [k for k in reports if k != ALL_KEY] + ([ALL_KEY] if ALL_KEY in reports else [])
    for key in keys:
        r = reports[key]
        r2 = f"{r.r_squared:.2f}" if r.r_squared is not None else "undef"
        lines.append(
            f"{key:<10} {r.dic_mean:>6.2f}({r.dic_std:.2f}) "
            f"{r.abs_dic_mean:>6.2f}({r.abs_dic_std:.2f}) "
            f"{r.agreement_pct:>14.1f} {r.mse:>8.2f} {r2:>7} {r.n:>6}"
        )
    lines.append(f"(DiC = predicted - true; std convention: {STD_CONVENTION})")
    return "\n".join(lines)


REPORT_COLUMNS = ["set", "dic_mean", "dic_std", "abs_dic_mean", "abs_dic_std",
                  "mse", "agreement_pct", "r_squared", "n"]


def write_report_csv(reports: Mapping[str, MetricsReport], path: Path | str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        keys = [k for k in reports if k != ALL_KEY] + ([ALL_KEY] if ALL_KEY in reports else [])
        for key in keys:
            r = reports[key]
            r2 = "" if r.r_squared is None else f"{r.r_squared:.10g}"
            writer.writerow([
                key, f"{r.dic_mean:.10g}", f"{r.dic_std:.10g}",
                f"{r.abs_dic_mean:.10g}", f"{r.abs_dic_std:.10g}",
                f"{r.mse:.10g}", f"{r.agreement_pct:.10g}", r2, r.n,
            ])


def write_predictions_csv(preds: PredictionSet, path: Path | str) -> None:
    """Persist a prediction set as `image,predicted,true,source` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "predicted", "true", "source"])
        for i in range(len(preds)):
            writer.writerow([preds.image_ids[i], int(preds.predicted[i]),
                             int(preds.true[i]), preds.sources[i]])


def read_predictions_csv(path: Path | str) -> PredictionSet:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["image", "predicted", "true", "source"]:
            raise EvaluationError(f"{path}: expected header 'image,predicted,true,source'")
        rows = [(r[0], int(r[1]), int(r[2]), r[3]) for r in reader if r]
    return PredictionSet.from_pairs(rows)
