"""Confusion-matrix metrics with percentile-bootstrap confidence intervals."""

from __future__ import annotations

import logging
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import numpy.typing as npt

from app.configs import settings
from app.errors import EmptyDatasetError, InvalidArgumentError, LabelRangeError, ShapeError
from app.schemas import EvalReport, MetricWithCI

logger = logging.getLogger("metrics")

Labels = npt.NDArray[np.int64]
MetricFn = Callable[[Labels, Labels], float]


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[t, p] = number of samples of true class t predicted as p."""

    counts: npt.NDArray[np.int64]

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def support(self) -> npt.NDArray[np.int64]:
        return self.counts.sum(axis=1)


class WeightedScores(NamedTuple):
    precision_w: float
    recall_w: float
    f1_w: float
    accuracy: float


class Timings(NamedTuple):
    train_seconds: float
    eval_seconds: float


def _as_labels(name: str, values: npt.ArrayLike) -> Labels:
    array = np.asarray(values, dtype=np.int64)
    if array.ndim != 1:
        raise ShapeError(f"{name} must be a 1-D label array, got shape {array.shape}")
    return array


def confusion(y_true: npt.ArrayLike, y_pred: npt.ArrayLike, k: int) -> ConfusionMatrix:
    t, p = _as_labels("y_true", y_true), _as_labels("y_pred", y_pred)
    if t.shape != p.shape:
        raise ShapeError(f"y_true has {t.size} labels but y_pred has {p.size}")
    if t.size == 0:
        raise EmptyDatasetError("Cannot build a confusion matrix from zero samples")
    for name, labels in (("y_true", t), ("y_pred", p)):
        if labels.min() < 0 or labels.max() >= k:
            raise LabelRangeError(f"{name} holds labels outside [0, {k})")
    counts = np.bincount(t * k + p, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts=counts.astype(np.int64))


def per_class(cm: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class precision, recall and F1; undefined ratios count as 0."""
    diag = np.diag(cm.counts).astype(np.float64)
    predicted = cm.counts.sum(axis=0).astype(np.float64)
    support = cm.support.astype(np.float64)
    precision = np.divide(diag, predicted, out=np.zeros_like(diag), where=predicted > 0)
    recall = np.divide(diag, support, out=np.zeros_like(diag), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(diag), where=denom > 0)
    return precision, recall, f1


def weighted_prf(cm: ConfusionMatrix) -> WeightedScores:
    """Support-weighted precision, recall and F1, plus accuracy."""
    total = cm.total
    if total == 0:
        raise EmptyDatasetError("Confusion matrix is empty")
    precision, _, f1 = per_class(cm)
    weights = cm.support / total
    accuracy = float(np.trace(cm.counts) / total)
    # Support-weighted recall reduces to trace / N
    return WeightedScores(
        precision_w=float(np.sum(weights * precision)),
        recall_w=accuracy,
        f1_w=float(np.sum(weights * f1)),
        accuracy=accuracy,
    )


def metric_fn(name: str, k: int) -> MetricFn:
    """Scalar metric by WeightedScores field name, for bootstrapping."""
    if name not in WeightedScores._fields:
        raise InvalidArgumentError(f"Unknown metric '{name}'")

    def compute(y_true: Labels, y_pred: Labels) -> float:
        return getattr(weighted_prf(confusion(y_true, y_pred, k)), name)

    return compute


def bootstrap_ci(
    y_true: npt.ArrayLike,
    y_pred: npt.ArrayLike,
    fn: MetricFn,
    resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval of `fn` over resampled (true, pred) pairs."""
    if resamples < 1:
        raise InvalidArgumentError(f"resamples must be >= 1, got {resamples}")
    if not 0 < level < 1:
        raise InvalidArgumentError(f"level must lie in (0, 1), got {level}")
    t, p = _as_labels("y_true", y_true), _as_labels("y_pred", y_pred)
    n = t.size
    if n == 0 or p.size != n:
        raise EmptyDatasetError("bootstrap_ci needs at least one (true, pred) pair")

    def one(seq: np.random.SeedSequence) -> float:
        idx = np.random.default_rng(seq).integers(0, n, size=n)
        return fn(t[idx], p[idx])

    # One child seed per resample, so results do not depend on worker count
    children = np.random.SeedSequence(seed).spawn(resamples)
    with ThreadPoolExecutor(max_workers=settings.workers) as pool:
        stats = np.fromiter(pool.map(one, children), dtype=np.float64, count=resamples)
    tail = (1 - level) / 2 * 100
    lo, hi = np.percentile(stats, [tail, 100 - tail])
    return float(lo), float(hi)


def build_report(
    activation: str,
    y_true: npt.ArrayLike,
    y_pred: npt.ArrayLike,
    timings: Timings,
    seed: int = 0,
    num_classes: int | None = None,
    resamples: int = 1000,
    level: float = 0.95,
    timing_comparable: bool = True,
) -> EvalReport:
    """Point metrics, their bootstrap intervals and the run's wall-clock times."""
    t, p = _as_labels("y_true", y_true), _as_labels("y_pred", y_pred)
    if t.size == 0:
        raise EmptyDatasetError(f"[{activation}] no predictions to score")
    k = num_classes if num_classes is not None else int(max(t.max(), p.max())) + 1
    scores = weighted_prf(confusion(t, p, k))

    cells: dict[str, MetricWithCI] = {}
    for name in WeightedScores._fields:
        value = getattr(scores, name)
        lo, hi = bootstrap_ci(t, p, metric_fn(name, k), resamples, level, seed)
        # The percentile interval can miss a skewed point estimate; widen to include it
        cells[name] = MetricWithCI(
            value=value,
            ci_lo=float(np.clip(min(lo, value), 0, 1)),
            ci_hi=float(np.clip(max(hi, value), 0, 1)),
        )

    train_seconds, eval_seconds = timings
    logger.info(
        f"[{activation}] accuracy={scores.accuracy:.4f} f1_w={scores.f1_w:.4f} "
        f"({train_seconds + eval_seconds:.1f}s)"
    )
    return EvalReport(
        activation=activation,
        accuracy=cells["accuracy"],
        precision_w=cells["precision_w"],
        recall_w=cells["recall_w"],
        f1_w=cells["f1_w"],
        train_seconds=train_seconds,
        eval_seconds=eval_seconds,
        total_seconds=train_seconds + eval_seconds,
        timing_comparable=timing_comparable,
    )


__all__ = [
    "ConfusionMatrix",
    "Timings",
    "WeightedScores",
    "bootstrap_ci",
    "build_report",
    "confusion",
    "metric_fn",
    "per_class",
    "weighted_prf",
]
