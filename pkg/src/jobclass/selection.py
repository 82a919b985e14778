"""Variable selection by repeated train/evaluation splits, the pseudo-ROC
threshold sweep, and operating-point choice."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cart import DecisionTree, FeatureTable, GrowParams, fit_pruned_tree, importance, predict_table
from .errors import EmptyDataset, NoCrossingInBracket
from .labeling import LONG, SHORT, ThresholdSelection, labels_at, threshold_to_runtime
from .mixture import MixtureModel

log = logging.getLogger(__name__)

DEFAULT_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))


@dataclass(frozen=True)
class ConfusionMetrics:
    """Counts with SHORT as the positive class."""

    tp: int
    fn: int
    fp: int
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    @property
    def sensitivity(self) -> float:
        pos = self.tp + self.fn
        return self.tp / pos if pos else math.nan

    @property
    def specificity(self) -> float:
        neg = self.tn + self.fp
        return self.tn / neg if neg else math.nan

    @property
    def total_misclassification(self) -> float:
        return (self.fp + self.fn) / self.n if self.n else math.nan

    @classmethod
    def from_labels(cls, predicted: np.ndarray, actual: np.ndarray) -> "ConfusionMetrics":
        predicted = np.asarray(predicted)
        actual = np.asarray(actual)
        ps, as_ = predicted == SHORT, actual == SHORT
        return cls(
            tp=int(np.count_nonzero(ps & as_)),
            fn=int(np.count_nonzero(~ps & as_)),
            fp=int(np.count_nonzero(ps & ~as_)),
            tn=int(np.count_nonzero(~ps & ~as_)),
        )

    def as_dict(self) -> dict:
        def clean(x: float) -> float | None:
            return None if math.isnan(x) else x

        return {
            "tp": self.tp,
            "fn": self.fn,
            "fp": self.fp,
            "tn": self.tn,
            "sensitivity": clean(self.sensitivity),
            "specificity": clean(self.specificity),
            "total_misclassification": clean(self.total_misclassification),
        }


def evaluate(tree: DecisionTree, table: FeatureTable, labels: Sequence[int] | np.ndarray) -> ConfusionMetrics:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    predicted, _ = predict_table(tree, table)
    return ConfusionMetrics.from_labels(predicted, labels)


@dataclass(frozen=True)
class RocPoint:
    mixture_threshold: float
    sensitivity: float
    specificity: float
    total_misclassification: float
    metrics: ConfusionMetrics | None = field(default=None, compare=False)

    @property
    def youden(self) -> float:
        return self.sensitivity + self.specificity - 1.0

    @classmethod
    def from_metrics(cls, threshold: float, m: ConfusionMetrics) -> "RocPoint":
        return cls(threshold, m.sensitivity, m.specificity, m.total_misclassification, m)


class Baseline(str, enum.Enum):
    MEAN_SCORE = "mean"
    FIXED = "fixed"


@dataclass(frozen=True)
class CvConfig:
    iterations: int = 150
    train_fraction: float = 0.8
    seed: int = 0
    baseline: Baseline = Baseline.MEAN_SCORE
    baseline_value: float = 0.0
    prune_folds: int = 10

    def __post_init__(self) -> None:
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        object.__setattr__(self, "baseline", Baseline(self.baseline))


@dataclass
class CvIteration:
    index: int
    importance: dict[str, float]
    misclassification: float


@dataclass
class CvResult:
    iterations: list[CvIteration]
    skipped: int
    variables: tuple[str, ...]

    @property
    def mean_misclassification(self) -> float:
        if not self.iterations:
            return math.nan
        return float(np.mean([it.misclassification for it in self.iterations]))

    def mean_importance(self) -> dict[str, float]:
        if not self.iterations:
            return {v: 0.0 for v in self.variables}
        return {v: float(np.mean([it.importance.get(v, 0.0) for it in self.iterations])) for v in self.variables}


def cross_validate(
    table: FeatureTable,
    labels: Sequence[int] | np.ndarray,
    variables: Sequence[str] | None = None,
    config: CvConfig | None = None,
    params: GrowParams | None = None,
) -> CvResult:
    """Repeated random train/evaluation splits; a pruned tree per split.

    Splits whose training part lacks a class are skipped and counted.
    """
    config = config or CvConfig()
    y = np.asarray(labels, dtype=np.int64)
    variables = tuple(variables) if variables is not None else table.names
    sub = table.select(variables)
    n = y.size
    if n < 2:
        raise EmptyDataset("need at least two labeled records")
    n_train = min(n - 1, max(1, int(math.floor(config.train_fraction * n))))
    results: list[CvIteration] = []
    skipped = 0
    for i, child in enumerate(np.random.SeedSequence(config.seed).spawn(config.iterations)):
        rng = np.random.default_rng(child)
        perm = rng.permutation(n)
        train, test = np.sort(perm[:n_train]), np.sort(perm[n_train:])
        yt = y[train]
        if yt.min() == yt.max():
            skipped += 1
            continue
        prune_seed = int(rng.integers(2**31))
        tree = fit_pruned_tree(sub, y, params, config.prune_folds, prune_seed, rows=train)
        predicted, _ = predict_table(tree, sub.take(test))
        err = float(np.mean(predicted != y[test]))
        results.append(CvIteration(i, importance(tree), err))
    if skipped:
        log.warning("cross_validate: %d of %d iterations skipped (single-class training split)", skipped, config.iterations)
    return CvResult(results, skipped, variables)


@dataclass
class VariableSelection:
    selected: list[str]
    ranking: list[tuple[str, float]]
    baseline: float
    fallback: bool

    def as_dict(self) -> dict:
        return {
            "selected": self.selected,
            "baseline": self.baseline,
            "fallback": self.fallback,
            "ranking": [{"variable": v, "mean_importance": s, "selected": v in self.selected} for v, s in self.ranking],
        }


def select_variables(
    scores: CvResult | dict[str, float],
    baseline: Baseline | str = Baseline.MEAN_SCORE,
    baseline_value: float = 0.0,
) -> VariableSelection:
    """Keep variables whose mean importance is strictly above the baseline.

    ``MEAN_SCORE`` uses the mean of all variables' mean scores. If nothing
    clears the baseline the single top variable is kept (earlier variable
    on ties) and ``fallback`` is set.
    """
    mean = scores.mean_importance() if isinstance(scores, CvResult) else dict(scores)
    if not mean:
        raise ValueError("no variables to select from")
    order = list(mean)
    ranking = sorted(mean.items(), key=lambda kv: (-kv[1], order.index(kv[0])))
    baseline = Baseline(baseline)
    cut = float(np.mean(list(mean.values()))) if baseline is Baseline.MEAN_SCORE else float(baseline_value)
    selected = [v for v, s in ranking if s > cut]
    fallback = not selected
    if fallback:
        log.warning("select_variables: no variable above baseline %.4g; keeping top variable %s", cut, ranking[0][0])
        selected = [ranking[0][0]]
    return VariableSelection(selected, ranking, cut, fallback)


@dataclass
class SweepResult:
    points: list[RocPoint]
    skipped: list[float]
    trees: dict[float, DecisionTree]


def sweep_thresholds(
    table: FeatureTable,
    gamma: np.ndarray,
    variables: Sequence[str],
    grid: Sequence[float] = DEFAULT_GRID,
    params: GrowParams | None = None,
    folds: int = 10,
    seed: int = 0,
) -> SweepResult:
    """Relabel at every threshold, fit a pruned tree on ``variables``, and score it on the same data."""
    grid = [float(t) for t in grid]
    if any(not 0.0 < t < 1.0 for t in grid):
        raise ValueError("thresholds must lie in (0, 1)")
    if grid != sorted(grid):
        raise ValueError("threshold grid must be sorted ascending")
    sub = table.select(list(variables))
    points: list[RocPoint] = []
    skipped: list[float] = []
    trees: dict[float, DecisionTree] = {}
    for t in grid:
        y = labels_at(np.asarray(gamma), t)
        if y.min() == y.max():
            log.warning("sweep_thresholds: threshold %.3g gives a single class; skipped", t)
            skipped.append(t)
            continue
        tree = fit_pruned_tree(sub, y, params, folds, seed)
        predicted, _ = predict_table(tree, sub)
        points.append(RocPoint.from_metrics(t, ConfusionMetrics.from_labels(predicted, y)))
        trees[t] = tree
    return SweepResult(points, skipped, trees)


class OperatingPolicy(str, enum.Enum):
    YOUDEN = "youden"
    MIN_ERROR = "min_error"


def pick_operating_point(
    points: Sequence[RocPoint],
    policy: OperatingPolicy | str = OperatingPolicy.YOUDEN,
    model: MixtureModel | None = None,
) -> ThresholdSelection:
    """Choose one of ``points``.

    YOUDEN maximizes sensitivity + specificity - 1, then prefers the
    smaller |sensitivity - specificity|, then the smaller threshold.
    MIN_ERROR minimizes total misclassification, then the smaller threshold.
    """
    if not points:
        raise ValueError("no ROC points to choose from")
    policy = OperatingPolicy(policy)
    tol = 1e-12
    if policy is OperatingPolicy.YOUDEN:
        best_j = max(p.youden for p in points)
        cands = [p for p in points if p.youden >= best_j - tol]
        gap = min(abs(p.sensitivity - p.specificity) for p in cands)
        cands = [p for p in cands if abs(p.sensitivity - p.specificity) <= gap + tol]
    else:
        best_e = min(p.total_misclassification for p in points)
        cands = [p for p in points if p.total_misclassification <= best_e + tol]
    chosen = min(cands, key=lambda p: p.mixture_threshold)
    if model is None:
        return ThresholdSelection(chosen.mixture_threshold, math.nan, math.nan, chosen.metrics)
    try:
        y = threshold_to_runtime(model, chosen.mixture_threshold)
    except NoCrossingInBracket as exc:
        log.warning("pick_operating_point: %s", exc)
        return ThresholdSelection(chosen.mixture_threshold, math.nan, math.nan, chosen.metrics)
    return ThresholdSelection(chosen.mixture_threshold, y, 2.0**y, chosen.metrics)


def band_vs_full_note(cv: CvResult, full_error: float) -> dict:
    return {
        "band_cv_misclassification": cv.mean_misclassification,
        "full_data_misclassification": full_error,
        "band_error_below_full": bool(cv.mean_misclassification < full_error),
    }


__all__ = [
    "ConfusionMetrics",
    "RocPoint",
    "CvConfig",
    "CvResult",
    "Baseline",
    "OperatingPolicy",
    "VariableSelection",
    "SweepResult",
    "DEFAULT_GRID",
    "cross_validate",
    "select_variables",
    "sweep_thresholds",
    "pick_operating_point",
    "evaluate",
    "LONG",
    "SHORT",
]
