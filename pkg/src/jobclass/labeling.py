"""Turn a fitted mixture into short/long job labels."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyBand, NoCrossingInBracket
from .mixture import MixtureModel, e_step
from .trace import JobRecord, runtimes_log2

SHORT = 0
LONG = 1
CLASS_NAMES = ("SHORT", "LONG")


def class_name(label: int) -> str:
    return CLASS_NAMES[int(label)]


def posterior_long(model: MixtureModel, y: float) -> float:
    return float(e_step(model, [y])[0])


def _as_log2(data: Sequence[JobRecord] | np.ndarray) -> tuple[tuple[JobRecord, ...], np.ndarray]:
    if isinstance(data, np.ndarray):
        return (), data.astype(float, copy=False)
    records = tuple(data)
    if records and not isinstance(records[0], JobRecord):
        return (), np.asarray(records, dtype=float)
    return records, runtimes_log2(records)


@dataclass(frozen=True)
class LabeledDataset:
    """Records (possibly empty when built from bare runtimes) with per-record responsibility and label."""

    records: tuple[JobRecord, ...]
    runtime_log2: np.ndarray
    gamma: np.ndarray
    label: np.ndarray
    threshold_used: float

    def __len__(self) -> int:
        return int(self.label.size)

    @property
    def n_short(self) -> int:
        return int(np.count_nonzero(self.label == SHORT))

    @property
    def n_long(self) -> int:
        return int(np.count_nonzero(self.label == LONG))

    @property
    def short_fraction(self) -> float:
        return self.n_short / len(self) if len(self) else float("nan")


def labels_at(gamma: np.ndarray, threshold: float) -> np.ndarray:
    # ties (gamma == threshold) go LONG
    return np.where(gamma < threshold, SHORT, LONG).astype(np.int8)


def label_dataset(
    model: MixtureModel, dataset: Sequence[JobRecord] | np.ndarray, threshold: float
) -> LabeledDataset:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    records, y = _as_log2(dataset)
    gamma = e_step(model, y)
    return LabeledDataset(records, y, gamma, labels_at(gamma, threshold), float(threshold))


def relabel(labeled: LabeledDataset, threshold: float) -> LabeledDataset:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return LabeledDataset(
        labeled.records, labeled.runtime_log2, labeled.gamma, labels_at(labeled.gamma, threshold), float(threshold)
    )


def threshold_to_runtime(model: MixtureModel, threshold: float, tol: float = 1e-10) -> float:
    """Runtime (log2 s) between the two means where the long-class posterior equals ``threshold``.

    The posterior is strictly increasing between the means, so bisection on
    that bracket finds the unique crossing.
    """
    lo, hi = model.mu1, model.mu2
    g_lo, g_hi = posterior_long(model, lo), posterior_long(model, hi)
    if not (lo < hi and g_lo <= threshold <= g_hi):
        raise NoCrossingInBracket(
            f"threshold {threshold} outside posterior range [{g_lo:.6g}, {g_hi:.6g}] on [{lo:.6g}, {hi:.6g}]"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if posterior_long(model, mid) < threshold:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ThresholdSelection:
    threshold: float
    runtime_log2: float
    runtime_seconds: float
    metrics: object = None  # ConfusionMetrics of the chosen point

    @classmethod
    def from_threshold(cls, model: MixtureModel, threshold: float, metrics: object = None) -> "ThresholdSelection":
        y = threshold_to_runtime(model, threshold)
        return cls(threshold, y, 2.0**y, metrics)

    def as_dict(self) -> dict:
        d = {
            "threshold": self.threshold,
            "runtime_log2": None if math.isnan(self.runtime_log2) else self.runtime_log2,
            "runtime_seconds": None if math.isnan(self.runtime_seconds) else self.runtime_seconds,
        }
        if self.metrics is not None:
            d["metrics"] = self.metrics.as_dict()  # type: ignore[attr-defined]
        return d


@dataclass(frozen=True)
class BandSelection:
    """High-certainty training subset: indices into the source data and their labels."""

    indices: np.ndarray
    labels: np.ndarray
    total: int
    k: float

    @property
    def fraction(self) -> float:
        return self.indices.size / self.total

    @property
    def n_short(self) -> int:
        return int(np.count_nonzero(self.labels == SHORT))

    @property
    def n_long(self) -> int:
        return int(np.count_nonzero(self.labels == LONG))


def band_membership(model: MixtureModel, y: np.ndarray, k: float) -> np.ndarray:
    """Per-observation band label: SHORT, LONG, or -1 when outside both bands.

    An observation inside both bands goes to the nearer mean in SD units
    (ties go LONG).
    """
    z1 = np.abs(y - model.mu1) / math.sqrt(model.var1)
    z2 = np.abs(y - model.mu2) / math.sqrt(model.var2)
    in1 = z1 <= k
    in2 = z2 <= k
    out = np.full(y.shape, -1, dtype=np.int8)
    out[in1 & ~in2] = SHORT
    out[in2 & ~in1] = LONG
    both = in1 & in2
    out[both & (z1 < z2)] = SHORT
    out[both & (z1 >= z2)] = LONG
    return out


def certainty_band_select(
    model: MixtureModel, dataset: LabeledDataset | Sequence[JobRecord] | np.ndarray, k: float = 0.5
) -> BandSelection:
    if not k > 0:
        raise ValueError("k must be > 0")
    y = dataset.runtime_log2 if isinstance(dataset, LabeledDataset) else _as_log2(dataset)[1]
    membership = band_membership(model, y, k)
    idx = np.flatnonzero(membership >= 0)
    if idx.size == 0:
        raise EmptyBand(f"no observation within {k} SD of either mean")
    return BandSelection(idx, membership[idx].astype(np.int8), int(y.size), float(k))
