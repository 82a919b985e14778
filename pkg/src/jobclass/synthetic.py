"""Synthetic job traces with a known class structure.

The generating process: categorical variables are drawn uniformly; a job's
true class is LONG when at least ``vote_threshold`` of the informative
variables take a "long-leaning" category; the class is flipped with
probability ``flip_noise``; the runtime (log2 seconds) is then drawn from
that class's Gaussian component.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .mixture import MixtureModel, from_sd
from .trace import JobRecord, derive_temporal

# category counts of the nine anonymized production variables
CATEGORY_COUNTS = {"A1": 9, "A2": 7, "A3": 5, "B1": 44, "B2": 22, "C1": 2, "C2": 5, "C3": 6, "C4": 32}

SEPARATED_MODEL = from_sd(pi=0.43, mu1=6.0, sd1=1.0, mu2=12.0, sd2=1.2)

EPOCH_START = 1_420_070_400  # 2015-01-01 00:00 UTC


@dataclass(frozen=True)
class TraceSpec:
    informative: tuple[str, ...] = ("A1", "A2", "B2", "C4")
    long_lean_fraction: float = 0.35
    vote_threshold: int = 2
    flip_noise: float = 0.05
    runtime_model: MixtureModel = SEPARATED_MODEL
    category_counts: Mapping[str, int] = field(default_factory=lambda: dict(CATEGORY_COUNTS))
    missing_rates: Mapping[str, float] = field(
        default_factory=lambda: {"B1": 0.02, "B2": 0.01, "C2": 0.02, "C3": 0.02}
    )
    days: float = 10.0
    rule_seed: int = 7


def long_leaning(spec: TraceSpec) -> dict[str, frozenset[str]]:
    """The categories of each informative variable that vote LONG."""
    rng = np.random.default_rng(spec.rule_seed)
    out = {}
    for var in spec.informative:
        k = spec.category_counts[var]
        m = min(k - 1, max(1, round(spec.long_lean_fraction * k)))
        out[var] = frozenset(str(c + 1) for c in rng.permutation(k)[:m].tolist())
    return out


@dataclass
class SyntheticTrace:
    records: list[JobRecord]
    true_class: np.ndarray  # after flip noise: the component that generated the runtime
    rule_class: np.ndarray  # before flip noise


def generate_trace(n: int, seed: int, spec: TraceSpec | None = None) -> SyntheticTrace:
    spec = spec or TraceSpec()
    rng = np.random.default_rng(seed)
    leaning = long_leaning(spec)
    cats: dict[str, np.ndarray] = {}
    for var, k in spec.category_counts.items():
        cats[var] = rng.integers(1, k + 1, n)
    votes = np.zeros(n, dtype=int)
    for var in spec.informative:
        lean = np.array(sorted(int(c) for c in leaning[var]))
        votes += np.isin(cats[var], lean)
    rule_long = votes >= spec.vote_threshold
    flip = rng.random(n) < spec.flip_noise
    is_long = rule_long ^ flip
    z = rng.standard_normal(n)
    m = spec.runtime_model
    y = np.where(is_long, m.mu2 + np.sqrt(m.var2) * z, m.mu1 + np.sqrt(m.var1) * z)
    runtime = np.maximum(np.round(np.exp2(y), 3), 1.0)
    submit = EPOCH_START + np.floor(rng.random(n) * spec.days * 86400)
    wait = np.floor(rng.exponential(60.0, n))
    start = submit + wait
    finish = start + runtime
    iterations = 1 + rng.geometric(0.6, n) - 1
    missing = {v: rng.random(n) < r for v, r in spec.missing_rates.items()}
    order = np.argsort(submit, kind="stable")
    records = []
    for i in order.tolist():
        catmap = {}
        for var in spec.category_counts:
            if var in missing and missing[var][i]:
                catmap[var] = None
            else:
                catmap[var] = str(int(cats[var][i]))
        s, t, f = float(submit[i]), float(start[i]), float(finish[i])
        records.append(
            JobRecord(s, t, f, int(iterations[i]), catmap, derive_temporal(s, t, f), float(np.log2(f - t)))
        )
    return SyntheticTrace(records, is_long[order].astype(np.int8), rule_long[order].astype(np.int8))
