"""Two-component Gaussian mixture on log2 runtimes, fitted by EM.

Component 1 is the "short" population and component 2 the "long" one;
``pi`` is the mixing weight of component 2. All density arithmetic is done
in log space so that far-tail observations never underflow to 0/0.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ComponentCollapse, DegenerateData, FitFailed, IncompatibleArtifact

MODEL_FORMAT_VERSION = 1
VARIANCE_FLOOR = 1e-6
_LOG_2PI = math.log(2.0 * math.pi)


class InitPolicy(str, enum.Enum):
    RANDOM_OBSERVATIONS = "random_observations"
    QUANTILE = "quantile"


@dataclass(frozen=True)
class EmConfig:
    max_iterations: int = 1000
    tolerance: float = 1e-8
    restarts: int = 5
    seed: int = 0
    init_policy: InitPolicy = InitPolicy.RANDOM_OBSERVATIONS

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        object.__setattr__(self, "init_policy", InitPolicy(self.init_policy))


@dataclass(frozen=True)
class MixtureModel:
    pi: float
    mu1: float
    var1: float
    mu2: float
    var2: float
    log_likelihood: float = float("nan")
    iterations_used: int = 0
    converged: bool = False
    # per-iteration log-likelihood of the winning run; not serialized
    history: tuple[float, ...] = field(default=(), compare=False, repr=False)

    @property
    def sd1(self) -> float:
        return math.sqrt(self.var1)

    @property
    def sd2(self) -> float:
        return math.sqrt(self.var2)

    @property
    def is_canonical(self) -> bool:
        return self.mu1 < self.mu2

    def to_dict(self) -> dict:
        return {
            "version": MODEL_FORMAT_VERSION,
            "pi": float(self.pi),
            "mu1": float(self.mu1),
            "var1": float(self.var1),
            "mu2": float(self.mu2),
            "var2": float(self.var2),
            "log_likelihood": float(self.log_likelihood),
            "iterations_used": int(self.iterations_used),
            "converged": bool(self.converged),
        }

    def to_json(self, extra: dict | None = None) -> str:
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "MixtureModel":
        version = doc.get("version")
        if version != MODEL_FORMAT_VERSION:
            raise IncompatibleArtifact(
                f"mixture model format version {version!r}, expected {MODEL_FORMAT_VERSION}"
            )
        return cls(
            pi=float(doc["pi"]),
            mu1=float(doc["mu1"]),
            var1=float(doc["var1"]),
            mu2=float(doc["mu2"]),
            var2=float(doc["var2"]),
            log_likelihood=float(doc["log_likelihood"]),
            iterations_used=int(doc["iterations_used"]),
            converged=bool(doc["converged"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "MixtureModel":
        return cls.from_dict(json.loads(text))


def from_sd(pi: float, mu1: float, sd1: float, mu2: float, sd2: float) -> MixtureModel:
    """Build a model from standard deviations rather than variances."""
    return MixtureModel(pi=pi, mu1=mu1, var1=sd1 * sd1, mu2=mu2, var2=sd2 * sd2)


# Fitted parameters reported for the production trace (log2 seconds).
REFERENCE_MODEL = from_sd(pi=0.43, mu1=7.13, sd1=1.38, mu2=11.78, sd2=2.32)


def _as_array(data: Sequence[float] | np.ndarray) -> np.ndarray:
    return np.asarray(data, dtype=float).ravel()


def normal_logpdf(y: np.ndarray, mu: float, var: float) -> np.ndarray:
    return -0.5 * (_LOG_2PI + math.log(var) + (y - mu) ** 2 / var)


def _component_logs(model: MixtureModel, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    with np.errstate(divide="ignore"):
        log_short = math.log1p(-model.pi) if model.pi < 1 else -math.inf
        log_long = math.log(model.pi) if model.pi > 0 else -math.inf
    return log_short + normal_logpdf(y, model.mu1, model.var1), log_long + normal_logpdf(y, model.mu2, model.var2)


def e_step(model: MixtureModel, data: Sequence[float] | np.ndarray) -> np.ndarray:
    """Responsibility of the long component for each observation."""
    y = _as_array(data)
    a, b = _component_logs(model, y)
    return np.exp(b - np.logaddexp(a, b))


def log_likelihood(model: MixtureModel, data: Sequence[float] | np.ndarray) -> float:
    y = _as_array(data)
    a, b = _component_logs(model, y)
    return float(np.sum(np.logaddexp(a, b)))


def m_step(data: Sequence[float] | np.ndarray, responsibilities: Sequence[float] | np.ndarray) -> MixtureModel:
    """Weighted means/variances (population convention) and mixing weight.

    Variances are floored at ``VARIANCE_FLOOR``.
    """
    y = _as_array(data)
    g = _as_array(responsibilities)
    w_long = float(np.sum(g))
    w_short = float(np.sum(1.0 - g))
    if w_long <= 0.0 or w_short <= 0.0:
        raise ComponentCollapse("all responsibility mass on one component")
    mu1 = float(np.sum((1.0 - g) * y) / w_short)
    mu2 = float(np.sum(g * y) / w_long)
    var1 = float(np.sum((1.0 - g) * (y - mu1) ** 2) / w_short)
    var2 = float(np.sum(g * (y - mu2) ** 2) / w_long)
    return MixtureModel(
        pi=w_long / y.size,
        mu1=mu1,
        var1=max(var1, VARIANCE_FLOOR),
        mu2=mu2,
        var2=max(var2, VARIANCE_FLOOR),
    )


def init_params(
    data: Sequence[float] | np.ndarray,
    policy: InitPolicy | str = InitPolicy.RANDOM_OBSERVATIONS,
    seed: int | np.random.SeedSequence = 0,
) -> MixtureModel:
    y = _as_array(data)
    if y.size < 2 or np.all(y == y[0]):
        raise DegenerateData("need at least two distinct observations")
    var = float(np.var(y))
    policy = InitPolicy(policy)
    if policy is InitPolicy.QUANTILE:
        ys = np.sort(y)
        lo = ys[max(1, math.ceil(0.25 * ys.size)) - 1]
        hi = ys[max(1, math.ceil(0.75 * ys.size)) - 1]
        if lo == hi:
            lo, hi = ys[0], ys[-1]
        return MixtureModel(pi=0.5, mu1=float(lo), var1=var, mu2=float(hi), var2=var)
    rng = np.random.default_rng(seed)
    i = int(rng.integers(y.size))
    candidates = np.flatnonzero(y != y[i])
    j = int(candidates[rng.integers(candidates.size)])
    return MixtureModel(pi=0.5, mu1=float(y[i]), var1=var, mu2=float(y[j]), var2=var)


def canonicalize(model: MixtureModel) -> MixtureModel:
    """Order components so that component 1 has the smaller mean."""
    if model.mu1 <= model.mu2:
        return model
    return replace(model, pi=1.0 - model.pi, mu1=model.mu2, var1=model.var2, mu2=model.mu1, var2=model.var1)


@dataclass
class RunDiagnostics:
    restart: int
    status: str
    log_likelihood: float
    iterations: int

    def as_dict(self) -> dict:
        return {
            "restart": self.restart,
            "status": self.status,
            "log_likelihood": self.log_likelihood,
            "iterations": self.iterations,
        }


def _e_step_with_ll(model: MixtureModel, y: np.ndarray) -> tuple[np.ndarray, float]:
    a, b = _component_logs(model, y)
    d = b - a
    e = np.exp(-np.abs(d))
    log_total = np.maximum(a, b) + np.log1p(e)
    gamma = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return gamma, float(np.sum(log_total))


def _run_em(y: np.ndarray, start: MixtureModel, config: EmConfig) -> tuple[MixtureModel, list[float]]:
    model = start
    g, ll = _e_step_with_ll(model, y)
    history = [ll]
    converged = False
    floor_hits = 0
    it = 0
    for it in range(1, config.max_iterations + 1):
        model = m_step(y, g)
        if model.var1 <= VARIANCE_FLOOR or model.var2 <= VARIANCE_FLOOR:
            floor_hits += 1
            if floor_hits >= 2:
                raise ComponentCollapse(f"variance floor hit on consecutive iterations ({it})")
        else:
            floor_hits = 0
        g, new_ll = _e_step_with_ll(model, y)
        history.append(new_ll)
        rel = abs(new_ll - ll) / max(abs(ll), 1e-300)
        ll = new_ll
        if rel < config.tolerance:
            converged = True
            break
    fitted = replace(model, log_likelihood=ll, iterations_used=it, converged=converged)
    return fitted, history


def fit_em(data: Sequence[float] | np.ndarray, config: EmConfig | None = None) -> MixtureModel:
    """Best-of-``restarts`` EM fit, returned in canonical form.

    Ties in log-likelihood go to the lowest restart index.
    """
    config = config or EmConfig()
    y = _as_array(data)
    if y.size < 2 or np.all(y == y[0]):
        raise DegenerateData("need at least two distinct observations")
    if config.init_policy is InitPolicy.QUANTILE:
        seeds: list = [config.seed]
    else:
        seeds = np.random.SeedSequence(config.seed).spawn(config.restarts)
    best: MixtureModel | None = None
    best_history: list[float] = []
    diagnostics: list[RunDiagnostics] = []
    for k, sub in enumerate(seeds):
        start = init_params(y, config.init_policy, sub)
        try:
            fitted, history = _run_em(y, start, config)
        except ComponentCollapse as exc:
            diagnostics.append(RunDiagnostics(k, f"collapsed: {exc}", float("nan"), 0))
            continue
        if not math.isfinite(fitted.log_likelihood):
            diagnostics.append(RunDiagnostics(k, "non-finite log-likelihood", fitted.log_likelihood, fitted.iterations_used))
            continue
        diagnostics.append(
            RunDiagnostics(k, "converged" if fitted.converged else "max_iterations", fitted.log_likelihood, fitted.iterations_used)
        )
        if best is None or fitted.log_likelihood > best.log_likelihood:
            best, best_history = fitted, history
    if best is None:
        raise FitFailed("every EM restart collapsed", [d.as_dict() for d in diagnostics])
    return replace(canonicalize(best), history=tuple(best_history))


def sample(model: MixtureModel, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` observations; returns (values, is_long) with is_long from the generating component."""
    is_long = rng.random(n) < model.pi
    z = rng.standard_normal(n)
    y = np.where(is_long, model.mu2 + model.sd2 * z, model.mu1 + model.sd1 * z)
    return y, is_long
