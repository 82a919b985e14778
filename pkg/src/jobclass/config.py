"""Pipeline configuration: a flat ``key = value`` file plus command-line overrides."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .cart import GrowParams
from .errors import ConfigError
from .kvfile import read_kv
from .mixture import EmConfig, InitPolicy
from .selection import DEFAULT_GRID, Baseline, CvConfig, OperatingPolicy
from .trace import Schema

KNOWN_KEYS = {
    "trace",
    "validation_trace",
    "output_dir",
    "schema",
    "seed",
    "variables",
    "include_temporal",
    "threshold_grid",
    "policy",
    "band_k",
    "em.max_iterations",
    "em.tolerance",
    "em.restarts",
    "em.init_policy",
    "em.seed",
    "grow.max_depth",
    "grow.min_node_size",
    "grow.min_impurity_decrease",
    "grow.max_surrogates",
    "prune.folds",
    "cv.iterations",
    "cv.train_fraction",
    "cv.baseline",
    "cv.seed",
    "histogram.bins",
}


def _parse_grid(text: str) -> tuple[float, ...]:
    try:
        grid = tuple(float(t) for t in text.replace(" ", "").split(",") if t)
    except ValueError as exc:
        raise ConfigError(f"bad threshold grid {text!r}") from exc
    if not grid or any(not 0 < t < 1 for t in grid) or list(grid) != sorted(grid):
        raise ConfigError(f"threshold grid must be ascending values in (0, 1): {text!r}")
    return grid


@dataclass
class PipelineConfig:
    trace: Path | None = None
    validation_trace: Path | None = None
    output_dir: Path = Path("out")
    schema_path: Path | None = None
    seed: int = 0
    variables: tuple[str, ...] | None = None
    include_temporal: bool = True
    threshold_grid: tuple[float, ...] = DEFAULT_GRID
    policy: OperatingPolicy = OperatingPolicy.YOUDEN
    band_k: float = 0.5
    em: EmConfig = field(default_factory=EmConfig)
    grow: GrowParams = field(default_factory=GrowParams)
    prune_folds: int = 10
    cv: CvConfig = field(default_factory=CvConfig)
    histogram_bins: int = 60
    raw: dict[str, str] = field(default_factory=dict)

    @property
    def schema(self) -> Schema:
        return Schema.load(self.schema_path) if self.schema_path else Schema()

    @classmethod
    def from_mapping(cls, items: Mapping[str, str], base_dir: Path | None = None) -> "PipelineConfig":
        unknown = set(items) - KNOWN_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        base_dir = base_dir or Path(".")

        def path(key: str) -> Path | None:
            if not items.get(key):
                return None
            p = Path(items[key])
            return p if p.is_absolute() else base_dir / p

        def num(key: str, conv, default):
            if key not in items or items[key] == "":
                return default
            try:
                return conv(items[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {items[key]!r}") from exc

        seed = num("seed", int, 0)
        try:
            em = EmConfig(
                max_iterations=num("em.max_iterations", int, 1000),
                tolerance=num("em.tolerance", float, 1e-8),
                restarts=num("em.restarts", int, 5),
                seed=num("em.seed", int, seed),
                init_policy=InitPolicy(items.get("em.init_policy", InitPolicy.RANDOM_OBSERVATIONS.value)),
            )
            grow = GrowParams(
                max_depth=num("grow.max_depth", int, 30),
                min_node_size=num("grow.min_node_size", int, 50),
                min_impurity_decrease=num("grow.min_impurity_decrease", float, 1e-6),
                max_surrogates=num("grow.max_surrogates", int, 5),
            )
            baseline_text = items.get("cv.baseline", "mean")
            if baseline_text.startswith("fixed:"):
                baseline, baseline_value = Baseline.FIXED, float(baseline_text.split(":", 1)[1])
            else:
                baseline, baseline_value = Baseline(baseline_text), 0.0
            prune_folds = num("prune.folds", int, 10)
            cv = CvConfig(
                iterations=num("cv.iterations", int, 150),
                train_fraction=num("cv.train_fraction", float, 0.8),
                seed=num("cv.seed", int, seed),
                baseline=baseline,
                baseline_value=baseline_value,
                prune_folds=prune_folds,
            )
            policy = OperatingPolicy(items.get("policy", "youden"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        variables = None
        if items.get("variables"):
            variables = tuple(v.strip() for v in items["variables"].split(",") if v.strip())
        cfg = cls(
            trace=path("trace"),
            validation_trace=path("validation_trace"),
            output_dir=path("output_dir") or Path("out"),
            schema_path=path("schema"),
            seed=seed,
            variables=variables,
            include_temporal=items.get("include_temporal", "true").lower() in ("1", "true", "yes"),
            threshold_grid=_parse_grid(items["threshold_grid"]) if items.get("threshold_grid") else DEFAULT_GRID,
            policy=policy,
            band_k=num("band_k", float, 0.5),
            em=em,
            grow=grow,
            prune_folds=prune_folds,
            cv=cv,
            histogram_bins=num("histogram.bins", int, 60),
            raw=dict(items),
        )
        if not cfg.band_k > 0:
            raise ConfigError("band_k must be > 0")
        return cfg

    @classmethod
    def load(cls, path: str | Path | None, overrides: Mapping[str, str] | None = None) -> "PipelineConfig":
        items: dict[str, str] = {}
        base = Path(".")
        if path is not None:
            items = read_kv(path)
            base = Path(path).parent
        # command-line overrides are relative to the working directory
        merged = dict(items)
        for k, v in (overrides or {}).items():
            if v is None:
                continue
            if k in ("trace", "validation_trace", "output_dir", "schema"):
                v = Path(v).resolve()
            merged[k] = str(v)
        return cls.from_mapping(merged, base)

    def require_paths(self, *keys: str) -> None:
        for key in keys:
            p = getattr(self, key)
            if p is None:
                raise ConfigError(f"config is missing {key}")
            if not Path(p).exists():
                raise ConfigError(f"{key} does not exist: {p}")
        if self.schema_path is not None and not self.schema_path.exists():
            raise ConfigError(f"schema does not exist: {self.schema_path}")

    def fingerprint(self) -> str:
        """Hash of the effective settings (paths excluded, so moved inputs hash the same)."""
        parts = [
            f"seed={self.seed}",
            f"variables={','.join(self.variables) if self.variables else '*'}",
            f"include_temporal={self.include_temporal}",
            f"grid={','.join(repr(t) for t in self.threshold_grid)}",
            f"policy={self.policy.value}",
            f"band_k={self.band_k!r}",
            f"em={self.em.max_iterations},{self.em.tolerance!r},{self.em.restarts},{self.em.seed},{self.em.init_policy.value}",
            f"grow={self.grow.max_depth},{self.grow.min_node_size},{self.grow.min_impurity_decrease!r},{self.grow.max_surrogates}",
            f"prune={self.prune_folds}",
            f"cv={self.cv.iterations},{self.cv.train_fraction!r},{self.cv.seed},{self.cv.baseline.value},{self.cv.baseline_value!r}",
            f"bins={self.histogram_bins}",
        ]
        if self.schema_path is not None and self.schema_path.exists():
            parts.append("schema=" + hashlib.sha256(self.schema_path.read_bytes()).hexdigest())
        return hashlib.sha256("\n".join(parts).encode()).hexdigest()[:16]

