"""Runtime-class prediction for batch jobs: a two-component mixture on
log2 runtimes supplies labels, a CART classifier learns them from
submit-time attributes, and a small queue simulator measures the payoff."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import ConfigError, DataError, FitError, JobClassError  # noqa: E402
from .labeling import LONG, SHORT  # noqa: E402
from .mixture import EmConfig, MixtureModel, fit_em  # noqa: E402

__all__ = [
    "__version__",
    "ConfigError",
    "DataError",
    "FitError",
    "JobClassError",
    "LONG",
    "SHORT",
    "EmConfig",
    "MixtureModel",
    "fit_em",
]
