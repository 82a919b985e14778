"""Exception hierarchy shared by the pipeline stages."""

from __future__ import annotations


class JobClassError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(JobClassError):
    exit_code = 2


class DataError(JobClassError):
    exit_code = 3


class EmptyDataset(DataError):
    pass


class DegenerateData(DataError):
    pass


class EmptyNode(DataError):
    pass


class EmptyBand(DataError):
    pass


class NoCrossingInBracket(DataError):
    pass


class IncompatibleArtifact(ConfigError):
    """Raised when a persisted model or tree has an unexpected format version."""


class FitError(JobClassError):
    exit_code = 4


class ComponentCollapse(FitError):
    pass


class FitFailed(FitError):
    def __init__(self, message: str, diagnostics: list[dict] | None = None) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics or []
