"""Exception hierarchy shared by the model, engine and CLI."""


class DCIMError(Exception):
    """Base class for all errors raised by the package."""


class ConfigurationError(DCIMError, ValueError):
    """A model, rule or run configuration is malformed."""


class ModelValidationError(ConfigurationError):
    """Raised when a model fails its invariants; carries the full report."""

    def __init__(self, report, message=None):
        self.report = report
        super().__init__(message or str(report))


class PreconditionError(DCIMError):
    """An operation was called on a model that violates its contract."""


class SearchSpaceError(DCIMError):
    """An enumeration would exceed its configured cap."""
