"""Exception types shared across the package."""
from __future__ import annotations


class ConfigError(ValueError):
    """A run configuration could not be parsed or validated."""


class ModelError(ValueError):
    """A model violates a structural requirement (e.g. nonpositive energy)."""


class StabilityError(RuntimeError):
    """The initial state fails the stability precondition of a scheme."""


class NumericError(RuntimeError):
    """A numeric computation produced a non-finite value or diverged.

    The offending point, when known, is attached as ``point``.
    """

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class ConvergenceError(RuntimeError):
    """A refinement sequence failed to converge; diagnostics attached.

    ``diagnostics`` carries the LimitDiagnostics collected before the
    failure, so callers can inspect the distance history.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics
