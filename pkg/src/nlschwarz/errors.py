"""Exception types shared across the solver stack."""


class NlschwarzError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(NlschwarzError):
    """Invalid or inconsistent configuration."""


class DimensionError(NlschwarzError):
    """Array or matrix dimensions do not match."""


class SingularMatrixError(NlschwarzError):
    """Direct factorization hit a zero or near-zero pivot."""

    def __init__(self, message, pivot_index=None):
        super().__init__(message)
        self.pivot_index = pivot_index


class NotConvergedError(NlschwarzError):
    """An iteration reached its budget without meeting the tolerance.

    Carries the best iterate and the last residual/update norm so callers
    can inspect or continue from it.
    """

    def __init__(self, message, best=None, residual=None, iterations=None, history=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.iterations = iterations
        self.history = history


class DivergedError(NlschwarzError):
    """An iteration produced non-finite values."""


class NormalizationError(NlschwarzError):
    """A field that must be normalizable has zero norm."""


class DomainError(NlschwarzError):
    """A point lies outside the region where an operation is defined."""
