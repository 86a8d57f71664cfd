"""Exception hierarchy shared across the package.

Two branches matter for the CLI exit-code mapping: ``DataError`` (bad or
insufficient input, exit 2) and ``NumericalError`` (estimation/optimization
failures, exit 3). Configuration mistakes raise ``ConfigError`` (exit 1).
"""


class PspsError(Exception):
    """Base class for package errors."""


class DataError(PspsError):
    """Input data is malformed, missing, or insufficient."""


class InsufficientDataError(DataError):
    """Too few observations for the requested operation."""


class EmptyUniverseError(DataError):
    """No assets survive cleaning or universe construction."""


class ConfigError(PspsError):
    """Invalid or inconsistent configuration."""


class NumericalError(PspsError):
    """Estimation or optimization failed numerically."""


class SingularMatrixError(NumericalError):
    """A matrix expected to be positive definite failed to factor."""


class CollinearFactorError(SingularMatrixError):
    """Demeaned factor columns are collinear or constant."""


class SingularDesignError(NumericalError):
    """Design contains a zero-norm column with no penalty to pin it."""


class RegimeError(NumericalError):
    """Dimension/sample-size regime outside an estimator's validity range."""


class DegenerateModelError(NumericalError):
    """Population or plug-in model is degenerate (e.g. theta <= 0)."""


class DegenerateGridError(NumericalError):
    """Regularization grid cannot be built (zero score vector)."""


class IterationLimitError(NumericalError):
    """Solver hit its sweep limit; carries the last iterate."""

    def __init__(self, message, last_iterate=None, iterations=0):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations


class NoValidLambdaError(NumericalError):
    """Every grid candidate was filtered by the active-set size cap."""


class EmptyScreenError(NumericalError):
    """Screening selected no assets; the caller decides the fallback."""


class EmptyModelError(NumericalError):
    """A pilot fit is identically zero, leaving nothing to re-weight."""


class UndefinedRatioError(NumericalError):
    """A Sharpe-type ratio is undefined (zero weights or zero dispersion)."""
