"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: data/configuration problems exit
with 2, numerical failures and non-convergence with 3.
"""


class GeoadditiveError(Exception):
    """Base class for all errors raised by this package."""


class DataError(GeoadditiveError):
    """Input data is unusable (missing column, NaN, wrong dtype, ...)."""


class ConfigError(GeoadditiveError):
    """A model or run configuration value is invalid."""


class DomainError(GeoadditiveError):
    """An input lies outside the mathematical domain of an operation."""


class NumericalError(GeoadditiveError):
    """A linear-algebra step failed (e.g. a Cholesky factorization)."""


class ConvergenceError(GeoadditiveError):
    """An iterative solver did not converge within its budget.

    Carries the partial state so callers can inspect what happened.
    """

    def __init__(self, message, trace=None, best=None):
        super().__init__(message)
        self.trace = trace
        self.best = best
