"""B-spline bases, discrete difference penalties and column centering.

Smooth covariate effects are represented as linear combinations of
B-spline basis functions with a roughness penalty on successive
coefficients. This module builds the basis matrices, the penalty
matrices and the column-centering transform that makes the smooth
blocks identifiable next to an intercept.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from .errors import ConfigError, DomainError

__all__ = [
    "BSplineBasis",
    "PenaltyMatrix",
    "CenteringTransform",
    "bspline_basis",
    "difference_penalty",
    "center_columns",
]

DEFAULT_NUM_BASIS = 15


@dataclass(frozen=True)
class BSplineBasis:
    """A clamped B-spline basis on a closed interval.

    Parameters
    ----------
    lo, hi : float
        Domain endpoints. Evaluation outside ``[lo, hi]`` is an error,
        never silent extrapolation.
    num_basis : int
        Number of basis functions K. Must be at least ``degree + 1``.
    degree : int
        Polynomial degree of each piece (cubic by default).

    The knot vector uses equally spaced interior knots with fully
    clamped (open) boundaries, so K = #interior + degree + 1 and the
    basis interpolates at the endpoints.
    """

    lo: float
    hi: float
    num_basis: int = DEFAULT_NUM_BASIS
    degree: int = 3
    knot_vector: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not np.isfinite(self.lo) or not np.isfinite(self.hi) or self.lo >= self.hi:
            raise ConfigError(
                f"spline domain must be a finite interval, got [{self.lo}, {self.hi}]"
            )
        if self.degree < 0:
            raise ConfigError(f"spline degree must be nonnegative, got {self.degree}")
        if self.num_basis < self.degree + 1:
            raise ConfigError(
                f"need at least degree + 1 = {self.degree + 1} basis functions, "
                f"got {self.num_basis}"
            )
        n_interior = self.num_basis - self.degree - 1
        interior = np.linspace(self.lo, self.hi, n_interior + 2)[1:-1]
        knots = np.concatenate(
            [
                np.full(self.degree + 1, self.lo),
                interior,
                np.full(self.degree + 1, self.hi),
            ]
        )
        object.__setattr__(self, "knot_vector", knots)

    @classmethod
    def from_values(cls, x, num_basis=DEFAULT_NUM_BASIS, degree=3):
        """Basis spanning the observed range of ``x``."""
        x = np.asarray(x, dtype=float)
        return cls(lo=float(x.min()), hi=float(x.max()), num_basis=num_basis, degree=degree)


def bspline_basis(x, basis: BSplineBasis) -> np.ndarray:
    """Evaluate every basis function of ``basis`` at the points ``x``.

    Returns an ``(n, K)`` matrix whose rows sum to one (partition of
    unity). Raises :class:`DomainError` if any point lies outside the
    basis domain, naming the first offending index.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    bad = np.nonzero((x < basis.lo) | (x > basis.hi) | ~np.isfinite(x))[0]
    if bad.size:
        i = int(bad[0])
        raise DomainError(
            f"value {x[i]!r} at index {i} lies outside the spline domain "
            f"[{basis.lo}, {basis.hi}]"
        )
    design = BSpline.design_matrix(x, basis.knot_vector, basis.degree, extrapolate=False)
    return np.asarray(design.todense())


@dataclass(frozen=True)
class PenaltyMatrix:
    """Difference penalty ``P = D_m' D_m + ridge * I`` on spline coefficients.

    The ridge term makes P full rank; without it, m-th order differences
    annihilate polynomial coefficient sequences of degree below m.
    """

    matrix: np.ndarray
    order: int
    ridge: float

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def logdet(self) -> float:
        """Log-determinant via Cholesky (well defined once ridge > 0)."""
        try:
            chol = np.linalg.cholesky(self.matrix)
        except np.linalg.LinAlgError:
            return -np.inf
        return 2.0 * float(np.sum(np.log(np.diag(chol))))


def difference_penalty(num_basis: int, order: int = 2, ridge: float = 1e-12) -> PenaltyMatrix:
    """Build the ``num_basis`` x ``num_basis`` difference penalty matrix.

    Parameters
    ----------
    num_basis : int
        Number of coefficients K being penalized; must exceed ``order``.
    order : int
        Difference order m (second differences by default).
    ridge : float
        Small diagonal augmentation that restores full rank.
    """
    if order < 1:
        raise ConfigError(f"difference order must be >= 1, got {order}")
    if num_basis <= order:
        raise ConfigError(
            f"penalty needs more coefficients ({num_basis}) than its order ({order})"
        )
    if ridge < 0:
        raise ConfigError(f"ridge must be nonnegative, got {ridge}")
    d = np.diff(np.eye(num_basis), n=order, axis=0)
    p = d.T @ d + ridge * np.eye(num_basis)
    return PenaltyMatrix(matrix=p, order=order, ridge=float(ridge))


@dataclass(frozen=True)
class CenteringTransform:
    """Column means recorded at fit time, reapplied verbatim at prediction."""

    column_means: np.ndarray

    def apply(self, b: np.ndarray) -> np.ndarray:
        """Subtract the stored means from the columns of ``b``."""
        return np.asarray(b, dtype=float) - self.column_means


def center_columns(b: np.ndarray):
    """Mean-center the columns of ``b``.

    Returns the centered matrix together with a
    :class:`CenteringTransform` holding the subtracted means, so the
    same shift can be applied to basis rows built for new points.
    """
    b = np.asarray(b, dtype=float)
    if b.ndim != 2 or b.shape[0] < 1:
        raise ConfigError(f"expected a nonempty 2-d matrix, got shape {b.shape}")
    means = b.mean(axis=0)
    transform = CenteringTransform(column_means=means)
    return b - means, transform
