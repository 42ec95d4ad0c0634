"""Spatial covariance kernels, knot selection and the low-rank basis.

The spatial effect is represented on a subset of the observed sites
(the knots): each site gets one basis column per knot, filled with a
stationary covariance kernel evaluated at the Euclidean distance to
that knot. The Gram matrix of the kernel over the knots acts as the
prior precision of the knot coefficients.

All kernels are returned with unit sill; the overall scale of the
spatial effect is a penalty parameter handled by the model's block
precision, not by the kernel itself.
"""

import enum
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky
from scipy.spatial.distance import cdist, pdist

from .errors import ConfigError, DomainError, NumericalError

__all__ = [
    "CovarianceKind",
    "KnotSet",
    "SpatialBasis",
    "kernel_value",
    "select_knots",
    "spatial_basis",
]


class CovarianceKind(enum.Enum):
    """The four stationary covariance kernels supported by the model."""

    EXPONENTIAL = "exponential"
    MATERN = "matern"
    SPHERICAL = "spherical"
    # Note: despite the name, this is the squared-exponential (Gaussian)
    # kernel exp(-rho^2 d^2); the name is kept for continuity with the
    # geostatistics literature this model family comes from.
    CIRCULAR = "circular"

    @classmethod
    def parse(cls, name: str) -> "CovarianceKind":
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ConfigError(f"unknown covariance kind {name!r}; expected one of {valid}")


def kernel_value(kind: CovarianceKind, rho: float, d):
    """Unit-sill covariance kernel at distance ``d`` with decay ``rho``.

    Vectorized over ``d``. All kernels equal 1 at zero distance and take
    values in [0, 1].
    """
    if not np.isfinite(rho) or rho <= 0:
        raise DomainError(f"kernel decay rho must be positive, got {rho}")
    d = np.asarray(d, dtype=float)
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise DomainError("kernel distances must be finite and nonnegative")
    rd = rho * d
    if kind is CovarianceKind.EXPONENTIAL:
        return np.exp(-rd)
    if kind is CovarianceKind.MATERN:
        return np.exp(-rd) * (1.0 + rd)
    if kind is CovarianceKind.SPHERICAL:
        return np.where(rd <= 1.0, 1.0 - 1.5 * rd + 0.5 * rd**3, 0.0)
    if kind is CovarianceKind.CIRCULAR:
        return np.exp(-(rd**2))
    raise ConfigError(f"unhandled covariance kind {kind!r}")


@dataclass(frozen=True)
class KnotSet:
    """A space-filling subset of the observed coordinates.

    ``criterion_value`` is the minimum pairwise distance among the
    selected knots (the maximin criterion actually achieved).
    """

    knots: np.ndarray
    indices: np.ndarray
    selection_seed: int
    criterion_value: float

    @property
    def count(self) -> int:
        return self.knots.shape[0]


def default_num_knots(n: int) -> int:
    """Default knot count: n/4 capped at 100, with a floor of 20."""
    if n < 20:
        return n
    return min(max(int(np.ceil(n / 4)), 20), 100)


def _min_pairwise(dist: np.ndarray) -> float:
    s = dist.shape[0]
    if s < 2:
        return np.inf
    return float(dist[np.triu_indices(s, k=1)].min())


def select_knots(coords, num_knots: int, seed: int = 0, swaps: int | None = None) -> KnotSet:
    """Choose ``num_knots`` well-spread sites among the observed coordinates.

    Greedy maximin initialization (random starting site, then repeatedly
    add the candidate farthest from the current set) followed by
    point-swap local search: sweep over (selected, unselected) pairs and
    accept any swap that strictly increases the minimum pairwise knot
    distance, within a fixed budget of ``swaps`` attempts (default
    ``10 * num_knots``). Deterministic for a given seed.

    Duplicate coordinates are collapsed to a single candidate with a
    warning. Knots are always observed sites, never synthetic points.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ConfigError(f"coordinates must be an (n, 2) array, got shape {coords.shape}")
    if not np.all(np.isfinite(coords)):
        raise DomainError("coordinates must be finite")

    _, first_idx = np.unique(coords, axis=0, return_index=True)
    if first_idx.size < coords.shape[0]:
        warnings.warn(
            f"{coords.shape[0] - first_idx.size} duplicate coordinate(s) collapsed "
            "to a single knot candidate",
            stacklevel=2,
        )
    candidate_idx = np.sort(first_idx)
    sites = coords[candidate_idx]
    n = sites.shape[0]
    if num_knots > n:
        raise ConfigError(f"requested {num_knots} knots but only {n} distinct sites exist")
    if num_knots < 2:
        raise ConfigError(f"need at least 2 knots, got {num_knots}")
    if swaps is None:
        swaps = 10 * num_knots

    if num_knots == n:
        d = cdist(sites, sites)
        return KnotSet(
            knots=sites.copy(),
            indices=candidate_idx.copy(),
            selection_seed=int(seed),
            criterion_value=_min_pairwise(d),
        )

    rng = np.random.Generator(np.random.Philox(seed))
    all_dist = cdist(sites, sites)

    # Greedy maximin: seed with one random site, then grow.
    selected = [int(rng.integers(n))]
    min_dist = all_dist[selected[0]].copy()
    min_dist[selected[0]] = -np.inf
    while len(selected) < num_knots:
        nxt = int(np.argmax(min_dist))
        selected.append(nxt)
        min_dist = np.minimum(min_dist, all_dist[nxt])
        min_dist[nxt] = -np.inf

    selected = np.array(selected)
    in_set = np.zeros(n, dtype=bool)
    in_set[selected] = True
    sel_dist = all_dist[np.ix_(selected, selected)]
    best_crit = _min_pairwise(sel_dist)

    # Point-swap improvement sweeps, each trial counted against the budget.
    # After an accepted swap the candidate pool is stale, so restart the
    # sweep position loop with a fresh pool.
    attempts = 0
    improved = True
    while improved and attempts < swaps:
        improved = False
        for pos in range(num_knots):
            accepted = False
            for cand in np.nonzero(~in_set)[0]:
                if attempts >= swaps:
                    break
                attempts += 1
                trial_row = all_dist[cand, selected]
                trial_row_mod = trial_row.copy()
                trial_row_mod[pos] = np.inf
                others = np.delete(np.arange(num_knots), pos)
                remaining = sel_dist[np.ix_(others, others)]
                crit = min(_min_pairwise(remaining), float(trial_row_mod.min()))
                if crit > best_crit:
                    old = selected[pos]
                    in_set[old] = False
                    in_set[cand] = True
                    selected[pos] = cand
                    sel_dist[pos, :] = all_dist[cand, selected]
                    sel_dist[:, pos] = sel_dist[pos, :]
                    sel_dist[pos, pos] = 0.0
                    best_crit = crit
                    improved = True
                    accepted = True
                    break
            if accepted or attempts >= swaps:
                break

    order = np.argsort(selected)
    selected = selected[order]
    return KnotSet(
        knots=sites[selected].copy(),
        indices=candidate_idx[selected].copy(),
        selection_seed=int(seed),
        criterion_value=best_crit,
    )


@dataclass(frozen=True)
class SpatialBasis:
    """Low-rank spatial basis: kernel columns ``Z`` and knot Gram ``Omega``.

    ``omega`` holds the raw kernel Gram matrix over the knots (diagonal
    equal to the kernel at distance zero); ``jitter`` is the diagonal
    augmentation used whenever Omega enters a factorization.
    """

    Z: np.ndarray
    omega: np.ndarray
    rho: float
    kind: CovarianceKind
    jitter: float

    @property
    def num_knots(self) -> int:
        return self.omega.shape[0]

    def omega_regularized(self) -> np.ndarray:
        return self.omega + self.jitter * np.eye(self.num_knots)

    def omega_logdet(self) -> float:
        chol = self.omega_cholesky()
        return 2.0 * float(np.sum(np.log(np.diag(chol))))

    def omega_cholesky(self) -> np.ndarray:
        """Lower Cholesky factor of the jitter-regularized Gram matrix."""
        try:
            return cholesky(self.omega_regularized(), lower=True)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
            raise NumericalError(
                "Cholesky of the knot Gram matrix failed even with jitter "
                f"{self.jitter:g}; increase the jitter or reduce the number of knots"
            ) from exc


def spatial_basis(coords, knots: KnotSet, kind: CovarianceKind, rho: float,
                  jitter: float | None = None) -> SpatialBasis:
    """Build ``Z`` (site-by-knot) and ``Omega`` (knot Gram) for one kernel.

    Distances are plain Euclidean distances on the coordinates as given.
    ``jitter`` defaults to ``1e-10 * mean(diag(Omega))``; Cholesky of the
    regularized Gram matrix is attempted eagerly so an unusable (rho,
    kernel) combination fails here with a clear message.
    """
    coords = np.asarray(coords, dtype=float)
    if not np.isfinite(rho) or rho <= 0:
        raise DomainError(f"rho must be positive, got {rho}")
    z = kernel_value(kind, rho, cdist(coords, knots.knots))
    omega = kernel_value(kind, rho, cdist(knots.knots, knots.knots))
    omega = 0.5 * (omega + omega.T)
    if jitter is None:
        jitter = 1e-10 * float(np.mean(np.diag(omega)))
    if jitter < 0:
        raise DomainError(f"jitter must be nonnegative, got {jitter}")
    basis = SpatialBasis(Z=z, omega=omega, rho=float(rho), kind=kind, jitter=float(jitter))
    try:
        cholesky(basis.omega_regularized(), lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"knot Gram matrix is not positive definite at rho={rho:g} with jitter "
            f"{jitter:g}; increase the jitter or use fewer knots"
        ) from exc
    return basis


def pairwise_distance_stats(coords) -> tuple[float, float]:
    """(median, max) of the pairwise Euclidean distances between sites."""
    d = pdist(np.asarray(coords, dtype=float))
    if d.size == 0:
        raise ConfigError("need at least two sites to compute pairwise distances")
    return float(np.median(d)), float(d.max())
