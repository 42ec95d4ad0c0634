"""Model specification and global design-matrix assembly.

The fitted coefficient vector is laid out block by block:

    xi = (beta, theta_1, ..., theta_q, u)

where beta covers the intercept, the linear covariates and (when a
spatial component is present) the two raw coordinate columns; each
theta_j holds the B-spline coefficients of one smooth covariate; and u
holds the knot coefficients of the low-rank spatial basis. The global
design matrix stacks the matching column blocks:

    C = [X : B_1 : ... : B_q : Z(rho)]

with the spline and spatial blocks column-centered for identifiability
next to the intercept. The block prior precision is

    Q(lambda) = blkdiag(zeta I, lambda_1 P_1, ..., lambda_q P_q,
                        lambda_spat Omega(rho))

so only the Z block and Omega depend on the kernel decay rho.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import spatial, splines
from .errors import ConfigError, DataError, DomainError
from .families import Family

__all__ = [
    "SmoothTerm",
    "SpatialConfig",
    "PriorConfig",
    "ModelSpec",
    "DesignSystem",
    "DesignBuilder",
    "build_design",
    "precision",
    "precision_logdet",
]


@dataclass(frozen=True)
class SmoothTerm:
    """One smooth covariate: basis size, degree and penalty order."""

    name: str
    num_basis: int = splines.DEFAULT_NUM_BASIS
    degree: int = 3
    penalty_order: int = 2
    ridge: float = 1e-12


@dataclass(frozen=True)
class SpatialConfig:
    """Low-rank spatial component configuration.

    ``coords`` names the two coordinate columns in the data table.
    ``num_knots=None`` applies the default rule (n/4 capped at 100,
    floor 20).
    """

    kind: spatial.CovarianceKind = spatial.CovarianceKind.EXPONENTIAL
    coords: tuple[str, str] = ("w1", "w2")
    num_knots: int | None = None
    seed: int = 0
    swaps: int | None = None
    jitter: float | None = None


@dataclass(frozen=True)
class PriorConfig:
    """Hyperprior constants for the coefficient and penalty priors."""

    zeta: float = 1e-5
    nu: float = 3.0
    a_delta: float = 1e-5
    b_delta: float = 1e-5

    def __post_init__(self):
        for label in ("zeta", "nu", "a_delta", "b_delta"):
            value = getattr(self, label)
            if not np.isfinite(value) or value <= 0:
                raise ConfigError(f"prior constant {label} must be positive, got {value}")


@dataclass(frozen=True)
class ModelSpec:
    """Declarative model description tying column names to model blocks."""

    response: str
    family: Family = Family.GAUSSIAN
    linear: tuple[str, ...] = ()
    smooths: tuple[SmoothTerm, ...] = ()
    spatial: SpatialConfig | None = None
    priors: PriorConfig = field(default_factory=PriorConfig)
    offset: str | None = None

    def __post_init__(self):
        names = [self.response, *self.linear, *(s.name for s in self.smooths)]
        if self.spatial is not None:
            names.extend(self.spatial.coords)
        if self.offset is not None:
            names.append(self.offset)
        seen = set()
        for name in names:
            if name in seen:
                raise ConfigError(f"column {name!r} is used by more than one model block")
            seen.add(name)

    @property
    def smooth_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.smooths)

    @property
    def num_penalties(self) -> int:
        return len(self.smooths) + (1 if self.spatial is not None else 0)


def _column(data, name: str) -> np.ndarray:
    try:
        col = data[name]
    except (KeyError, IndexError, TypeError):
        raise DataError(f"data has no column named {name!r}")
    col = np.asarray(col, dtype=float)
    if col.ndim != 1:
        raise DataError(f"column {name!r} is not one-dimensional")
    if not np.all(np.isfinite(col)):
        raise DataError(f"column {name!r} contains missing or non-finite values")
    return col


@dataclass(frozen=True)
class DesignSystem:
    """Assembled design: matrix, layout and everything rho-dependent.

    ``layout`` maps block names ('beta', each smooth name, 'spatial')
    to column slices of ``C``. ``centering`` stores the transforms that
    were applied to the spline and spatial blocks so prediction rows can
    be shifted identically.
    """

    spec: ModelSpec
    C: np.ndarray | None
    layout: dict
    n: int
    x_names: tuple
    bases: dict
    penalties: dict
    centering: dict
    knots: spatial.KnotSet | None
    spatial_basis: spatial.SpatialBasis | None
    rho: float | None

    @property
    def num_columns(self) -> int:
        return self.layout["__total__"]

    @property
    def beta_size(self) -> int:
        s = self.layout["beta"]
        return s.stop - s.start

    def block(self, name: str) -> slice:
        try:
            return self.layout[name]
        except KeyError:
            raise ConfigError(f"model has no block named {name!r}")

    def penalty_blocks(self):
        """Yield (block name, slice, penalty matrix, logdet) per penalized block.

        Order matches the lambda vector: smooth terms first, spatial last.
        The spatial penalty matrix is the jitter-regularized knot Gram.
        """
        for term in self.spec.smooths:
            pen = self.penalties[term.name]
            yield term.name, self.layout[term.name], pen.matrix, pen.logdet()
        if self.spec.spatial is not None:
            sb = self.spatial_basis
            yield "spatial", self.layout["spatial"], sb.omega_regularized(), sb.omega_logdet()


class DesignBuilder:
    """Validates the data once and builds designs for any kernel decay.

    Everything that does not depend on rho (covariate columns, spline
    bases and their centering, knot selection, site-to-knot distances)
    is computed a single time; :meth:`build` only fills in the kernel
    values for the requested rho.
    """

    def __init__(self, spec: ModelSpec, data):
        self.spec = spec
        self.y = _column(data, spec.response)
        self.n = self.y.size
        if self.n < 1:
            raise DataError("data table is empty")

        if spec.offset is not None:
            off = _column(data, spec.offset)
            if np.any(off <= 0):
                raise DataError(f"offset column {spec.offset!r} must be strictly positive")
            self.log_offset = np.log(off)
        else:
            self.log_offset = None

        x_cols = [np.ones(self.n)]
        self.x_names = ["intercept"]
        for name in spec.linear:
            x_cols.append(_column(data, name))
            self.x_names.append(name)
        if spec.spatial is not None:
            w1 = _column(data, spec.spatial.coords[0])
            w2 = _column(data, spec.spatial.coords[1])
            self.coords = np.column_stack([w1, w2])
            x_cols.extend([w1, w2])
            self.x_names.extend(list(spec.spatial.coords))
        else:
            self.coords = None
        self.X = np.column_stack(x_cols)

        layout = {}
        start = 0
        layout["beta"] = slice(0, self.X.shape[1])
        start = self.X.shape[1]

        self.bases = {}
        self.penalties = {}
        self.centering = {}
        self.smooth_blocks = {}
        for term in spec.smooths:
            values = _column(data, term.name)
            if values.min() == values.max():
                raise DataError(f"smooth covariate {term.name!r} is constant")
            basis = splines.BSplineBasis.from_values(
                values, num_basis=term.num_basis, degree=term.degree
            )
            b = splines.bspline_basis(values, basis)
            b_centered, transform = splines.center_columns(b)
            self.bases[term.name] = basis
            self.penalties[term.name] = splines.difference_penalty(
                term.num_basis, term.penalty_order, term.ridge
            )
            self.centering[term.name] = transform
            self.smooth_blocks[term.name] = b_centered
            layout[term.name] = slice(start, start + term.num_basis)
            start += term.num_basis

        if spec.spatial is not None:
            num_knots = spec.spatial.num_knots
            if num_knots is None:
                num_knots = spatial.default_num_knots(self.n)
            self.knots = spatial.select_knots(
                self.coords, num_knots, seed=spec.spatial.seed, swaps=spec.spatial.swaps
            )
            layout["spatial"] = slice(start, start + self.knots.count)
            start += self.knots.count
            self.median_distance, self.max_distance = spatial.pairwise_distance_stats(self.coords)
        else:
            self.knots = None
            self.median_distance = self.max_distance = None

        layout["__total__"] = start
        self.layout = layout

    def build(self, rho: float | None = None) -> DesignSystem:
        """Assemble the design at kernel decay ``rho``.

        ``rho`` is required exactly when the model has a spatial
        component; only the Z block and the knot Gram matrix change
        between calls with different rho.
        """
        blocks = [self.X]
        blocks.extend(self.smooth_blocks[t.name] for t in self.spec.smooths)
        centering = dict(self.centering)
        if self.spec.spatial is not None:
            if rho is None:
                raise ConfigError("the spatial component needs a kernel decay rho")
            sb = spatial.spatial_basis(
                self.coords, self.knots, self.spec.spatial.kind, rho,
                jitter=self.spec.spatial.jitter,
            )
            z_centered, z_transform = splines.center_columns(sb.Z)
            blocks.append(z_centered)
            centering["spatial"] = z_transform
        else:
            if rho is not None:
                raise ConfigError("rho given but the model has no spatial component")
            sb = None
        return DesignSystem(
            spec=self.spec,
            C=np.hstack(blocks),
            layout=dict(self.layout),
            n=self.n,
            x_names=tuple(self.x_names),
            bases=dict(self.bases),
            penalties=dict(self.penalties),
            centering=centering,
            knots=self.knots,
            spatial_basis=sb,
            rho=None if rho is None else float(rho),
        )


def build_design(spec: ModelSpec, data, rho: float | None = None) -> DesignSystem:
    """One-shot design assembly (validate + build at a single rho)."""
    return DesignBuilder(spec, data).build(rho)


def _check_lambda(design: DesignSystem, lam) -> np.ndarray:
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    expected = design.spec.num_penalties
    if lam.size != expected:
        raise ConfigError(f"expected {expected} penalty parameter(s), got {lam.size}")
    if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
        raise DomainError("penalty parameters must be positive and finite")
    return lam


def precision(design: DesignSystem, lam) -> np.ndarray:
    """Block prior precision ``Q(lambda)`` as a dense symmetric matrix."""
    lam = _check_lambda(design, lam)
    p_tot = design.num_columns
    q = np.zeros((p_tot, p_tot))
    beta = design.layout["beta"]
    idx = np.arange(beta.start, beta.stop)
    q[idx, idx] = design.spec.priors.zeta
    for j, (_, blk, matrix, _) in enumerate(design.penalty_blocks()):
        q[blk, blk] = lam[j] * matrix
    return q


def precision_logdet(design: DesignSystem, lam) -> float:
    """log|Q(lambda)| accumulated block by block.

    Uses the block-diagonal structure: the beta block contributes
    ``p_beta * log(zeta)``, each penalized block of size m contributes
    ``m * log(lambda_j)`` plus the cached log-determinant of its
    penalty matrix.
    """
    lam = _check_lambda(design, lam)
    total = design.beta_size * np.log(design.spec.priors.zeta)
    for j, (_, blk, _, block_logdet) in enumerate(design.penalty_blocks()):
        size = blk.stop - blk.start
        total += size * np.log(lam[j]) + block_logdet
    return float(total)


def with_family(spec: ModelSpec, family: Family) -> ModelSpec:
    """Copy of ``spec`` with a different response family."""
    return replace(spec, family=family)
