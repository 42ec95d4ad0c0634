"""Simulation studies: data generation, replicate fitting and scoring.

Each scenario draws covariates uniformly on the unit interval and
coordinates uniformly over the spatial domain, builds the mean
structure

    mu = 3 - 0.5 x1 + cos(2 pi x2) + s(w1, w2)

and generates responses around it: Gaussian scenarios add N(0, sigma^2)
noise; count scenarios draw Poisson responses with rate mu * exp(eps),
eps ~ N(0, sigma^2) per observation, so the count data carry
multiplicative excess variability on top of the Poisson noise.

The spatial truth s is one of three fixed two-dimensional functions,
or a Gaussian random field realization (constant-mean scenarios used
for benchmarking the spatial-only model). Scoring mirrors the usual
reporting layout: percent bias and credible-interval coverage for the
mean-centered smooth and spatial terms, bias and percent bias for the
mean response, and prediction-interval coverage for fresh responses at
held-out points.
"""

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import cdist

from .design import ModelSpec, SmoothTerm, SpatialConfig
from .errors import ConfigError, ConvergenceError, NumericalError
from .families import Family
from .inference import FitOptions, fit
from .predict import PredictionRequest, predict, smooth_curve, spatial_surface
from .spatial import CovarianceKind, kernel_value

__all__ = [
    "Scenario",
    "SimulationReport",
    "true_surface",
    "generate_dataset",
    "run_replicate",
    "score_replicates",
    "run_study",
    "run_timing",
]

THREADS_ENV_VAR = "GEOADDITIVE_THREADS"

BETA0 = 3.0
BETA1 = -0.5


def true_surface(tag: str, w1, w2):
    """The fixed two-dimensional spatial test functions."""
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    if tag == "s1":
        return 0.5 - (w1**2 + w2**2) / 18.0
    if tag == "s2":
        return (w1**3 + w1 * w2 + w2**2) / 25.0
    if tag == "s3":
        return -((w1 - w2) ** 2) / 15.0 + np.sin(w1) * np.cos(w2)
    raise ConfigError(f"unknown surface tag {tag!r}")


@dataclass(frozen=True)
class Scenario:
    """One simulation configuration.

    ``surface`` is 's1', 's2', 's3' or 'grf'. The three analytic
    surfaces come with the covariate mean structure on coordinates
    uniform in (-3, 3); 'grf' is the constant-mean benchmark with a
    Gaussian random field truth on the unit square (sill ``grf_sill``,
    range ``grf_range``).
    """

    family: Family
    surface: str = "s1"
    kernel: CovarianceKind = CovarianceKind.EXPONENTIAL
    n: int = 300
    replicates: int = 100
    seed: int = 0
    sigma: float | None = None
    covariate_grid_size: int = 100
    spatial_grid_size: int = 20
    holdout: str = "grid"
    num_knots: int | None = None
    grf_sill: float = 0.5
    grf_range: float = 0.15
    grf_kernel: CovarianceKind | None = None
    fit_options: FitOptions = field(default_factory=FitOptions)

    def __post_init__(self):
        if self.surface not in ("s1", "s2", "s3", "grf"):
            raise ConfigError(f"unknown surface {self.surface!r}")
        if self.holdout not in ("grid", "insample"):
            raise ConfigError(f"holdout must be 'grid' or 'insample', got {self.holdout!r}")
        if self.n < 50:
            raise ConfigError(f"scenarios need n >= 50, got {self.n}")
        if self.replicates < 1:
            raise ConfigError("need at least one replicate")

    @property
    def has_covariates(self) -> bool:
        return self.surface != "grf"

    @property
    def noise_sd(self) -> float:
        if self.sigma is not None:
            return self.sigma
        return 0.25 if self.family.is_count else float(np.sqrt(0.10))

    @property
    def coordinate_domain(self) -> tuple[float, float]:
        return (0.0, 1.0) if self.surface == "grf" else (-3.0, 3.0)

    def spatial_grid(self) -> np.ndarray:
        """Regular interior grid over the coordinate domain (5% margin)."""
        lo, hi = self.coordinate_domain
        margin = 0.05 * (hi - lo)
        side = np.linspace(lo + margin, hi - margin, self.spatial_grid_size)
        g1, g2 = np.meshgrid(side, side, indexing="ij")
        return np.column_stack([g1.ravel(), g2.ravel()])

    def covariate_grid(self) -> np.ndarray:
        return np.linspace(0.05, 0.95, self.covariate_grid_size)

    def model_spec(self) -> ModelSpec:
        smooths = (SmoothTerm("x2"),) if self.has_covariates else ()
        linear = ("x1",) if self.has_covariates else ()
        return ModelSpec(
            response="y",
            family=self.family,
            linear=linear,
            smooths=smooths,
            spatial=SpatialConfig(kind=self.kernel, coords=("w1", "w2"),
                                  num_knots=self.num_knots, seed=0),
        )


def _replicate_rng(scenario: Scenario, b: int, stream: int = 0) -> np.random.Generator:
    key = np.random.SeedSequence([int(scenario.seed), int(b), int(stream)])
    return np.random.Generator(np.random.Philox(key))


def _prediction_seed(scenario: Scenario, b: int) -> int:
    key = np.random.SeedSequence([int(scenario.seed), int(b), 7])
    return int(key.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class ReplicateData:
    """One generated dataset plus the truths needed for scoring."""

    train: dict
    covariate_grid: np.ndarray
    f_true: np.ndarray | None
    spatial_grid: np.ndarray
    s_true: np.ndarray
    holdout: dict
    mu_true: np.ndarray
    y_holdout: np.ndarray


def _grf_field(scenario: Scenario, rng: np.random.Generator, points: np.ndarray) -> np.ndarray:
    """Draw one Gaussian random field realization at ``points`` by dense
    Cholesky of the kernel Gram matrix."""
    kind = scenario.grf_kernel or scenario.kernel
    rho = 1.0 / scenario.grf_range
    gram = scenario.grf_sill * kernel_value(kind, rho, cdist(points, points))
    gram[np.diag_indices_from(gram)] += 1e-10 * scenario.grf_sill
    chol = np.linalg.cholesky(gram)
    return chol @ rng.standard_normal(points.shape[0])


def _count_response(rng: np.random.Generator, structure: np.ndarray, sd: float) -> np.ndarray:
    """Counts with rate exp(structure + eps): the mean structure sits on
    the log scale and eps adds multiplicative excess variability."""
    eps = rng.normal(0.0, sd, size=structure.shape)
    return rng.poisson(np.exp(structure + eps)).astype(float)


def generate_dataset(scenario: Scenario, b: int) -> ReplicateData:
    """Generate replicate ``b``. Depends only on (scenario seed, b)."""
    rng = _replicate_rng(scenario, b)
    n = scenario.n
    lo, hi = scenario.coordinate_domain
    w = rng.uniform(lo, hi, size=(n, 2))
    grid = scenario.spatial_grid()

    if scenario.surface == "grf":
        stacked = np.vstack([w, grid])
        both = _grf_field(scenario, rng, stacked)
        s_train, s_grid = both[:n], both[n:]
    else:
        s_train = true_surface(scenario.surface, w[:, 0], w[:, 1])
        s_grid = true_surface(scenario.surface, grid[:, 0], grid[:, 1])

    train = {"w1": w[:, 0], "w2": w[:, 1]}
    mu_train = BETA0 + s_train
    x2_grid = scenario.covariate_grid()
    f_true = None
    if scenario.has_covariates:
        x1 = rng.uniform(0.0, 1.0, n)
        x2 = rng.uniform(0.0, 1.0, n)
        mu_train = mu_train + BETA1 * x1 + np.cos(2.0 * np.pi * x2)
        train.update(x1=x1, x2=x2)
        # Fitted smooths cannot extrapolate, so evaluation covariates
        # are clipped into the realized training range (which almost
        # always covers the interior grid anyway).
        x2_grid = np.clip(x2_grid, x2.min(), x2.max())
        f_true = np.cos(2.0 * np.pi * x2_grid)

    sd = scenario.noise_sd
    if scenario.family.is_count:
        train["y"] = _count_response(rng, mu_train, sd)
    else:
        train["y"] = mu_train + rng.normal(0.0, sd, n)

    if scenario.holdout == "insample":
        holdout = {k: v.copy() for k, v in train.items() if k != "y"}
        structure = mu_train.copy()
        y_holdout = train["y"].copy()
    else:
        holdout = {"w1": grid[:, 0], "w2": grid[:, 1]}
        structure = BETA0 + s_grid
        if scenario.has_covariates:
            x1h = rng.uniform(0.0, 1.0, grid.shape[0])
            x2h = np.clip(rng.uniform(0.0, 1.0, grid.shape[0]), x2.min(), x2.max())
            structure = structure + BETA1 * x1h + np.cos(2.0 * np.pi * x2h)
            holdout.update(x1=x1h, x2=x2h)
        if scenario.family.is_count:
            y_holdout = _count_response(rng, structure, sd)
        else:
            y_holdout = structure + rng.normal(0.0, sd, structure.shape)

    # The scored mean response lives on the response scale: the count
    # structure goes through the log link, the Gaussian one does not.
    mu_true = np.exp(structure) if scenario.family.is_count else structure

    return ReplicateData(
        train=train,
        covariate_grid=x2_grid,
        f_true=f_true,
        spatial_grid=grid,
        s_true=s_grid,
        holdout=holdout,
        mu_true=mu_true,
        y_holdout=y_holdout,
    )


@dataclass
class ReplicateOutcome:
    index: int
    success: bool
    error: str | None = None
    wall_time: float = np.nan
    f_true: np.ndarray | None = None
    f_hat: np.ndarray | None = None
    f_lo: np.ndarray | None = None
    f_hi: np.ndarray | None = None
    s_true: np.ndarray | None = None
    s_hat: np.ndarray | None = None
    s_lo: np.ndarray | None = None
    s_hi: np.ndarray | None = None
    mu_true: np.ndarray | None = None
    mu_hat: np.ndarray | None = None
    y_holdout: np.ndarray | None = None
    pi_lo: np.ndarray | None = None
    pi_hi: np.ndarray | None = None


def _centered(values: np.ndarray) -> tuple[np.ndarray, float]:
    shift = float(values.mean())
    return values - shift, shift


def run_replicate(scenario: Scenario, b: int) -> ReplicateOutcome:
    """Generate, fit and evaluate one replicate.

    Fit failures (non-convergence, numerical breakdown) are captured in
    the outcome rather than raised, so studies can drop and count them.
    """
    data = generate_dataset(scenario, b)
    spec = scenario.model_spec()
    started = time.perf_counter()
    try:
        model = fit(spec, data.train, scenario.fit_options)
    except (ConvergenceError, NumericalError) as exc:
        return ReplicateOutcome(index=b, success=False, error=str(exc),
                                wall_time=time.perf_counter() - started)
    wall = time.perf_counter() - started

    outcome = ReplicateOutcome(index=b, success=True, wall_time=wall)

    if scenario.has_covariates:
        curve = smooth_curve(model, "x2", data.covariate_grid)
        f_hat, shift = _centered(curve.values)
        outcome.f_hat = f_hat
        outcome.f_lo = curve.ci_lo - shift
        outcome.f_hi = curve.ci_hi - shift
        outcome.f_true = data.f_true - data.f_true.mean()

    s_hat_raw, _, s_lo, s_hi = spatial_surface(model, data.spatial_grid[:, 0],
                                               data.spatial_grid[:, 1])
    s_hat, shift = _centered(s_hat_raw)
    outcome.s_hat = s_hat
    outcome.s_lo = s_lo - shift
    outcome.s_hi = s_hi - shift
    outcome.s_true = data.s_true - data.s_true.mean()

    request = PredictionRequest(points=data.holdout, seed=_prediction_seed(scenario, b))
    result = predict(model, request)
    outcome.mu_hat = result.mean
    outcome.mu_true = data.mu_true
    outcome.y_holdout = data.y_holdout
    outcome.pi_lo = result.pi_lo
    outcome.pi_hi = result.pi_hi
    return outcome


@dataclass(frozen=True)
class SimulationReport:
    """Per-quantity scores over the successful replicates."""

    rows: tuple
    replicates_requested: int
    replicates_used: int
    replicates_failed: int
    excluded_points: dict
    timing: dict

    def row(self, quantity: str) -> dict:
        for r in self.rows:
            if r["quantity"] == quantity:
                return r
        raise KeyError(quantity)


def _pct_bias(truth: np.ndarray, estimate: np.ndarray) -> tuple[float, int]:
    """Mean absolute relative error in percent, excluding near-zero truths."""
    keep = np.abs(truth) >= 1e-8
    excluded = int(truth.size - keep.sum())
    if keep.sum() == 0:
        return np.nan, excluded
    rel = np.abs((truth[keep] - estimate[keep]) / truth[keep])
    return float(100.0 * rel.mean()), excluded


def _coverage(truth: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    return float(100.0 * np.mean((truth >= lo) & (truth <= hi)))


def score_replicates(scenario: Scenario, outcomes) -> SimulationReport:
    """Aggregate replicate outcomes into the reporting table."""
    outcomes = list(outcomes)
    good = [o for o in outcomes if o.success]
    failed = len(outcomes) - len(good)
    if not good:
        raise ConvergenceError(f"all {len(outcomes)} replicates failed")

    rows = []
    excluded = {}

    if scenario.has_covariates:
        f_true = np.concatenate([o.f_true for o in good])
        f_hat = np.concatenate([o.f_hat for o in good])
        f_lo = np.concatenate([o.f_lo for o in good])
        f_hi = np.concatenate([o.f_hi for o in good])
        pct, exc = _pct_bias(f_true, f_hat)
        excluded["f(x2)"] = exc
        rows.append({
            "quantity": "f(x2)",
            "bias": np.nan,
            "pct_bias": pct,
            "coverage_pct": _coverage(f_true, f_lo, f_hi),
        })

    s_true = np.concatenate([o.s_true for o in good])
    s_hat = np.concatenate([o.s_hat for o in good])
    s_lo = np.concatenate([o.s_lo for o in good])
    s_hi = np.concatenate([o.s_hi for o in good])
    pct, exc = _pct_bias(s_true, s_hat)
    excluded["s(w1,w2)"] = exc
    rows.append({
        "quantity": "s(w1,w2)",
        "bias": np.nan,
        "pct_bias": pct,
        "coverage_pct": _coverage(s_true, s_lo, s_hi),
    })

    mu_true = np.concatenate([o.mu_true for o in good])
    mu_hat = np.concatenate([o.mu_hat for o in good])
    pct, exc = _pct_bias(mu_true, mu_hat)
    excluded["mu"] = exc
    rows.append({
        "quantity": "mu",
        "bias": float(np.mean(mu_true - mu_hat)),
        "pct_bias": pct,
        "coverage_pct": np.nan,
    })

    y_true = np.concatenate([o.y_holdout for o in good])
    pi_lo = np.concatenate([o.pi_lo for o in good])
    pi_hi = np.concatenate([o.pi_hi for o in good])
    rows.append({
        "quantity": "y",
        "bias": np.nan,
        "pct_bias": np.nan,
        "coverage_pct": _coverage(y_true, pi_lo, pi_hi),
    })

    times = np.array([o.wall_time for o in good])
    timing = {
        "min": float(times.min()),
        "mean": float(times.mean()),
        "median": float(np.median(times)),
        "max": float(times.max()),
    }
    return SimulationReport(
        rows=tuple(rows),
        replicates_requested=len(outcomes),
        replicates_used=len(good),
        replicates_failed=failed,
        excluded_points=excluded,
        timing=timing,
    )


def resolve_threads(threads: int | None = None) -> int:
    """Requested thread count, the environment default, or the CPU count."""
    if threads is not None and threads >= 1:
        return int(threads)
    env = os.environ.get(THREADS_ENV_VAR)
    if env:
        try:
            value = int(env)
            if value >= 1:
                return value
        except ValueError:
            pass
    return os.cpu_count() or 1


def _worker(args) -> ReplicateOutcome:
    scenario, b = args
    return run_replicate(scenario, b)


def run_study(scenario: Scenario, threads: int | None = None) -> SimulationReport:
    """Run all replicates (in a worker pool when threads > 1) and score."""
    threads = resolve_threads(threads)
    indices = range(scenario.replicates)
    if threads == 1 or scenario.replicates == 1:
        outcomes = [run_replicate(scenario, b) for b in indices]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_worker, [(scenario, b) for b in indices]))
    return score_replicates(scenario, outcomes)


def run_timing(scenario: Scenario, evaluations: int = 10) -> dict:
    """Wall-time stats (seconds) over repeated fits of one dataset."""
    data = generate_dataset(scenario, 0)
    spec = scenario.model_spec()
    times = []
    for _ in range(evaluations):
        started = time.perf_counter()
        fit(spec, data.train, scenario.fit_options)
        times.append(time.perf_counter() - started)
    times = np.array(times)
    return {
        "min": float(times.min()),
        "mean": float(times.mean()),
        "median": float(np.median(times)),
        "max": float(times.max()),
        "evaluations": int(evaluations),
    }
