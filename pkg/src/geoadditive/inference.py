"""Posterior-mode fitting: Laplace approximation and MAP hyperparameters.

For count responses the conditional posterior of the coefficient vector
is maximized by a damped Newton iteration (analytic gradient and
Hessian), and the Laplace approximation replaces the conditional
posterior with a Gaussian centered at the mode. For Gaussian responses
the conditional posterior is exactly Gaussian and solved in closed
form, with the noise precision integrated out analytically into a
gamma posterior.

The penalty parameters, the kernel decay and (for the negative
binomial) the overdispersion are estimated by maximizing their joint
log-posterior on the log scale with a bounded Nelder-Mead search; each
evaluation re-solves the inner problem, warm-started at the previous
mode.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky
from scipy.optimize import Bounds, minimize

from . import diagnostics
from .design import DesignBuilder, DesignSystem, ModelSpec, precision
from .errors import ConfigError, ConvergenceError, NumericalError
from .families import Family, clamped_exponent, log_likelihood, score_and_weight, validate_response

__all__ = [
    "FitOptions",
    "HyperState",
    "LaplaceResult",
    "GaussianConjugate",
    "FittedModel",
    "newton_mode",
    "gaussian_conjugate",
    "hyper_log_posterior",
    "fit",
]


@dataclass(frozen=True)
class FitOptions:
    """Tolerances and iteration caps for the nested optimization."""

    newton_max_iter: int = 100
    newton_grad_tol: float = 1e-6
    newton_obj_tol: float = 1e-8
    max_step_halvings: int = 30
    # The outer search stops on simplex size alone, so the function-value
    # tolerance is disabled by default.
    xatol: float = 1e-4
    fatol: float = np.inf
    max_evaluations: int = 500
    v_bounds: tuple[float, float] = (-12.0, 12.0)
    v_phi_bounds: tuple[float, float] = (-7.0, 12.0)
    # rho bounds are set so rho times the maximum pairwise distance
    # spans this interval.
    rho_distance_span: tuple[float, float] = (0.1, 100.0)
    simplex_step: float = 1.0


@dataclass(frozen=True)
class HyperState:
    """Log-scale hyperparameters: penalties, kernel decay, dispersion."""

    v: np.ndarray
    v_rho: float | None = None
    v_phi: float | None = None

    @property
    def lambdas(self) -> np.ndarray:
        return np.exp(self.v)

    @property
    def rho(self) -> float | None:
        return None if self.v_rho is None else float(math.exp(self.v_rho))

    @property
    def phi(self) -> float | None:
        return None if self.v_phi is None else float(math.exp(self.v_phi))

    def to_vector(self) -> np.ndarray:
        parts = [np.asarray(self.v, dtype=float)]
        if self.v_rho is not None:
            parts.append([self.v_rho])
        if self.v_phi is not None:
            parts.append([self.v_phi])
        return np.concatenate(parts) if parts else np.empty(0)

    @classmethod
    def from_vector(cls, x, n_penalties: int, has_rho: bool, has_phi: bool) -> "HyperState":
        x = np.asarray(x, dtype=float)
        v = x[:n_penalties].copy()
        pos = n_penalties
        v_rho = float(x[pos]) if has_rho else None
        pos += int(has_rho)
        v_phi = float(x[pos]) if has_phi else None
        return cls(v=v, v_rho=v_rho, v_phi=v_phi)


@dataclass
class LaplaceResult:
    """Gaussian approximation of the conditional coefficient posterior."""

    xi_hat: np.ndarray
    Sigma_hat: np.ndarray
    iterations: int
    converged: bool
    grad_norm: float
    objective: float
    logdet_hessian: float
    n_clamped: int = 0


@dataclass
class GaussianConjugate:
    """Exact Gaussian-case conditional posterior pieces.

    ``sigma_unit`` is the noise-precision-free covariance factor
    (C'C + Q)^-1; the actual coefficient covariance is sigma_unit / tau.
    The noise precision posterior is Gamma(tau_shape, tau_rate).
    """

    xi_hat: np.ndarray
    chol_lower: np.ndarray
    logdet_ctc_q: float
    rss: float
    quad_form: float
    tau_shape: float
    tau_rate: float

    def sigma_unit(self) -> np.ndarray:
        return cho_solve((self.chol_lower, True), np.eye(self.chol_lower.shape[0]))

    @property
    def tau_mean(self) -> float:
        return self.tau_shape / self.tau_rate


def _count_clamped(eta, log_offset) -> int:
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, n = clamped_exponent(eta, log_offset)
    return n


def newton_mode(design: DesignSystem, family: Family, y, log_offset, lam,
                phi=None, init=None, options: FitOptions | None = None) -> LaplaceResult:
    """Maximize ``loglik(xi) - 0.5 xi' Q xi`` by damped Newton steps.

    The step direction solves ``(C' W C + Q) d = grad`` with the
    observed-information weights of the family; step halving enforces a
    monotone objective. Convergence requires either a relative
    objective change below ``newton_obj_tol`` or a gradient max-norm
    below ``newton_grad_tol``.

    For a Gaussian family ``phi`` is the (fixed) noise precision tau
    and the prior precision is scaled by it, which makes the iteration
    converge in a single step to the conjugate solution.
    """
    options = options or FitOptions()
    c = design.C
    y = validate_response(family, y)
    q = precision(design, lam)
    if family is Family.GAUSSIAN:
        if phi is None or phi <= 0:
            raise ConfigError("Gaussian newton_mode needs a positive precision in phi")
        q = phi * q
    xi = np.zeros(c.shape[1]) if init is None else np.asarray(init, dtype=float).copy()

    def objective(xi_vec, eta):
        return log_likelihood(family, y, eta, log_offset, phi) - 0.5 * float(xi_vec @ q @ xi_vec)

    eta = c @ xi
    obj = objective(xi, eta)
    n_clamped = _count_clamped(eta, log_offset)
    history = []
    converged = False
    grad_norm = np.inf
    iterations = 0
    for iterations in range(1, options.newton_max_iter + 1):
        g, w = score_and_weight(family, y, eta, log_offset, phi)
        grad = c.T @ g - q @ xi
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm < options.newton_grad_tol:
            converged = True
            iterations -= 1
            break
        hess = c.T @ (w[:, None] * c) + q
        try:
            chol = cho_factor(hess, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                "Newton Hessian is not positive definite; strengthen the priors "
                "or increase the spatial jitter"
            ) from exc
        direction = cho_solve(chol, grad)

        step = 1.0
        new_obj = -np.inf
        for _ in range(options.max_step_halvings + 1):
            xi_new = xi + step * direction
            eta_new = c @ xi_new
            new_obj = objective(xi_new, eta_new)
            if new_obj >= obj:
                break
            step *= 0.5
        if new_obj < obj:
            # No ascent step found; treat as converged only if the
            # gradient is already small.
            if grad_norm < 10 * options.newton_grad_tol:
                converged = True
                break
            raise ConvergenceError(
                "Newton line search failed to improve the objective",
                trace={"history": history, "grad_norm": grad_norm},
            )
        xi, eta = xi_new, eta_new
        n_clamped += _count_clamped(eta, log_offset)
        rel_change = abs(new_obj - obj) / (abs(obj) + 1e-10)
        history.append({"iteration": iterations, "objective": new_obj, "step": step})
        obj = new_obj
        if rel_change < options.newton_obj_tol:
            converged = True
            break
        if grad_norm < options.newton_grad_tol:
            converged = True
            break

    if not converged:
        raise ConvergenceError(
            f"Newton did not converge in {options.newton_max_iter} iterations "
            f"(gradient max-norm {grad_norm:.3g})",
            trace={"history": history, "grad_norm": grad_norm},
        )

    g, w = score_and_weight(family, y, eta, log_offset, phi)
    grad = c.T @ g - q @ xi
    hess = c.T @ (w[:, None] * c) + q
    try:
        chol_lower = cholesky(hess, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("Hessian factorization failed at the mode") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol_lower))))
    sigma = cho_solve((chol_lower, True), np.eye(hess.shape[0]))
    sigma = 0.5 * (sigma + sigma.T)
    return LaplaceResult(
        xi_hat=xi,
        Sigma_hat=sigma,
        iterations=iterations,
        converged=True,
        grad_norm=float(np.max(np.abs(grad))),
        objective=obj,
        logdet_hessian=logdet,
        n_clamped=n_clamped,
    )


def gaussian_conjugate(design: DesignSystem, y, lam) -> GaussianConjugate:
    """Exact conditional posterior for a Gaussian response.

    Solves ``(C'C + Q) xi = C'y`` and assembles the gamma posterior of
    the noise precision, Gamma(n/2, 0.5 (rss + xi' Q xi)).
    """
    c = design.C
    y = np.asarray(y, dtype=float)
    q = precision(design, lam)
    a = c.T @ c + q
    try:
        chol_lower = cholesky(a, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            "C'C + Q is not positive definite; check the prior and penalty setup"
        ) from exc
    xi = cho_solve((chol_lower, True), c.T @ y)
    resid = y - c @ xi
    rss = float(resid @ resid)
    quad = float(xi @ q @ xi)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol_lower))))
    return GaussianConjugate(
        xi_hat=xi,
        chol_lower=chol_lower,
        logdet_ctc_q=logdet,
        rss=rss,
        quad_form=quad,
        tau_shape=0.5 * y.size,
        tau_rate=0.5 * (rss + quad),
    )


def _penalty_prior_terms(design: DesignSystem, v: np.ndarray) -> float:
    """Log-prior contribution of the log penalties after integrating
    out their gamma hyperlevels (plus the Jacobian of the log map)."""
    priors = design.spec.priors
    total = 0.0
    for j, (_, blk, _, _) in enumerate(design.penalty_blocks()):
        size = blk.stop - blk.start
        total += 0.5 * (size + priors.nu) * v[j]
        total -= (0.5 * priors.nu + priors.a_delta) * np.log(
            0.5 * priors.nu * np.exp(v[j]) + priors.b_delta
        )
    return float(total)


def hyper_log_posterior(state: HyperState, builder: DesignBuilder,
                        warm_start=None, options: FitOptions | None = None):
    """Joint log-posterior of the log hyperparameters, up to a constant.

    Returns ``(value, inner)`` where ``inner`` is the conditional
    posterior solution at this state (a :class:`GaussianConjugate` for
    Gaussian responses, a :class:`LaplaceResult` otherwise). A failed
    inner solve yields ``(-inf, None)`` so the outer optimizer treats
    the state as rejected.
    """
    options = options or FitOptions()
    spec = builder.spec
    try:
        design = builder.build(state.rho)
    except NumericalError:
        return -np.inf, None
    lam = state.lambdas
    value = _penalty_prior_terms(design, state.v)
    if spec.spatial is not None:
        value += 0.5 * design.spatial_basis.omega_logdet()

    if spec.family is Family.GAUSSIAN:
        gc = gaussian_conjugate(design, builder.y, lam)
        value += -0.5 * builder.n * np.log(gc.rss + gc.quad_form)
        value += -0.5 * gc.logdet_ctc_q
        return float(value), gc

    try:
        lap = newton_mode(
            design, spec.family, builder.y, builder.log_offset, lam,
            phi=state.phi, init=warm_start, options=options,
        )
    except (ConvergenceError, NumericalError):
        return -np.inf, None
    q = precision(design, lam)
    loglik = log_likelihood(spec.family, builder.y, design.C @ lap.xi_hat,
                            builder.log_offset, state.phi)
    value += loglik - 0.5 * float(lap.xi_hat @ q @ lap.xi_hat)
    value += -0.5 * lap.logdet_hessian
    return float(value), lap


def _phi_init_moments(y, log_offset) -> float:
    """Method-of-moments overdispersion start from a null-model Pearson
    statistic, floored at 0.1."""
    y = np.asarray(y, dtype=float)
    if log_offset is None:
        mu = np.full(y.shape, max(y.mean(), 1e-8))
    else:
        n_i = np.exp(log_offset)
        mu = max(y.sum() / n_i.sum(), 1e-8) * n_i
    dof = max(y.size - 1, 1)
    pearson = float(np.sum((y - mu) ** 2 / mu) / dof)
    if pearson <= 1.0 + 1e-8:
        return 1e4
    return max(float(mu.mean()) / (pearson - 1.0), 0.1)


@dataclass
class FittedModel:
    """Everything produced by a fit: mode, covariance, hyperparameters,
    per-term complexity, model criterion and the optimization trace.

    The coefficient covariance is carried as its lower Cholesky factor;
    predictions route every quadratic form through this factor so that
    a saved and reloaded model reproduces them bit for bit.
    """

    spec: ModelSpec
    design: DesignSystem
    xi_hat: np.ndarray
    sigma_chol: np.ndarray
    hyper: HyperState
    lambdas: np.ndarray
    rho: float | None
    phi: float | None
    tau_shape: float | None
    tau_rate: float | None
    tau_hat: float | None
    laplace: dict
    ed_total: float = 0.0
    ed_per_term: dict = field(default_factory=dict)
    bic: float = np.nan
    trace: dict = field(default_factory=dict)
    y: np.ndarray | None = None
    log_offset: np.ndarray | None = None

    @property
    def family(self) -> Family:
        return self.spec.family

    @property
    def Sigma_hat(self) -> np.ndarray:
        return self.sigma_chol @ self.sigma_chol.T

    def linear_predictor(self) -> np.ndarray:
        """Fitted eta at the training rows."""
        return self.design.C @ self.xi_hat

    def dispersion(self) -> float | None:
        """Family dispersion used for predictive sampling."""
        if self.family is Family.GAUSSIAN:
            return self.tau_hat
        if self.family is Family.NEG_BINOMIAL:
            return self.phi
        return None


def _state_bounds(builder: DesignBuilder, options: FitOptions):
    spec = builder.spec
    n_pen = spec.num_penalties
    has_rho = spec.spatial is not None
    has_phi = spec.family is Family.NEG_BINOMIAL
    lo = [options.v_bounds[0]] * n_pen
    hi = [options.v_bounds[1]] * n_pen
    if has_rho:
        rho_lo = options.rho_distance_span[0] / builder.max_distance
        rho_hi = options.rho_distance_span[1] / builder.max_distance
        lo.append(np.log(rho_lo))
        hi.append(np.log(rho_hi))
    if has_phi:
        lo.append(options.v_phi_bounds[0])
        hi.append(options.v_phi_bounds[1])
    return np.array(lo), np.array(hi), n_pen, has_rho, has_phi


def _initial_state(builder: DesignBuilder, options: FitOptions,
                   lo: np.ndarray, hi: np.ndarray,
                   n_pen: int, has_rho: bool, has_phi: bool) -> np.ndarray:
    x0 = np.zeros(n_pen)
    parts = [x0]
    if has_rho:
        rho0 = 3.0 / builder.median_distance
        pos = n_pen
        parts.append([np.clip(np.log(rho0), lo[pos], hi[pos])])
    if has_phi:
        pos = n_pen + int(has_rho)
        phi0 = _phi_init_moments(builder.y, builder.log_offset)
        parts.append([np.clip(np.log(phi0), lo[pos], hi[pos])])
    return np.concatenate(parts) if parts else np.empty(0)


def _initial_simplex(x0: np.ndarray, lo: np.ndarray, hi: np.ndarray, step: float) -> np.ndarray:
    """Simplex with one vertex per coordinate, stepped inward at bounds."""
    d = x0.size
    simplex = np.tile(x0, (d + 1, 1))
    for i in range(d):
        trial = min(x0[i] + step, hi[i])
        if trial <= x0[i] + 1e-12:
            trial = max(x0[i] - step, lo[i])
        simplex[i + 1, i] = trial
    return simplex


def fit(spec: ModelSpec, data, options: FitOptions | None = None) -> FittedModel:
    """Fit the model: MAP hyperparameters, then the final Laplace pieces.

    Raises :class:`ConvergenceError` (with the best state seen so far
    attached) if the outer search exhausts its evaluation budget, and
    :class:`DataError` for unusable inputs.
    """
    options = options or FitOptions()
    builder = DesignBuilder(spec, data)
    validate_response(spec.family, builder.y)
    lo, hi, n_pen, has_rho, has_phi = _state_bounds(builder, options)
    x0 = _initial_state(builder, options, lo, hi, n_pen, has_rho, has_phi)

    evaluations = []
    best = {"value": -np.inf, "state": None, "inner": None}
    warm = {"xi": None}

    def evaluate(x):
        state = HyperState.from_vector(x, n_pen, has_rho, has_phi)
        value, inner = hyper_log_posterior(state, builder, warm_start=warm["xi"],
                                           options=options)
        record = {
            "index": len(evaluations),
            "state": [float(t) for t in x],
            "value": float(value),
        }
        if inner is not None and isinstance(inner, LaplaceResult):
            warm["xi"] = inner.xi_hat
            record["inner_iterations"] = inner.iterations
            record["clamped"] = inner.n_clamped
        evaluations.append(record)
        if value > best["value"]:
            best.update(value=value, state=state, inner=inner)
        return -value

    if x0.size == 0:
        state = HyperState(v=np.empty(0))
        value, inner = hyper_log_posterior(state, builder, options=options)
        if inner is None:
            raise ConvergenceError("inner solve failed for the penalty-free model")
        best.update(value=value, state=state, inner=inner)
        evaluations.append({"index": 0, "state": [], "value": float(value)})
        message = "nothing to optimize: model has no hyperparameters"
    else:
        result = minimize(
            evaluate,
            x0,
            method="Nelder-Mead",
            bounds=Bounds(lo, hi),
            options={
                "xatol": options.xatol,
                "fatol": options.fatol,
                "maxfev": options.max_evaluations,
                "initial_simplex": _initial_simplex(x0, lo, hi, options.simplex_step),
            },
        )
        message = str(result.message)
        if best["inner"] is None:
            raise ConvergenceError(
                "every hyperparameter evaluation failed", trace={"evaluations": evaluations}
            )
        if not result.success:
            raise ConvergenceError(
                f"hyperparameter search did not converge: {message}",
                trace={"evaluations": evaluations},
                best=best["state"],
            )

    state = best["state"]
    design = builder.build(state.rho)
    lam = state.lambdas

    if spec.family is Family.GAUSSIAN:
        gc = best["inner"]
        tau_hat = gc.tau_mean
        sigma = gc.sigma_unit() / tau_hat
        sigma = 0.5 * (sigma + sigma.T)
        model = FittedModel(
            spec=spec,
            design=design,
            xi_hat=gc.xi_hat,
            sigma_chol=np.linalg.cholesky(sigma),
            hyper=state,
            lambdas=lam,
            rho=state.rho,
            phi=None,
            tau_shape=gc.tau_shape,
            tau_rate=gc.tau_rate,
            tau_hat=tau_hat,
            laplace={"iterations": 0, "converged": True, "grad_norm": 0.0},
            y=builder.y,
            log_offset=builder.log_offset,
        )
    else:
        lap = best["inner"]
        model = FittedModel(
            spec=spec,
            design=design,
            xi_hat=lap.xi_hat,
            sigma_chol=np.linalg.cholesky(lap.Sigma_hat),
            hyper=state,
            lambdas=lam,
            rho=state.rho,
            phi=state.phi,
            tau_shape=None,
            tau_rate=None,
            tau_hat=None,
            laplace={
                "iterations": lap.iterations,
                "converged": lap.converged,
                "grad_norm": lap.grad_norm,
            },
            y=builder.y,
            log_offset=builder.log_offset,
        )

    total_ed, per_term = diagnostics.effective_dof(model)
    model.ed_total = total_ed
    model.ed_per_term = per_term
    model.bic = diagnostics.bic(model)
    model.trace = {
        "evaluations": evaluations,
        "n_evaluations": len(evaluations),
        "message": message,
        "clamp_events": int(sum(e.get("clamped", 0) for e in evaluations)),
        "knot_criterion": None if builder.knots is None else builder.knots.criterion_value,
    }
    return model
