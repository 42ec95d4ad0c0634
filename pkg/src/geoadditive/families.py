"""Response families: log-likelihoods and per-observation derivatives.

Poisson and negative binomial use a log link with an optional
multiplicative offset, mu = exp(eta + log_offset). Gaussian uses the
identity link with precision tau (the conjugate closed form lives in
:mod:`geoadditive.inference`; the Gaussian entries here exist for the
generic Newton machinery and for fully normalized likelihood values).

The negative binomial is parametrized by an overdispersion parameter
phi > 0 with variance mu + mu^2 / phi, so phi -> infinity recovers the
Poisson model.
"""

import enum
import warnings

import numpy as np
from scipy.special import gammaln

from .errors import ConfigError, DataError, DomainError

__all__ = ["Family", "log_likelihood", "score_and_weight", "validate_response"]

# Linear predictors are clamped at +/- this bound before exponentiation.
ETA_CLAMP = 30.0


class Family(enum.Enum):
    GAUSSIAN = "gaussian"
    POISSON = "poisson"
    NEG_BINOMIAL = "negbinomial"

    @classmethod
    def parse(cls, name: str) -> "Family":
        key = str(name).strip().lower().replace("_", "").replace("-", "")
        aliases = {
            "gaussian": cls.GAUSSIAN,
            "normal": cls.GAUSSIAN,
            "poisson": cls.POISSON,
            "negbinomial": cls.NEG_BINOMIAL,
            "negativebinomial": cls.NEG_BINOMIAL,
            "nb": cls.NEG_BINOMIAL,
        }
        if key not in aliases:
            raise ConfigError(f"unknown family {name!r}")
        return aliases[key]

    @property
    def is_count(self) -> bool:
        return self in (Family.POISSON, Family.NEG_BINOMIAL)


def validate_response(family: Family, y) -> np.ndarray:
    """Check that ``y`` is usable for ``family`` and return it as floats."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DataError("response contains non-finite values")
    if family.is_count:
        if np.any(y < 0):
            raise DataError("count responses must be nonnegative")
        if np.any(y != np.round(y)):
            raise DataError("count responses must be integers")
    return y


def clamped_exponent(eta, log_offset=None):
    """Linear predictor plus log-offset, clipped to +/- ETA_CLAMP.

    Returns the clipped exponent and the number of clamped entries.
    """
    exponent = np.asarray(eta, dtype=float)
    if log_offset is not None:
        exponent = exponent + log_offset
    n_clamped = int(np.count_nonzero(np.abs(exponent) > ETA_CLAMP))
    if n_clamped:
        warnings.warn(
            f"linear predictor values clamped at +/-{ETA_CLAMP:g} before exponentiation",
            RuntimeWarning,
            stacklevel=3,
        )
        exponent = np.clip(exponent, -ETA_CLAMP, ETA_CLAMP)
    return exponent, n_clamped


def _mu(eta, log_offset):
    exponent, n_clamped = clamped_exponent(eta, log_offset)
    return np.exp(exponent), n_clamped


def log_likelihood(family: Family, y, eta, log_offset=None, dispersion=None) -> float:
    """Fully normalized log-likelihood at linear predictor ``eta``.

    ``dispersion`` is the overdispersion phi for the negative binomial
    and the precision tau for the Gaussian; the Poisson ignores it.
    Normalizing constants are retained so values are comparable across
    families (this is what model-selection criteria rely on).
    """
    y = validate_response(family, y)
    eta = np.asarray(eta, dtype=float)
    if family is Family.POISSON:
        mu, _ = _mu(eta, log_offset)
        return float(np.sum(y * np.log(mu) - mu - gammaln(y + 1.0)))
    if family is Family.NEG_BINOMIAL:
        phi = _check_phi(dispersion)
        mu, _ = _mu(eta, log_offset)
        return float(
            np.sum(
                gammaln(y + phi)
                - gammaln(phi)
                - gammaln(y + 1.0)
                + phi * np.log(phi)
                + y * np.log(mu)
                - (phi + y) * np.log(phi + mu)
            )
        )
    if family is Family.GAUSSIAN:
        tau = _check_tau(dispersion)
        mean = eta if log_offset is None else eta + log_offset
        resid = y - mean
        n = y.size
        return float(0.5 * n * (np.log(tau) - np.log(2.0 * np.pi)) - 0.5 * tau * np.sum(resid**2))
    raise ConfigError(f"unhandled family {family!r}")


def score_and_weight(family: Family, y, eta, log_offset=None, dispersion=None):
    """Per-observation score and curvature of the log-likelihood in eta.

    Returns ``(g, w)`` with ``g_i = d l_i / d eta_i`` and
    ``w_i = -d^2 l_i / d eta_i^2`` (observed information).
    """
    y = validate_response(family, y)
    eta = np.asarray(eta, dtype=float)
    if family is Family.POISSON:
        mu, _ = _mu(eta, log_offset)
        return y - mu, mu
    if family is Family.NEG_BINOMIAL:
        phi = _check_phi(dispersion)
        mu, _ = _mu(eta, log_offset)
        g = phi * (y - mu) / (phi + mu)
        w = phi * mu * (phi + y) / (phi + mu) ** 2
        return g, w
    if family is Family.GAUSSIAN:
        tau = _check_tau(dispersion)
        mean = eta if log_offset is None else eta + log_offset
        return tau * (y - mean), np.full(y.shape, tau)
    raise ConfigError(f"unhandled family {family!r}")


def sample_response(family: Family, rng: np.random.Generator, mu, dispersion=None):
    """Draw one response per entry of ``mu`` from the fitted family.

    For the Gaussian, ``mu`` is the latent mean and ``dispersion`` the
    precision tau. For the negative binomial, draws use the (n, p)
    parametrization equivalent to mean mu with variance mu + mu^2/phi.
    """
    mu = np.asarray(mu, dtype=float)
    if family is Family.POISSON:
        return rng.poisson(mu)
    if family is Family.NEG_BINOMIAL:
        phi = _check_phi(dispersion)
        return rng.negative_binomial(phi, phi / (phi + mu))
    if family is Family.GAUSSIAN:
        tau = _check_tau(dispersion)
        return mu + rng.normal(0.0, 1.0 / np.sqrt(tau), size=mu.shape)
    raise ConfigError(f"unhandled family {family!r}")


def _check_phi(phi) -> float:
    if phi is None or not np.isfinite(phi) or phi <= 0:
        raise DomainError(f"negative binomial overdispersion phi must be positive, got {phi}")
    return float(phi)


def _check_tau(tau) -> float:
    if tau is None or not np.isfinite(tau) or tau <= 0:
        raise DomainError(f"Gaussian precision tau must be positive, got {tau}")
    return float(tau)
