"""Bayesian geoadditive models with low-rank spatial smoothing.

Additive regression with linear terms, penalized B-spline smooths and a
low-rank kriging spatial component, for Gaussian, Poisson and negative
binomial responses. Coefficients get a Laplace (Gaussian-case: exact)
posterior approximation; penalty, range and dispersion parameters are
chosen by maximum a posteriori optimization.
"""

__version__ = "0.1.0"

from .design import ModelSpec, PriorConfig, SmoothTerm, SpatialConfig, build_design
from .diagnostics import bic, effective_dof, smooth_test
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    DomainError,
    GeoadditiveError,
    NumericalError,
)
from .families import Family
from .inference import FitOptions, FittedModel, fit
from .predict import (
    PredictionRequest,
    PredictionResult,
    predict,
    predict_interval,
    predict_mean_ci,
    smooth_curve,
    spatial_surface,
)
from .spatial import CovarianceKind, kernel_value, select_knots, spatial_basis
from .splines import BSplineBasis, bspline_basis, center_columns, difference_penalty

__all__ = [
    "__version__",
    "ModelSpec",
    "PriorConfig",
    "SmoothTerm",
    "SpatialConfig",
    "build_design",
    "bic",
    "effective_dof",
    "smooth_test",
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "DomainError",
    "GeoadditiveError",
    "NumericalError",
    "Family",
    "FitOptions",
    "FittedModel",
    "fit",
    "PredictionRequest",
    "PredictionResult",
    "predict",
    "predict_interval",
    "predict_mean_ci",
    "smooth_curve",
    "spatial_surface",
    "CovarianceKind",
    "kernel_value",
    "select_knots",
    "spatial_basis",
    "BSplineBasis",
    "bspline_basis",
    "center_columns",
    "difference_penalty",
]
