import numpy as np
import pytest

from geoadditive.design import ModelSpec, SmoothTerm, SpatialConfig
from geoadditive.families import Family
from geoadditive.spatial import CovarianceKind
from geoadditive.simulate import BETA0, BETA1, true_surface


def gaussian_table(n=120, seed=0, noise_sd=None, surface="s1"):
    """Small synthetic dataset with the standard mean structure."""
    rng = np.random.default_rng(seed)
    data = {
        "x1": rng.uniform(0, 1, n),
        "x2": rng.uniform(0, 1, n),
        "w1": rng.uniform(-3, 3, n),
        "w2": rng.uniform(-3, 3, n),
    }
    structure = (
        BETA0
        + BETA1 * data["x1"]
        + np.cos(2 * np.pi * data["x2"])
        + true_surface(surface, data["w1"], data["w2"])
    )
    sd = np.sqrt(0.10) if noise_sd is None else noise_sd
    data["y"] = structure + rng.normal(0, sd, n)
    return data, structure


def count_table(n=150, seed=0, eps_sd=0.25, surface="s1"):
    rng = np.random.default_rng(seed)
    data = {
        "x1": rng.uniform(0, 1, n),
        "x2": rng.uniform(0, 1, n),
        "w1": rng.uniform(-3, 3, n),
        "w2": rng.uniform(-3, 3, n),
    }
    structure = (
        BETA0
        + BETA1 * data["x1"]
        + np.cos(2 * np.pi * data["x2"])
        + true_surface(surface, data["w1"], data["w2"])
    )
    rate = np.exp(structure + rng.normal(0, eps_sd, n))
    data["y"] = rng.poisson(rate).astype(float)
    return data, structure


def standard_spec(family=Family.GAUSSIAN, num_knots=20, kernel=CovarianceKind.EXPONENTIAL,
                  num_basis=12):
    return ModelSpec(
        response="y",
        family=family,
        linear=("x1",),
        smooths=(SmoothTerm("x2", num_basis=num_basis),),
        spatial=SpatialConfig(kind=kernel, num_knots=num_knots, seed=1),
    )


@pytest.fixture
def small_gaussian_model():
    import geoadditive as ga

    data, _ = gaussian_table(n=120, seed=3)
    return ga.fit(standard_spec(), data), data
