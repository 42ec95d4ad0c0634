import numpy as np
import pytest
from scipy.spatial.distance import cdist
from scipy.stats import norm

import geoadditive as ga
from conftest import count_table, gaussian_table, standard_spec
from geoadditive.errors import ConfigError, DomainError
from geoadditive.families import Family
from geoadditive.predict import (
    PredictionRequest,
    predict,
    predict_interval,
    predict_mean_ci,
    predictor_matrix,
    predictor_row,
    smooth_curve,
)
from geoadditive.spatial import kernel_value
from geoadditive.splines import bspline_basis


@pytest.fixture(scope="module")
def poisson_model():
    data, _ = count_table(n=150, seed=20)
    model = ga.fit(standard_spec(Family.POISSON), data)
    return model, data


class TestPredictorRow:
    def test_training_point_reproduces_fitted_eta(self, small_gaussian_model):
        model, data = small_gaussian_model
        eta_fit = model.linear_predictor()
        for i in (0, 7, 53):
            point = {name: data[name][i] for name in ("x1", "x2", "w1", "w2")}
            row = predictor_row(model, point)
            np.testing.assert_allclose(row @ model.xi_hat, eta_fit[i], atol=1e-10)

    def test_point_at_knot_hits_centering_shifted_unit(self, small_gaussian_model):
        model, _ = small_gaussian_model
        knots = model.design.knots.knots
        point = {"x1": 0.5, "x2": 0.5, "w1": knots[3, 0], "w2": knots[3, 1]}
        row = predictor_row(model, point)
        spatial = row[model.design.layout["spatial"]]
        means = model.design.centering["spatial"].column_means
        np.testing.assert_allclose(spatial[3], 1.0 - means[3], atol=1e-12)

    def test_matches_brute_force_assembly(self, small_gaussian_model):
        model, _ = small_gaussian_model
        point = {"x1": 0.31, "x2": 0.62, "w1": -1.2, "w2": 0.4}
        row = predictor_row(model, point)

        design = model.design
        expected = [1.0, point["x1"], point["w1"], point["w2"]]
        basis = design.bases["x2"]
        b = bspline_basis(np.array([point["x2"]]), basis)[0]
        expected.extend(b - design.centering["x2"].column_means)
        d = cdist(np.array([[point["w1"], point["w2"]]]), design.knots.knots)[0]
        z = kernel_value(design.spatial_basis.kind, design.rho, d)
        expected.extend(z - design.centering["spatial"].column_means)
        np.testing.assert_allclose(row, expected, rtol=1e-12)

    def test_out_of_domain_covariate(self, small_gaussian_model):
        model, _ = small_gaussian_model
        with pytest.raises(DomainError):
            predictor_row(model, {"x1": 0.5, "x2": 5.0, "w1": 0.0, "w2": 0.0})


class TestMeanCI:
    def test_standard_normal_quantile(self):
        np.testing.assert_allclose(norm.ppf(0.975), 1.959963984540054, rtol=1e-12)

    def test_degenerate_interval_at_zero_variance(self, small_gaussian_model):
        model, data = small_gaussian_model
        frozen = ga.FittedModel(**{**model.__dict__})
        frozen.sigma_chol = np.zeros_like(model.sigma_chol)
        request = PredictionRequest(points={k: data[k][:3] for k in ("x1", "x2", "w1", "w2")})
        mean, lo, hi, _, sd = predict_mean_ci(frozen, request)
        np.testing.assert_array_equal(sd, 0.0)
        np.testing.assert_array_equal(lo, mean)
        np.testing.assert_array_equal(hi, mean)

    def test_offset_multiplicativity(self, poisson_model):
        model, data = poisson_model
        points = {k: data[k][:4] for k in ("x1", "x2", "w1", "w2")}
        base = predict_mean_ci(model, PredictionRequest(points=points, offset=1.0))
        scaled = predict_mean_ci(model, PredictionRequest(points=points, offset=100.0))
        for a, b in zip(scaled[:3], base[:3]):
            np.testing.assert_allclose(a, 100.0 * b, rtol=1e-12)

    def test_gaussian_interval_is_symmetric(self, small_gaussian_model):
        model, data = small_gaussian_model
        points = {k: data[k][:5] for k in ("x1", "x2", "w1", "w2")}
        mean, lo, hi, eta, sd = predict_mean_ci(model, PredictionRequest(points=points))
        np.testing.assert_allclose(mean - lo, hi - mean, rtol=1e-10)
        np.testing.assert_array_equal(mean, eta)


class TestPredictionIntervals:
    def test_same_seed_identical(self, poisson_model):
        model, data = poisson_model
        points = {k: data[k][:6] for k in ("x1", "x2", "w1", "w2")}
        a = predict_interval(model, PredictionRequest(points=points, seed=11))
        b = predict_interval(model, PredictionRequest(points=points, seed=11))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
        c = predict_interval(model, PredictionRequest(points=points, seed=12))
        assert not (np.array_equal(a[0], c[0]) and np.array_equal(a[1], c[1]))

    def test_count_bounds_are_integers(self, poisson_model):
        model, data = poisson_model
        points = {k: data[k][:6] for k in ("x1", "x2", "w1", "w2")}
        lo, hi = predict_interval(model, PredictionRequest(points=points, seed=4))
        np.testing.assert_array_equal(lo, np.floor(lo))
        np.testing.assert_array_equal(hi, np.ceil(hi))

    def test_gaussian_matches_analytic_convolution(self, small_gaussian_model):
        # The predictive law is the normal convolution
        # N(eta_hat, var + 1/tau); with 1e5 samples the empirical
        # quantiles sit within 1% of its analytic quantiles.
        model, data = small_gaussian_model
        points = {k: data[k][:1] for k in ("x1", "x2", "w1", "w2")}
        request = PredictionRequest(points=points, n_samples=100_000, seed=5)
        lo, hi = predict_interval(model, request)
        _, _, _, eta, eta_sd = predict_mean_ci(model, request)
        total_sd = np.sqrt(eta_sd[0] ** 2 + 1.0 / model.tau_hat)
        z = norm.ppf(0.975)
        half_width = z * total_sd
        np.testing.assert_allclose(lo[0], eta[0] - half_width, atol=0.01 * half_width)
        np.testing.assert_allclose(hi[0], eta[0] + half_width, atol=0.01 * half_width)

    def test_near_degenerate_poisson_interval_collapses(self, poisson_model):
        # mu around 0.01 makes both 95% quantiles zero; the oracle is
        # the quantile of the mixed Poisson itself.
        model, data = poisson_model
        points = {k: data[k][:1] for k in ("x1", "x2", "w1", "w2")}
        tiny = 0.01 / np.exp(model.linear_predictor()[0])
        request = PredictionRequest(points=points, offset=tiny, seed=7)
        lo, hi = predict_interval(model, request)
        assert lo[0] == 0.0 and hi[0] == 0.0

    def test_level_monotonicity(self, poisson_model):
        model, data = poisson_model
        points = {k: data[k][:5] for k in ("x1", "x2", "w1", "w2")}
        lo90, hi90 = predict_interval(
            model, PredictionRequest(points=points, level=0.90, seed=3))
        lo99, hi99 = predict_interval(
            model, PredictionRequest(points=points, level=0.99, seed=3))
        assert np.all(lo99 <= lo90)
        assert np.all(hi99 >= hi90)

    def test_interval_contains_mean_prediction(self, poisson_model):
        # Statistical contract: for mu >= 1 and level 0.95 the interval
        # contains the point prediction in at least 99% of seeds.
        model, data = poisson_model
        points = {k: data[k][:1] for k in ("x1", "x2", "w1", "w2")}
        mean, *_ = predict_mean_ci(model, PredictionRequest(points=points))
        assert mean[0] >= 1.0
        hits = 0
        n_seeds = 1000
        for seed in range(n_seeds):
            lo, hi = predict_interval(
                model, PredictionRequest(points=points, n_samples=400, seed=seed))
            hits += int(lo[0] <= mean[0] <= hi[0])
        assert hits >= 0.99 * n_seeds

    def test_result_metadata_names_engine(self, poisson_model):
        model, data = poisson_model
        points = {k: data[k][:2] for k in ("x1", "x2", "w1", "w2")}
        result = predict(model, PredictionRequest(points=points, seed=42))
        assert result.metadata["rng"] == "philox"
        assert result.metadata["seed"] == 42


class TestSmoothCurve:
    def test_zero_mean_over_training_rows(self, small_gaussian_model):
        model, data = small_gaussian_model
        curve = smooth_curve(model, "x2", data["x2"])
        assert abs(curve.values.mean()) < 1e-8

    def test_band_width_nonnegative(self, small_gaussian_model):
        model, _ = small_gaussian_model
        basis = model.design.bases["x2"]
        grid = np.linspace(basis.lo, basis.hi, 50)
        curve = smooth_curve(model, "x2", grid)
        assert np.all(curve.ci_hi >= curve.values)
        assert np.all(curve.values >= curve.ci_lo)

    def test_pointwise_variance_matches_quadratic_form_loop(self):
        # The coefficient covariance holds huge entries along the
        # centered block's ridge-regularized null direction, which caps
        # cross-route float agreement; a moderate ridge removes that
        # noise so the identity itself can be checked tightly.
        from geoadditive.design import ModelSpec, SmoothTerm, SpatialConfig

        data, _ = gaussian_table(n=120, seed=3)
        spec = ModelSpec(
            response="y",
            linear=("x1",),
            smooths=(SmoothTerm("x2", num_basis=12, ridge=1e-6),),
            spatial=SpatialConfig(num_knots=20, seed=1),
        )
        model = ga.fit(spec, data)
        basis = model.design.bases["x2"]
        grid = np.linspace(basis.lo, basis.hi, 20)
        curve = smooth_curve(model, "x2", grid)
        block = model.design.layout["x2"]
        b = bspline_basis(grid, basis)
        b = model.design.centering["x2"].apply(b)
        sigma = model.Sigma_hat[block, block]
        for i in range(20):
            np.testing.assert_allclose(curve.sd[i] ** 2, b[i] @ sigma @ b[i], rtol=1e-9)

    def test_unknown_term(self, small_gaussian_model):
        model, _ = small_gaussian_model
        with pytest.raises(ConfigError):
            smooth_curve(model, "nope", np.array([0.5]))
