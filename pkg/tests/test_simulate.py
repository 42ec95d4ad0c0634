import numpy as np
import pytest
from scipy.spatial.distance import cdist

from geoadditive.errors import ConfigError
from geoadditive.families import Family
from geoadditive.simulate import (
    BETA0,
    BETA1,
    ReplicateOutcome,
    Scenario,
    _grf_field,
    generate_dataset,
    run_study,
    score_replicates,
    true_surface,
)
from geoadditive.spatial import CovarianceKind, kernel_value


class TestSurfaces:
    def test_bowl_at_origin(self):
        assert true_surface("s1", 0.0, 0.0) == 0.5

    def test_cubic_at_one_one(self):
        # (1 + 1 + 1) / 25 evaluated directly.
        np.testing.assert_allclose(true_surface("s2", 1.0, 1.0), 0.12, rtol=1e-12)

    def test_diagonal_kills_quadratic_part(self):
        w = np.linspace(-3, 3, 25)
        np.testing.assert_allclose(true_surface("s3", w, w), np.sin(w) * np.cos(w),
                                   rtol=1e-12)

    def test_unknown_tag(self):
        with pytest.raises(ConfigError):
            true_surface("s4", 0.0, 0.0)


class TestGeneration:
    def test_replicate_depends_only_on_seed_and_index(self):
        sc = Scenario(family=Family.POISSON, surface="s2", n=60, replicates=3, seed=5)
        a = generate_dataset(sc, 2)
        b = generate_dataset(sc, 2)
        for key in a.train:
            np.testing.assert_array_equal(a.train[key], b.train[key])
        np.testing.assert_array_equal(a.y_holdout, b.y_holdout)
        c = generate_dataset(sc, 1)
        assert not np.array_equal(a.train["y"], c.train["y"])

    def test_gaussian_noise_variance(self):
        sc = Scenario(family=Family.GAUSSIAN, surface="s1", n=100_000, replicates=1,
                      seed=11)
        data = generate_dataset(sc, 0)
        t = data.train
        structure = (BETA0 + BETA1 * t["x1"] + np.cos(2 * np.pi * t["x2"])
                     + true_surface("s1", t["w1"], t["w2"]))
        residual_var = np.var(t["y"] - structure)
        assert abs(residual_var - 0.10) < 0.005

    def test_count_rate_uses_log_scale_structure(self):
        sc = Scenario(family=Family.POISSON, surface="s1", n=50_000, replicates=1,
                      seed=12, sigma=1e-12)
        data = generate_dataset(sc, 0)
        t = data.train
        structure = (BETA0 + BETA1 * t["x1"] + np.cos(2 * np.pi * t["x2"])
                     + true_surface("s1", t["w1"], t["w2"]))
        # With eps ~ 0 the response is Poisson(exp(structure)): its mean
        # matches exp(structure) and so does its variance.
        ratio = t["y"].mean() / np.exp(structure).mean()
        assert abs(ratio - 1.0) < 0.02

    def test_grf_covariance_monte_carlo(self):
        # Empirical covariance over 500 field draws at three probe pairs
        # against sill * kernel(d / range).
        sc = Scenario(family=Family.GAUSSIAN, surface="grf", n=60, replicates=1,
                      seed=13, grf_sill=0.5, grf_range=0.15,
                      kernel=CovarianceKind.EXPONENTIAL)
        pairs = np.array([
            [0.2, 0.2], [0.2, 0.3],
            [0.5, 0.5], [0.65, 0.5],
            [0.8, 0.2], [0.8, 0.21],
        ])
        rng = np.random.Generator(np.random.Philox(99))
        draws = np.array([_grf_field(sc, rng, pairs) for _ in range(500)])
        for k in range(3):
            a, b = draws[:, 2 * k], draws[:, 2 * k + 1]
            emp = np.mean(a * b) - a.mean() * b.mean()
            d = np.linalg.norm(pairs[2 * k] - pairs[2 * k + 1])
            expected = 0.5 * kernel_value(CovarianceKind.EXPONENTIAL, 1.0 / 0.15, d)
            assert abs(emp - expected) < 0.08

    def test_grf_uses_unit_square(self):
        sc = Scenario(family=Family.GAUSSIAN, surface="grf", n=200, replicates=1, seed=1)
        data = generate_dataset(sc, 0)
        assert data.train["w1"].min() >= 0.0 and data.train["w1"].max() <= 1.0
        assert "x1" not in data.train

    def test_insample_holdout_reuses_training_points(self):
        sc = Scenario(family=Family.GAUSSIAN, surface="s1", n=80, replicates=1,
                      seed=3, holdout="insample")
        data = generate_dataset(sc, 0)
        np.testing.assert_array_equal(data.holdout["w1"], data.train["w1"])
        np.testing.assert_array_equal(data.y_holdout, data.train["y"])

    def test_scenario_validation(self):
        with pytest.raises(ConfigError):
            Scenario(family=Family.GAUSSIAN, surface="bad")
        with pytest.raises(ConfigError):
            Scenario(family=Family.GAUSSIAN, n=10)
        with pytest.raises(ConfigError):
            Scenario(family=Family.GAUSSIAN, holdout="nope")


def _perfect_outcome(index, m=3):
    truth = np.array([1.0, -2.0, 0.5])[:m]
    return ReplicateOutcome(
        index=index, success=True, wall_time=0.1,
        f_true=truth, f_hat=truth.copy(),
        f_lo=truth - 0.1, f_hi=truth + 0.1,
        s_true=truth, s_hat=truth.copy(),
        s_lo=truth - 0.1, s_hi=truth + 0.1,
        mu_true=truth, mu_hat=truth.copy(),
        y_holdout=truth, pi_lo=truth - 1.0, pi_hi=truth + 1.0,
    )


class TestScoring:
    def test_perfect_estimates_score_perfectly(self):
        sc = Scenario(family=Family.GAUSSIAN, surface="s1", n=60, replicates=2, seed=0)
        report = score_replicates(sc, [_perfect_outcome(0), _perfect_outcome(1)])
        for quantity in ("f(x2)", "s(w1,w2)"):
            row = report.row(quantity)
            assert row["pct_bias"] == 0.0
            assert row["coverage_pct"] == 100.0
        assert report.row("mu")["bias"] == 0.0
        assert report.row("y")["coverage_pct"] == 100.0

    def test_hand_built_three_point_grid(self):
        sc = Scenario(family=Family.GAUSSIAN, surface="s1", n=60, replicates=1, seed=0)
        out = _perfect_outcome(0)
        out.mu_true = np.array([2.0, 4.0, 5.0])
        out.mu_hat = np.array([1.0, 5.0, 5.5])
        # Bias = mean(1, -1, -0.5) = -1/6; %Bias = mean(50, 25, 10) %.
        report = score_replicates(sc, [out])
        np.testing.assert_allclose(report.row("mu")["bias"], -1.0 / 6.0, rtol=1e-12)
        np.testing.assert_allclose(report.row("mu")["pct_bias"],
                                   (50.0 + 25.0 + 10.0) / 3.0, rtol=1e-12)

    def test_near_zero_truths_excluded_and_counted(self):
        sc = Scenario(family=Family.GAUSSIAN, surface="s1", n=60, replicates=1, seed=0)
        out = _perfect_outcome(0)
        out.f_true = np.array([0.0, 1.0, 2.0])
        out.f_hat = np.array([0.3, 1.1, 2.2])
        out.f_lo = out.f_hat - 1.0
        out.f_hi = out.f_hat + 1.0
        report = score_replicates(sc, [out])
        assert report.excluded_points["f(x2)"] == 1
        np.testing.assert_allclose(report.row("f(x2)")["pct_bias"], 10.0, rtol=1e-12)

    def test_relabeling_invariance(self):
        sc = Scenario(family=Family.GAUSSIAN, surface="s1", n=60, replicates=3, seed=0)
        outs = [_perfect_outcome(0), _perfect_outcome(1), _perfect_outcome(2)]
        outs[1].mu_hat = outs[1].mu_hat + 0.5
        a = score_replicates(sc, outs)
        b = score_replicates(sc, outs[::-1])
        for qa, qb in zip(a.rows, b.rows):
            for key in ("bias", "pct_bias", "coverage_pct"):
                np.testing.assert_equal(qa[key], qb[key])

    def test_failures_dropped_and_counted(self):
        sc = Scenario(family=Family.GAUSSIAN, surface="s1", n=60, replicates=2, seed=0)
        outs = [_perfect_outcome(0),
                ReplicateOutcome(index=1, success=False, error="did not converge")]
        report = score_replicates(sc, outs)
        assert report.replicates_used == 1
        assert report.replicates_failed == 1


class TestStudy:
    def test_parallel_matches_serial(self):
        sc = Scenario(family=Family.GAUSSIAN, surface="s1", n=80, replicates=2, seed=21,
                      spatial_grid_size=6, covariate_grid_size=20, num_knots=15)
        serial = run_study(sc, threads=1)
        parallel = run_study(sc, threads=2)
        for qa, qb in zip(serial.rows, parallel.rows):
            for key in ("bias", "pct_bias", "coverage_pct"):
                np.testing.assert_equal(qa[key], qb[key])
