import csv
import json

import numpy as np
import pytest

import geoadditive as ga
from conftest import count_table, gaussian_table
from geoadditive import model_io
from geoadditive.cli import main, read_csv
from geoadditive.predict import PredictionRequest, predict


def _write_csv(path, columns):
    names = list(columns)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(len(columns[names[0]])):
            writer.writerow([repr(float(columns[k][i])) for k in names])


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh)


@pytest.fixture
def toy_dir(tmp_path):
    rng = np.random.default_rng(0)
    n = 10
    data = {"x1": rng.uniform(0, 1, n)}
    data["y"] = 2.0 + 1.5 * data["x1"] + rng.normal(0, 0.1, n)
    _write_csv(tmp_path / "train.csv", data)
    _write_json(tmp_path / "cfg.json",
                {"model": {"response": "y", "family": "gaussian", "linear": ["x1"]}})
    return tmp_path


@pytest.fixture
def spatial_dir(tmp_path):
    data, _ = gaussian_table(n=80, seed=30)
    _write_csv(tmp_path / "train.csv", data)
    _write_json(
        tmp_path / "cfg.json",
        {
            "model": {
                "response": "y",
                "family": "gaussian",
                "linear": ["x1"],
                "smooths": [{"name": "x2", "num_basis": 10}],
                "spatial": {"kind": "exponential", "num_knots": 15, "seed": 1},
            }
        },
    )
    points = {k: data[k][:6] for k in ("x1", "x2", "w1", "w2")}
    _write_csv(tmp_path / "points.csv", points)
    return tmp_path


def _strip_timestamp(model_file):
    with open(model_file) as fh:
        payload = json.load(fh)
    payload["metadata"].pop("created_at", None)
    return payload


class TestFitCommand:
    def test_smallest_viable_run(self, toy_dir, capsys):
        code = main(["fit", "--config", str(toy_dir / "cfg.json"),
                     "--data", str(toy_dir / "train.csv"),
                     "--out", str(toy_dir / "out")])
        assert code == 0
        with open(toy_dir / "out" / "report.json") as fh:
            report = json.load(fh)
        assert np.isfinite(report["bic"])
        assert "BIC" in capsys.readouterr().out

    def test_repeat_run_identical_modulo_timestamp(self, toy_dir):
        for out in ("out_a", "out_b"):
            assert main(["fit", "--config", str(toy_dir / "cfg.json"),
                         "--data", str(toy_dir / "train.csv"),
                         "--out", str(toy_dir / out)]) == 0
        a = _strip_timestamp(toy_dir / "out_a" / "model.json")
        b = _strip_timestamp(toy_dir / "out_b" / "model.json")
        assert a == b

    def test_artifacts_carry_metadata(self, spatial_dir):
        assert main(["fit", "--config", str(spatial_dir / "cfg.json"),
                     "--data", str(spatial_dir / "train.csv"),
                     "--out", str(spatial_dir / "out")]) == 0
        for name in ("smooth_x2.csv", "spatial_surface.csv"):
            with open(spatial_dir / "out" / name) as fh:
                first = fh.readline()
            assert first.startswith("# ")
            meta = json.loads(first[2:])
            assert meta["library"] == "geoadditive"
            assert meta["version"] == ga.__version__
            assert "config" in meta

    def test_data_error_exit_code(self, toy_dir, capsys):
        _write_json(toy_dir / "bad.json",
                    {"model": {"response": "nope", "family": "gaussian"}})
        code = main(["fit", "--config", str(toy_dir / "bad.json"),
                     "--data", str(toy_dir / "train.csv"),
                     "--out", str(toy_dir / "out")])
        assert code == 2
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "DataError"

    def test_nonconvergence_exit_code(self, spatial_dir, capsys):
        with open(spatial_dir / "cfg.json") as fh:
            cfg = json.load(fh)
        cfg["options"] = {"max_evaluations": 3}
        _write_json(spatial_dir / "cfg.json", cfg)
        code = main(["fit", "--config", str(spatial_dir / "cfg.json"),
                     "--data", str(spatial_dir / "train.csv"),
                     "--out", str(spatial_dir / "out")])
        assert code == 3
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "ConvergenceError"

    def test_meuse_format_model(self, tmp_path, capsys):
        # Columns shaped like the classic river dataset: coordinates,
        # a response on the log scale and two terrain covariates.
        rng = np.random.default_rng(31)
        n = 80
        x = rng.uniform(0, 3000, n)
        y_coord = rng.uniform(0, 4000, n)
        dist = rng.uniform(0, 1, n)
        elev = rng.uniform(5, 10, n)
        zinc = 6.0 - 1.2 * np.sqrt(dist) - 0.2 * (elev - 7.5) + rng.normal(0, 0.3, n)
        _write_csv(tmp_path / "meuse.csv",
                   {"x": x, "y": y_coord, "zinc": zinc, "dist": dist, "elev": elev})
        _write_json(
            tmp_path / "cfg.json",
            {
                "model": {
                    "response": "zinc",
                    "family": "gaussian",
                    "smooths": [{"name": "dist", "num_basis": 10},
                                {"name": "elev", "num_basis": 10}],
                    "spatial": {"kind": "circular", "coords": ["x", "y"],
                                "num_knots": 20, "seed": 1},
                }
            },
        )
        code = main(["fit", "--config", str(tmp_path / "cfg.json"),
                     "--data", str(tmp_path / "meuse.csv"),
                     "--out", str(tmp_path / "out"), "--standardize-coords"])
        assert code == 0
        with open(tmp_path / "out" / "report.json") as fh:
            report = json.load(fh)
        assert np.isfinite(report["bic"])
        assert len(report["smooth_tests"]) == 2


class TestPredictCommand:
    def test_fixed_seed_reproduces_output(self, spatial_dir):
        assert main(["fit", "--config", str(spatial_dir / "cfg.json"),
                     "--data", str(spatial_dir / "train.csv"),
                     "--out", str(spatial_dir / "fit")]) == 0
        for out in ("p1", "p2"):
            assert main(["predict", "--model", str(spatial_dir / "fit" / "model.json"),
                         "--data", str(spatial_dir / "points.csv"),
                         "--out", str(spatial_dir / out), "--seed", "17"]) == 0
        a = (spatial_dir / "p1" / "predictions.csv").read_bytes()
        b = (spatial_dir / "p2" / "predictions.csv").read_bytes()
        assert a == b

    def test_round_trip_matches_in_memory_predictions(self, tmp_path):
        data, _ = gaussian_table(n=90, seed=32)
        spec = ga.ModelSpec(
            response="y", linear=("x1",),
            smooths=(ga.SmoothTerm("x2", num_basis=10),),
            spatial=ga.SpatialConfig(num_knots=15, seed=1),
        )
        model = ga.fit(spec, data)
        model_io.save_model(model, tmp_path / "model.json")
        loaded = model_io.load_model(tmp_path / "model.json")

        points = {k: data[k][:8] for k in ("x1", "x2", "w1", "w2")}
        request = PredictionRequest(points=points, seed=3)
        direct = predict(model, request)
        reloaded = predict(loaded, request)
        for field in ("mean", "ci_lo", "ci_hi", "pi_lo", "pi_hi", "eta", "eta_sd"):
            np.testing.assert_array_equal(getattr(direct, field),
                                          getattr(reloaded, field))

    def test_count_round_trip(self, tmp_path):
        data, _ = count_table(n=100, seed=33)
        spec = ga.ModelSpec(
            response="y", family=ga.Family.POISSON, linear=("x1",),
            smooths=(ga.SmoothTerm("x2", num_basis=10),),
            spatial=ga.SpatialConfig(num_knots=15, seed=1),
        )
        model = ga.fit(spec, data)
        model_io.save_model(model, tmp_path / "model.json")
        loaded = model_io.load_model(tmp_path / "model.json")
        points = {k: data[k][:5] for k in ("x1", "x2", "w1", "w2")}
        request = PredictionRequest(points=points, seed=8)
        np.testing.assert_array_equal(predict(model, request).pi_hi,
                                      predict(loaded, request).pi_hi)


class TestSimulateCommand:
    def test_report_schema(self, tmp_path):
        _write_json(tmp_path / "scenario.json",
                    {"family": "gaussian", "surface": "s1", "kernel": "exponential",
                     "n": 100, "replicates": 2, "seed": 3, "spatial_grid_size": 6,
                     "covariate_grid_size": 20, "num_knots": 15})
        assert main(["simulate", "--config", str(tmp_path / "scenario.json"),
                     "--out", str(tmp_path / "sim"), "--threads", "1"]) == 0
        table = read_csv(tmp_path / "sim" / "report.csv")
        assert set(table) == {"quantity", "bias", "pct_bias", "coverage_pct"}
        with open(tmp_path / "sim" / "report.csv") as fh:
            fh.readline()
            header = fh.readline().strip().split(",")
            quantities = [line.split(",")[0] for line in fh]
        assert header == ["quantity", "bias", "pct_bias", "coverage_pct"]
        assert quantities == ["f(x2)", '"s(w1,w2)"', "mu", "y"] or \
            quantities == ["f(x2)", "s(w1,w2)", "mu", "y"]
        with open(tmp_path / "sim" / "metadata.json") as fh:
            meta = json.load(fh)
        assert meta["replicates_used"] == 2
        assert "timing" in meta

    def test_timing_mode(self, tmp_path, capsys):
        _write_json(tmp_path / "scenario.json",
                    {"family": "gaussian", "surface": "s1", "n": 80, "replicates": 1,
                     "seed": 3, "num_knots": 15, "timing_evaluations": 2})
        assert main(["simulate", "--config", str(tmp_path / "scenario.json"),
                     "--out", str(tmp_path / "sim"), "--timing"]) == 0
        with open(tmp_path / "sim" / "metadata.json") as fh:
            meta = json.load(fh)
        for key in ("min", "mean", "median", "max"):
            assert meta["timing"][key] > 0
        assert "timing over 2 fits" in capsys.readouterr().out


class TestKnotsCommand:
    def test_all_sites_when_requested(self, tmp_path, capsys):
        rng = np.random.default_rng(34)
        coords = {"w1": rng.uniform(0, 1, 12), "w2": rng.uniform(0, 1, 12)}
        _write_csv(tmp_path / "sites.csv", coords)
        assert main(["knots", "--data", str(tmp_path / "sites.csv"),
                     "--out", str(tmp_path / "kn"), "--num-knots", "12"]) == 0
        table = read_csv(tmp_path / "kn" / "knots.csv")
        np.testing.assert_allclose(np.sort(table["w1"]), np.sort(coords["w1"]))
        assert "criterion" in capsys.readouterr().out

    def test_read_csv_skips_metadata_lines(self, tmp_path):
        path = tmp_path / "file.csv"
        path.write_text('# {"k": 1}\na,b\n1.0,2.0\n')
        table = read_csv(path)
        np.testing.assert_array_equal(table["a"], [1.0])
