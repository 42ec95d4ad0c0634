"""Command-line front end: fit, predict, simulate, knots.

Configuration lives in JSON files; command-line flags override file
values, and every output artifact embeds the fully resolved
configuration plus the library version in its metadata. CSV outputs
start with one '#'-prefixed JSON metadata line; readers here skip such
lines. Data errors exit with code 2, numerical failures and
non-convergence with 3, and a machine-readable error object is printed
to stderr.
"""

import argparse
import csv
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, model_io, simulate as sim
from .design import ModelSpec, PriorConfig, SmoothTerm, SpatialConfig
from .diagnostics import smooth_test
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    DomainError,
    GeoadditiveError,
    NumericalError,
)
from .families import Family
from .inference import FitOptions, fit
from .predict import PredictionRequest, predict, smooth_curve, spatial_surface
from .spatial import CovarianceKind, select_knots, default_num_knots

DATA_ERROR_EXIT = 2
NUMERIC_ERROR_EXIT = 3


# ----------------------------------------------------------------------
# CSV and config helpers
# ----------------------------------------------------------------------

def read_csv(path) -> dict:
    """Read a comma-separated file with a mandatory header row into a
    column dictionary of float arrays. Lines starting with '#' are
    treated as metadata and skipped."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}")
    if not rows:
        raise DataError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    if not body:
        raise DataError(f"{path} has a header but no data rows")
    columns = {}
    for j, name in enumerate(header):
        name = name.strip()
        try:
            cells = [r[j] for r in body]
        except IndexError:
            raise DataError(f"ragged rows under column {name!r} in {path}")
        try:
            columns[name] = np.array([float(c) for c in cells])
        except ValueError:
            # Non-numeric columns are kept as strings; the model layer
            # rejects them if they end up used as covariates.
            columns[name] = np.array(cells)
    return columns


def _format_cell(value) -> str:
    if isinstance(value, (str, np.str_)):
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path, columns: dict, metadata: dict) -> None:
    names = list(columns)
    arrays = [np.atleast_1d(np.asarray(columns[k])) for k in names]
    length = arrays[0].size
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# " + json.dumps(metadata, sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(length):
            writer.writerow([_format_cell(a[i]) for a in arrays])


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}")


def base_metadata(command: str, config: dict) -> dict:
    return {
        "library": "geoadditive",
        "version": __version__,
        "command": command,
        "config": config,
    }


def _spec_from_config(config: dict) -> ModelSpec:
    model = config.get("model")
    if not model:
        raise ConfigError("config is missing the 'model' section")
    smooths = []
    for entry in model.get("smooths", []):
        if isinstance(entry, str):
            smooths.append(SmoothTerm(name=entry))
        else:
            smooths.append(
                SmoothTerm(
                    name=entry["name"],
                    num_basis=entry.get("num_basis", SmoothTerm("x").num_basis),
                    degree=entry.get("degree", 3),
                    penalty_order=entry.get("penalty_order", 2),
                    ridge=entry.get("ridge", 1e-12),
                )
            )
    spatial_cfg = None
    if model.get("spatial"):
        s = model["spatial"]
        spatial_cfg = SpatialConfig(
            kind=CovarianceKind.parse(s.get("kind", "exponential")),
            coords=tuple(s.get("coords", ("w1", "w2"))),
            num_knots=s.get("num_knots"),
            seed=s.get("seed", 0),
            swaps=s.get("swaps"),
            jitter=s.get("jitter"),
        )
    priors = PriorConfig(**model.get("priors", {}))
    if "response" not in model:
        raise ConfigError("config model section needs a 'response' column name")
    return ModelSpec(
        response=model["response"],
        family=Family.parse(model.get("family", "gaussian")),
        linear=tuple(model.get("linear", ())),
        smooths=tuple(smooths),
        spatial=spatial_cfg,
        priors=priors,
        offset=model.get("offset"),
    )


def _options_from_config(config: dict) -> FitOptions:
    raw = dict(config.get("options", {}))
    if not raw:
        return FitOptions()
    valid = {f for f in FitOptions.__dataclass_fields__}
    unknown = set(raw) - valid
    if unknown:
        raise ConfigError(f"unknown fit option(s): {sorted(unknown)}")
    for key in ("v_bounds", "v_phi_bounds", "rho_distance_span"):
        if key in raw:
            raw[key] = tuple(raw[key])
    return FitOptions(**raw)


def _standardize_coords(data: dict, coord_names, stats=None):
    """Z-score the coordinate columns in place; returns the transform."""
    if stats is None:
        stats = {}
        for name in coord_names:
            col = data[name]
            mean, sd = float(col.mean()), float(col.std())
            if sd == 0:
                raise DataError(f"coordinate column {name!r} is constant")
            stats[name] = {"mean": mean, "sd": sd}
    for name in coord_names:
        data[name] = (data[name] - stats[name]["mean"]) / stats[name]["sd"]
    return stats


# ----------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------

def cmd_fit(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.standardize_coords:
        config["standardize_coords"] = True
    spec = _spec_from_config(config)
    options = _options_from_config(config)
    data = read_csv(args.data)

    coord_stats = None
    if config.get("standardize_coords") and spec.spatial is not None:
        coord_stats = _standardize_coords(data, spec.spatial.coords)
        config["coord_standardization"] = coord_stats

    model = fit(spec, data, options)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metadata = base_metadata("fit", config)
    metadata["created_at"] = datetime.datetime.now(datetime.timezone.utc).isoformat()

    model_path = out / "model.json"
    model_io.save_model(model, model_path, extra_metadata=metadata)

    tests = []
    for term in spec.smooth_names:
        res = smooth_test(model, term)
        tests.append(
            {
                "term": term,
                "ed": res.ed,
                "statistic": res.statistic,
                "rank": res.rank,
                "p_value": res.p_value,
            }
        )
    report = {
        "metadata": metadata,
        "bic": model.bic,
        "ed_total": model.ed_total,
        "ed_per_term": model.ed_per_term,
        "hyperparameters": {
            "lambdas": [float(v) for v in model.lambdas],
            "rho": model.rho,
            "phi": model.phi,
            "tau_hat": model.tau_hat,
        },
        "smooth_tests": tests,
        "trace": model.trace,
    }
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)

    curve_grid = int(config.get("curve_grid_size", 200))
    for term in spec.smooth_names:
        basis = model.design.bases[term]
        grid = np.linspace(basis.lo, basis.hi, curve_grid)
        curve = smooth_curve(model, term, grid)
        write_csv(
            out / f"smooth_{term}.csv",
            {
                term: grid,
                "estimate": curve.values,
                "sd": curve.sd,
                "ci_lo": curve.ci_lo,
                "ci_hi": curve.ci_hi,
            },
            metadata,
        )

    if spec.spatial is not None:
        side = int(config.get("surface_grid_size", 40))
        knots = model.design.knots.knots
        g1 = np.linspace(knots[:, 0].min(), knots[:, 0].max(), side)
        g2 = np.linspace(knots[:, 1].min(), knots[:, 1].max(), side)
        m1, m2 = np.meshgrid(g1, g2, indexing="ij")
        values, sd, _, _ = spatial_surface(model, m1.ravel(), m2.ravel())
        write_csv(
            out / "spatial_surface.csv",
            {"w1": m1.ravel(), "w2": m2.ravel(), "estimate": values, "sd": sd},
            metadata,
        )

    print(f"fit complete: BIC {model.bic:.4f}, total ED {model.ed_total:.2f}, "
          f"{model.trace['n_evaluations']} hyperparameter evaluations")
    print(f"artifacts written to {out}")
    return 0


def cmd_predict(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    config.setdefault("seed", 0)
    config.setdefault("level", 0.95)
    config.setdefault("n_samples", 1000)
    if args.level is not None:
        config["level"] = args.level
    if args.samples is not None:
        config["n_samples"] = args.samples

    model = model_io.load_model(args.model)
    points = read_csv(args.data)

    with open(args.model, encoding="utf-8") as fh:
        stored_meta = json.load(fh).get("metadata", {})
    coord_stats = stored_meta.get("config", {}).get("coord_standardization")
    if coord_stats and model.spec.spatial is not None:
        _standardize_coords(points, model.spec.spatial.coords, coord_stats)

    offset = 1.0
    if model.spec.offset is not None and model.spec.offset in points:
        offset = points[model.spec.offset]

    request = PredictionRequest(
        points=points,
        offset=offset,
        level=float(config["level"]),
        n_samples=int(config["n_samples"]),
        seed=int(config["seed"]),
    )
    result = predict(model, request)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metadata = base_metadata("predict", config)
    metadata["model_file"] = str(args.model)
    metadata["rng"] = result.metadata
    write_csv(
        out / "predictions.csv",
        {
            "point": np.arange(result.mean.size),
            "mean": result.mean,
            "ci_lo": result.ci_lo,
            "ci_hi": result.ci_hi,
            "pi_lo": result.pi_lo,
            "pi_hi": result.pi_hi,
            "eta": result.eta,
            "eta_sd": result.eta_sd,
        },
        metadata,
    )
    print(f"wrote {result.mean.size} predictions to {out / 'predictions.csv'}")
    return 0


def _scenario_from_config(config: dict) -> sim.Scenario:
    if "family" not in config:
        raise ConfigError("scenario config needs a 'family'")
    grf = config.get("grf", {})
    options = _options_from_config(config)
    return sim.Scenario(
        family=Family.parse(config["family"]),
        surface=config.get("surface", "s1"),
        kernel=CovarianceKind.parse(config.get("kernel", "exponential")),
        n=int(config.get("n", 300)),
        replicates=int(config.get("replicates", 100)),
        seed=int(config.get("seed", 0)),
        sigma=config.get("sigma"),
        covariate_grid_size=int(config.get("covariate_grid_size", 100)),
        spatial_grid_size=int(config.get("spatial_grid_size", 20)),
        holdout=config.get("holdout", "grid"),
        num_knots=config.get("num_knots"),
        grf_sill=float(grf.get("sill", 0.5)),
        grf_range=float(grf.get("range", 0.15)),
        grf_kernel=(CovarianceKind.parse(grf["kernel"]) if grf.get("kernel") else None),
        fit_options=options,
    )


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    scenario = _scenario_from_config(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metadata = base_metadata("simulate", config)
    metadata["seed"] = scenario.seed

    if args.timing:
        timing = sim.run_timing(scenario, evaluations=int(config.get("timing_evaluations", 10)))
        metadata["timing"] = timing
        write_csv(
            out / "timing.csv",
            {
                "min": [timing["min"]],
                "mean": [timing["mean"]],
                "median": [timing["median"]],
                "max": [timing["max"]],
            },
            metadata,
        )
        with open(out / "metadata.json", "w", encoding="utf-8") as fh:
            json.dump(metadata, fh, indent=1)
        print(
            "timing over {evaluations} fits: min {min:.3f}s mean {mean:.3f}s "
            "median {median:.3f}s max {max:.3f}s".format(**timing)
        )
        return 0

    report = sim.run_study(scenario, threads=args.threads)
    metadata.update(
        replicates_requested=report.replicates_requested,
        replicates_used=report.replicates_used,
        replicates_failed=report.replicates_failed,
        excluded_points=report.excluded_points,
        timing=report.timing,
    )
    write_csv(
        out / "report.csv",
        {
            "quantity": np.array([r["quantity"] for r in report.rows]),
            "bias": [r["bias"] for r in report.rows],
            "pct_bias": [r["pct_bias"] for r in report.rows],
            "coverage_pct": [r["coverage_pct"] for r in report.rows],
        },
        metadata,
    )
    with open(out / "metadata.json", "w", encoding="utf-8") as fh:
        json.dump(metadata, fh, indent=1)
    for row in report.rows:
        print(row)
    print(f"used {report.replicates_used}/{report.replicates_requested} replicates "
          f"({report.replicates_failed} failed)")
    return 0


def cmd_knots(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    config.setdefault("seed", 0)
    coords_names = tuple((args.coords or config.get("coords", "w1,w2")).split(","))
    if len(coords_names) != 2:
        raise ConfigError("expected two coordinate column names, e.g. --coords w1,w2")
    data = read_csv(args.data)
    for name in coords_names:
        if name not in data:
            raise DataError(f"data has no coordinate column {name!r}")

    raw = {name: data[name].copy() for name in coords_names}
    if args.standardize_coords or config.get("standardize_coords"):
        config["standardize_coords"] = True
        config["coord_standardization"] = _standardize_coords(data, coords_names)

    coords = np.column_stack([data[coords_names[0]], data[coords_names[1]]])
    num = args.num_knots or config.get("num_knots") or default_num_knots(coords.shape[0])
    knots = select_knots(coords, int(num), seed=int(config["seed"]),
                         swaps=config.get("swaps"))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metadata = base_metadata("knots", config)
    metadata["criterion_value"] = knots.criterion_value
    metadata["num_knots"] = knots.count
    # Emit the knots in the original (unstandardized) coordinates.
    write_csv(
        out / "knots.csv",
        {
            coords_names[0]: raw[coords_names[0]][knots.indices],
            coords_names[1]: raw[coords_names[1]][knots.indices],
        },
        metadata,
    )
    print(f"selected {knots.count} knots, maximin criterion {knots.criterion_value:.6g}")
    return 0


# ----------------------------------------------------------------------
# Entry point
# ----------------------------------------------------------------------

def _add_common(parser):
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--data", help="input CSV file")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker count (default: GEOADDITIVE_THREADS or CPU count)")
    parser.add_argument("--standardize-coords", action="store_true",
                        help="z-score the coordinate columns before use")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geoadditive",
        description="Geoadditive models: penalized smooths plus low-rank spatial effects",
    )
    parser.add_argument("--version", action="version", version=f"geoadditive {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    p_fit = subparsers.add_parser("fit", help="fit a model to a CSV dataset")
    _add_common(p_fit)
    p_fit.set_defaults(handler=cmd_fit)

    p_pred = subparsers.add_parser("predict", help="predict at new points from a saved model")
    _add_common(p_pred)
    p_pred.add_argument("--model", required=True, help="model.json from a previous fit")
    p_pred.add_argument("--level", type=float, default=None, help="interval level")
    p_pred.add_argument("--samples", type=int, default=None,
                        help="number of predictive samples per point")
    p_pred.set_defaults(handler=cmd_predict)

    p_sim = subparsers.add_parser("simulate", help="run a simulation study")
    _add_common(p_sim)
    p_sim.add_argument("--timing", action="store_true",
                       help="report wall-time stats over repeated fits instead of scores")
    p_sim.set_defaults(handler=cmd_simulate)

    p_knots = subparsers.add_parser("knots", help="space-filling knot selection")
    _add_common(p_knots)
    p_knots.add_argument("--num-knots", type=int, default=None)
    p_knots.add_argument("--coords", default=None, help="coordinate column names, e.g. w1,w2")
    p_knots.set_defaults(handler=cmd_knots)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in ("fit", "predict", "knots") and args.data is None:
        parser.error(f"{args.command} requires --data")
    if args.command == "simulate" and args.config is None:
        parser.error("simulate requires --config")
    try:
        return args.handler(args)
    except (DataError, ConfigError, DomainError) as exc:
        _emit_error(exc)
        return DATA_ERROR_EXIT
    except (ConvergenceError, NumericalError) as exc:
        _emit_error(exc)
        return NUMERIC_ERROR_EXIT
    except GeoadditiveError as exc:  # pragma: no cover - catch-all
        _emit_error(exc)
        return NUMERIC_ERROR_EXIT


def _emit_error(exc) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(payload), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
