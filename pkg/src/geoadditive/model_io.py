"""Save and load fitted models as JSON.

The file stores the posterior mode, the lower Cholesky factor of the
coefficient covariance, the MAP hyperparameters, the block layout, the
spline bases, the centering means and the knot coordinates: everything
prediction needs. Floats are serialized via ``repr`` round-tripping, so
a reloaded model reproduces predictions bit for bit.
"""

import json

import numpy as np

from . import __version__
from .design import ModelSpec, PriorConfig, SmoothTerm, SpatialConfig, DesignSystem
from .errors import DataError
from .families import Family
from .inference import FittedModel, HyperState
from .spatial import CovarianceKind, KnotSet, SpatialBasis
from .splines import BSplineBasis, CenteringTransform, difference_penalty

__all__ = ["save_model", "load_model", "model_to_dict", "model_from_dict"]

FORMAT = "geoadditive-model"
FORMAT_VERSION = 1


def _arr(a):
    return np.asarray(a, dtype=float).tolist()


def _spec_to_dict(spec: ModelSpec) -> dict:
    out = {
        "response": spec.response,
        "family": spec.family.value,
        "linear": list(spec.linear),
        "smooths": [
            {
                "name": s.name,
                "num_basis": s.num_basis,
                "degree": s.degree,
                "penalty_order": s.penalty_order,
                "ridge": s.ridge,
            }
            for s in spec.smooths
        ],
        "priors": {
            "zeta": spec.priors.zeta,
            "nu": spec.priors.nu,
            "a_delta": spec.priors.a_delta,
            "b_delta": spec.priors.b_delta,
        },
        "offset": spec.offset,
        "spatial": None,
    }
    if spec.spatial is not None:
        out["spatial"] = {
            "kind": spec.spatial.kind.value,
            "coords": list(spec.spatial.coords),
            "num_knots": spec.spatial.num_knots,
            "seed": spec.spatial.seed,
            "swaps": spec.spatial.swaps,
            "jitter": spec.spatial.jitter,
        }
    return out


def spec_from_dict(d: dict) -> ModelSpec:
    spatial_cfg = None
    if d.get("spatial") is not None:
        s = d["spatial"]
        spatial_cfg = SpatialConfig(
            kind=CovarianceKind.parse(s["kind"]),
            coords=tuple(s["coords"]),
            num_knots=s.get("num_knots"),
            seed=s.get("seed", 0),
            swaps=s.get("swaps"),
            jitter=s.get("jitter"),
        )
    return ModelSpec(
        response=d["response"],
        family=Family.parse(d["family"]),
        linear=tuple(d.get("linear", ())),
        smooths=tuple(
            SmoothTerm(
                name=s["name"],
                num_basis=s["num_basis"],
                degree=s["degree"],
                penalty_order=s["penalty_order"],
                ridge=s["ridge"],
            )
            for s in d.get("smooths", ())
        ),
        spatial=spatial_cfg,
        priors=PriorConfig(**d["priors"]),
        offset=d.get("offset"),
    )


def model_to_dict(model: FittedModel, extra_metadata: dict | None = None) -> dict:
    design = model.design
    layout = {
        name: [blk.start, blk.stop]
        for name, blk in design.layout.items()
        if name != "__total__"
    }
    out = {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "metadata": {
            "library": "geoadditive",
            "version": __version__,
            **(extra_metadata or {}),
        },
        "spec": _spec_to_dict(model.spec),
        "layout": layout,
        "num_columns": design.num_columns,
        "x_names": list(design.x_names),
        "xi_hat": _arr(model.xi_hat),
        "sigma_chol_lower": _arr(model.sigma_chol),
        "hyper": {
            "v": _arr(model.hyper.v),
            "v_rho": model.hyper.v_rho,
            "v_phi": model.hyper.v_phi,
        },
        "rho": model.rho,
        "phi": model.phi,
        "tau_shape": model.tau_shape,
        "tau_rate": model.tau_rate,
        "tau_hat": model.tau_hat,
        "ed_total": model.ed_total,
        "ed_per_term": {k: float(v) for k, v in model.ed_per_term.items()},
        "bic": model.bic,
        "bases": {
            name: {
                "lo": basis.lo,
                "hi": basis.hi,
                "num_basis": basis.num_basis,
                "degree": basis.degree,
            }
            for name, basis in design.bases.items()
        },
        "centering": {name: _arr(t.column_means) for name, t in design.centering.items()},
        "knots": None,
        "spatial_jitter": None,
    }
    if design.knots is not None:
        out["knots"] = {
            "coordinates": _arr(design.knots.knots),
            "indices": [int(i) for i in design.knots.indices],
            "selection_seed": design.knots.selection_seed,
            "criterion_value": design.knots.criterion_value,
        }
        out["spatial_jitter"] = design.spatial_basis.jitter
    return out


def model_from_dict(d: dict) -> FittedModel:
    if d.get("format") != FORMAT:
        raise DataError("not a geoadditive model file")
    spec = spec_from_dict(d["spec"])
    layout = {name: slice(lo, hi) for name, (lo, hi) in d["layout"].items()}
    layout["__total__"] = d["num_columns"]
    bases = {
        name: BSplineBasis(lo=b["lo"], hi=b["hi"], num_basis=b["num_basis"], degree=b["degree"])
        for name, b in d["bases"].items()
    }
    centering = {
        name: CenteringTransform(column_means=np.asarray(means, dtype=float))
        for name, means in d["centering"].items()
    }
    penalties = {
        term.name: difference_penalty(term.num_basis, term.penalty_order, term.ridge)
        for term in spec.smooths
    }
    knots = None
    spatial_b = None
    if d.get("knots") is not None:
        k = d["knots"]
        knots = KnotSet(
            knots=np.asarray(k["coordinates"], dtype=float),
            indices=np.asarray(k["indices"], dtype=int),
            selection_seed=k["selection_seed"],
            criterion_value=k["criterion_value"],
        )
        # Prediction only needs the kernel kind, decay and jitter; the
        # training Z block itself is not stored.
        from .spatial import kernel_value
        from scipy.spatial.distance import cdist

        omega = kernel_value(spec.spatial.kind, d["rho"], cdist(knots.knots, knots.knots))
        spatial_b = SpatialBasis(
            Z=np.empty((0, knots.count)),
            omega=0.5 * (omega + omega.T),
            rho=float(d["rho"]),
            kind=spec.spatial.kind,
            jitter=float(d["spatial_jitter"]),
        )
    design = DesignSystem(
        spec=spec,
        C=None,
        layout=layout,
        n=0,
        x_names=tuple(d["x_names"]),
        bases=bases,
        penalties=penalties,
        centering=centering,
        knots=knots,
        spatial_basis=spatial_b,
        rho=d["rho"],
    )
    hyper = HyperState(
        v=np.asarray(d["hyper"]["v"], dtype=float),
        v_rho=d["hyper"]["v_rho"],
        v_phi=d["hyper"]["v_phi"],
    )
    return FittedModel(
        spec=spec,
        design=design,
        xi_hat=np.asarray(d["xi_hat"], dtype=float),
        sigma_chol=np.asarray(d["sigma_chol_lower"], dtype=float),
        hyper=hyper,
        lambdas=hyper.lambdas,
        rho=d["rho"],
        phi=d["phi"],
        tau_shape=d["tau_shape"],
        tau_rate=d["tau_rate"],
        tau_hat=d["tau_hat"],
        laplace={},
        ed_total=d["ed_total"],
        ed_per_term=dict(d["ed_per_term"]),
        bic=d["bic"],
    )


def save_model(model: FittedModel, path, extra_metadata: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model, extra_metadata), fh, indent=1)


def load_model(path) -> FittedModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
