"""Versioned JSON model artifacts."""
from __future__ import annotations

import json
import math

import numpy as np

from .errors import ConfigError
from .fit import FittedModel
from .model import ModelSpec

FORMAT_VERSION = 1
KIND = "saegamlss.model"


def _plain(o):
    if isinstance(o, dict):
        return {str(k): _plain(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_plain(v) for v in o]
    if isinstance(o, np.ndarray):
        return [_plain(v) for v in o.tolist()]
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        f = float(o)
        return f if math.isfinite(f) else None
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def model_to_dict(model: FittedModel, meta: dict | None = None) -> dict:
    return _plain({
        "format_version": FORMAT_VERSION,
        "kind": KIND,
        "spec": model.spec.to_dict(),
        "meta": meta or {},
        "areas": model.areas,
        "levels": model.levels,
        "columns": model.columns,
        "beta": model.beta,
        "gamma": model.gamma,
        "sigma2": model.sigma2,
        "nu": model.nu,
        "gdev": model.gdev,
        "df": model.df,
        "n": model.n,
        "converged": model.converged,
        "trace": list(model.trace),
        "n_outer": model.n_outer,
        "method": model.method,
        "notes": list(model.notes),
    })


def model_from_dict(d: dict) -> tuple[FittedModel, dict]:
    if d.get("kind") != KIND:
        raise ConfigError("not a model artifact")
    if d.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported artifact format_version {d.get('format_version')!r}")
    spec = ModelSpec.from_dict(d["spec"])
    arr = lambda v: np.asarray(v, dtype=float)
    model = FittedModel(
        spec=spec,
        beta={k: arr(v) for k, v in d["beta"].items()},
        gamma={k: arr(v) for k, v in d["gamma"].items()},
        sigma2={k: float(v) for k, v in d["sigma2"].items()},
        nu={k: float(v) for k, v in d["nu"].items()},
        areas=np.asarray(d["areas"]),
        columns={k: list(v) for k, v in d["columns"].items()},
        levels={k: list(v) for k, v in d["levels"].items()},
        gdev=float(d["gdev"]),
        df=float(d["df"]),
        n=int(d["n"]),
        converged=bool(d["converged"]),
        trace=tuple(float(v) for v in d["trace"]),
        n_outer=int(d["n_outer"]),
        method=d.get("method", "RS"),
        notes=tuple(d.get("notes", ())),
    )
    return model, d.get("meta", {})


def save_model(model: FittedModel, path: str, meta: dict | None = None):
    from .simulate import atomic_write

    atomic_write(path, json.dumps(model_to_dict(model, meta), indent=1))


def load_model(path: str) -> tuple[FittedModel, dict]:
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return model_from_dict(d)
