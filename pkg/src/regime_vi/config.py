"""JSON run configuration: hyperparameters plus fit/backtest/predict options.

Any key may be omitted; defaults are filled from ``K`` and ``n``.  Prior
vectors and matrices may be given once (shared by all clusters) or as a
per-cluster list.  Unknown keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .cavi import FitOptions
from .errors import ConfigError, ValidationError
from .model import Hyperparameters, validate_hyperparameters

_num = {"type": "number"}
_vec = {"type": "array", "items": _num, "minItems": 1}
_mat = {"type": "array", "items": _vec, "minItems": 1}
_vec_or_stack = {"anyOf": [_vec, {"type": "array", "items": _vec, "minItems": 1}]}
_mat_or_stack = {"anyOf": [_mat, {"type": "array", "items": _mat, "minItems": 1}]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "K": {"type": "integer", "minimum": 1},
        "n": {"type": "integer", "minimum": 1},
        "intercept_index": {"type": ["integer", "null"], "minimum": 0},
        "sigma": {"type": "number", "exclusiveMinimum": 0},
        "pi": _vec,
        "M": _mat,
        "mu0": _vec_or_stack,
        "R0": _mat_or_stack,
        "beta0": _vec_or_stack,
        "Q0": _mat_or_stack,
        "fit": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_sweeps": {"type": "integer", "minimum": 1},
                "rel_tol": {"type": "number", "exclusiveMinimum": 0},
                "restarts": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "threads": {"type": "integer", "minimum": 1},
            },
        },
        "backtest": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "window": {"type": "integer", "minimum": 6},
                "refit_every": {"type": "integer", "minimum": 1},
                "log_returns": {"type": "boolean"},
                "threads": {"type": "integer", "minimum": 1},
            },
        },
        "predict": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
    },
}


@dataclass(frozen=True)
class BacktestOptions:
    window: int = 250
    refit_every: int = 1
    log_returns: bool = False
    threads: int = 1


@dataclass(frozen=True, eq=False)
class Config:
    h: Hyperparameters
    fit: FitOptions = field(default_factory=FitOptions)
    backtest: BacktestOptions = field(default_factory=BacktestOptions)
    alpha: float = 0.05


def _pointer(path):
    return "/" + "/".join(str(p) for p in path) if path else ""


def _field_pointer(name):
    # "R0[1]" -> "/R0/1"
    return "/" + name.replace("[", "/").replace("]", "")


def _per_cluster(value, K, ndim, key):
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == ndim:
        return np.stack([arr] * K)
    if arr.ndim == ndim + 1:
        if arr.shape[0] != K:
            raise ConfigError(f"expected {K} per-cluster entries, got {arr.shape[0]}", "/" + key)
        return arr
    raise ConfigError("ragged or wrongly nested array", "/" + key)


def config_from_dict(doc: dict) -> Config:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, _pointer(err.absolute_path))

    K = doc.get("K", 3)
    n = doc.get("n", 4)
    icpt = doc.get("intercept_index", n - 1)
    if icpt is not None and icpt >= n:
        raise ConfigError(f"intercept_index must be < n={n}", "/intercept_index")
    base = Hyperparameters.default(K, n, intercept_index=icpt)

    try:
        pi = np.asarray(doc.get("pi", base.pi), dtype=np.float64)
        M = np.asarray(doc.get("M", base.M), dtype=np.float64)
        h = Hyperparameters(
            K=K,
            n=n,
            pi=pi,
            sigma=doc.get("sigma", 1.0),
            M=M,
            mu0=_per_cluster(doc["mu0"], K, 1, "mu0") if "mu0" in doc else base.mu0,
            R0=_per_cluster(doc["R0"], K, 2, "R0") if "R0" in doc else base.R0,
            beta0=_per_cluster(doc["beta0"], K, 1, "beta0") if "beta0" in doc else base.beta0,
            Q0=_per_cluster(doc["Q0"], K, 2, "Q0") if "Q0" in doc else base.Q0,
            intercept_index=icpt,
        )
        h = validate_hyperparameters(h)
    except ConfigError:
        raise
    except ValidationError as exc:
        raise ConfigError(str(exc), _field_pointer(exc.field or "")) from None
    except ValueError as exc:  # ragged arrays
        raise ConfigError(str(exc)) from None

    fopts = doc.get("fit", {})
    bopts = doc.get("backtest", {})
    return Config(
        h=h,
        fit=FitOptions(**fopts),
        backtest=BacktestOptions(**bopts),
        alpha=doc.get("predict", {}).get("alpha", 0.05),
    )


def parse_config(path) -> Config:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("top level must be an object")
    return config_from_dict(doc)


def config_to_dict(cfg: Config) -> dict:
    """Fully explicit form; ``config_from_dict(config_to_dict(c))`` equals ``c``."""
    h = cfg.h
    return {
        "K": h.K,
        "n": h.n,
        "intercept_index": h.intercept_index,
        "sigma": h.sigma,
        "pi": h.pi.tolist(),
        "M": h.M.tolist(),
        "mu0": h.mu0.tolist(),
        "R0": h.R0.tolist(),
        "beta0": h.beta0.tolist(),
        "Q0": h.Q0.tolist(),
        "fit": {
            "max_sweeps": cfg.fit.max_sweeps,
            "rel_tol": cfg.fit.rel_tol,
            "restarts": cfg.fit.restarts,
            "seed": cfg.fit.seed,
            "threads": cfg.fit.threads,
        },
        "backtest": {
            "window": cfg.backtest.window,
            "refit_every": cfg.backtest.refit_every,
            "log_returns": cfg.backtest.log_returns,
            "threads": cfg.backtest.threads,
        },
        "predict": {"alpha": cfg.alpha},
    }

