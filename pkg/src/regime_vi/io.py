"""Readers and writers for the on-disk artifacts.

Machine-readable floats are always written with 17 significant digits so
that repeated runs are byte-identical and values round-trip exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import Dataset, FitReport, VariationalPosterior

POSTERIOR_FORMAT = "regime-vi/posterior/1"


def fmt(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    return format(v, ".17g")


def _is_flat(seq):
    return all(not isinstance(v, (list, tuple, dict)) for v in seq)


def dumps_json(obj, indent=2, _level=0) -> str:
    """JSON text with fixed float formatting; flat lists stay on one line."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if _is_flat(obj):
            return "[" + ", ".join(dumps_json(v, indent, _level + 1) for v in obj) + "]"
        items = [pad + dumps_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj)
    if isinstance(obj, (str, np.str_)):
        return json.dumps(str(obj))
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path, obj):
    Path(path).write_text(dumps_json(obj) + "\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_dataset_csv(path, data: Dataset, clusters=None):
    header = [f"x_{i + 1}" for i in range(data.n)] + ["y"]
    if clusters is not None:
        header.append("true_cluster")
    rows = []
    for t in range(data.T):
        row = [float(v) for v in data.x[t]] + [float(data.y[t])]
        if clusters is not None:
            row.append(int(clusters[t]))
        rows.append(row)
    write_csv(path, header, rows)


def read_dataset_csv(path) -> Dataset:
    """Columns ``x_1..x_n, y`` plus an optional, ignored ``true_cluster``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if "y" not in header:
            raise DataError(f"{path}: missing 'y' column")
        xcols = [i for i, h in enumerate(header) if h.startswith("x_")]
        ycol = header.index("y")
        xs, ys = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                xs.append([float(row[i]) for i in xcols])
                ys.append(float(row[ycol]))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if not xcols:
        raise DataError(f"{path}: no x_ columns")
    if not ys:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(xs), np.array(ys))


def posterior_to_dict(report: FitReport, names=None, intercept_index=None) -> dict:
    post = report.posterior
    K = post.K
    phi = post.phi
    hard = np.bincount(np.argmax(phi, axis=1), minlength=K) if phi.size else np.zeros(K, int)
    return {
        "format": POSTERIOR_FORMAT,
        "K": K,
        "n": post.n,
        "feature_names": list(names) if names else [f"x_{i + 1}" for i in range(post.n)],
        "intercept_index": intercept_index,
        "elbo": report.elbo,
        "converged": report.converged,
        "sweeps": report.sweeps,
        "restart_index": report.restart_index,
        "seed": report.seed,
        "phi_summary": {
            "T": int(phi.shape[0]),
            "mean_responsibility": phi.mean(axis=0).tolist() if phi.size else [0.0] * K,
            "hard_counts": hard.tolist(),
        },
        "clusters": [
            {
                "mu_hat": post.mu_hat[k].tolist(),
                "R_hat": post.R_hat[k].tolist(),
                "beta_hat": post.beta_hat[k].tolist(),
                "Q_hat": post.Q_hat[k].tolist(),
            }
            for k in range(K)
        ],
    }


def load_posterior(path):
    """Returns ``(VariationalPosterior, document)``; ``phi`` is not stored, so
    the returned posterior has zero rows of responsibilities."""
    try:
        doc = json.loads(Path(path).read_text())
        clusters = doc["clusters"]
        post = VariationalPosterior(
            phi=np.zeros((0, len(clusters))),
            mu_hat=np.array([c["mu_hat"] for c in clusters], dtype=np.float64),
            R_hat=np.array([c["R_hat"] for c in clusters], dtype=np.float64),
            beta_hat=np.array([c["beta_hat"] for c in clusters], dtype=np.float64),
            Q_hat=np.array([c["Q_hat"] for c in clusters], dtype=np.float64),
        )
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: not a posterior file ({exc})") from None
    return post, doc


def write_backtest(out_dir, result, names=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    K = result.probs.shape[1]
    write_csv(
        out / "predictions.csv",
        ["date", "pred_mean", "actual"] + [f"q{k + 1}" for k in range(K)],
        [
            [str(d), float(p), float(a)] + [float(q) for q in qs]
            for d, p, a, qs in zip(result.dates, result.predicted, result.actual, result.probs)
        ],
    )
    write_csv(
        out / "scatter.csv",
        ["predicted", "actual"],
        [[float(p), float(a)] for p, a in zip(result.predicted, result.actual)],
    )
    metrics = dict(result.metrics)
    metrics["failed_dates"] = [str(d) for d in result.failed_dates]
    write_json(out / "metrics.json", metrics)
    write_json(
        out / "tercile.json",
        {
            "rows": ["pred_low", "pred_mid", "pred_high"],
            "columns": ["actual_low", "actual_mid", "actual_high"],
            "percent": result.tercile.tolist(),
        },
    )


def read_predictions_csv(path):
    """``(dates, predicted, actual)`` from a predictions CSV."""
    dates, pred, actual = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            dates.append(row["date"])
            pred.append(float(row["pred_mean"]))
            actual.append(float(row["actual"]))
    return np.array(dates, dtype="datetime64[D]"), np.array(pred), np.array(actual)
