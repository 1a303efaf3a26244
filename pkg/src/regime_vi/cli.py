"""Command-line entry point: ``regime-vi <subcommand>``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .backtest import build_features, load_series_csv, rolling_backtest
from .cavi import fit
from .config import config_from_dict, config_to_dict, parse_config
from .errors import CholeskyError, ConfigError, DataError, FitError, ValidationError
from .generator import sample_dataset
from .model import validate_dataset
from .predictor import predict
from .report import render_report, render_tercile_table

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("regime_vi")


def cmd_simulate(args):
    cfg = parse_config(args.config)
    syn = sample_dataset(cfg.h, args.T, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_dataset_csv(out / "dataset.csv", syn.dataset, syn.true_assignments)
    io.write_json(
        out / "truth.json",
        {
            "seed": syn.seed,
            "T": syn.dataset.T,
            "K": cfg.h.K,
            "n": cfg.h.n,
            "true_mu": syn.true_mu.tolist(),
            "true_beta": syn.true_beta.tolist(),
            "cluster_counts": np.bincount(syn.true_assignments, minlength=cfg.h.K).tolist(),
        },
    )
    print(f"wrote {syn.dataset.T} rows to {out / 'dataset.csv'}")


def run_fit(cfg, data_csv, out_dir):
    data = io.read_dataset_csv(data_csv)
    validate_dataset(data, cfg.h)
    rep = fit(data, cfg.h, cfg.fit)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = io.posterior_to_dict(rep, intercept_index=cfg.h.intercept_index)
    io.write_json(out / "posterior.json", doc)
    io.write_csv(out / "elbo_trace.csv", ["sweep", "elbo"], [[i + 1, e] for i, e in enumerate(rep.elbo_trace)])
    text = render_report(doc)
    (out / "report.txt").write_text(text)
    return rep, text


def cmd_fit(args):
    cfg = parse_config(args.config)
    _, text = run_fit(cfg, args.data, args.out)
    print(text, end="")


def run_predict(cfg, posterior_json, x_values):
    post, _ = io.load_posterior(posterior_json)
    if post.K != cfg.h.K or post.n != cfg.h.n:
        raise ConfigError(
            f"posterior has K={post.K}, n={post.n}; config has K={cfg.h.K}, n={cfg.h.n}", "/K"
        )
    try:
        x = np.array([float(v) for v in x_values.split(",")])
    except ValueError as exc:
        raise DataError(f"bad --x value: {exc}") from None
    pr = predict(x, post, cfg.h, alpha=cfg.alpha)
    return {
        "weights": pr.mixture.weights.tolist(),
        "means": pr.mixture.means.tolist(),
        "variances": pr.mixture.variances.tolist(),
        "mean": pr.mean,
        "variance": pr.variance,
        "alpha": pr.alpha,
        "interval": list(pr.interval),
    }


def cmd_predict(args):
    print(io.dumps_json(run_predict(parse_config(args.config), args.posterior, args.x)))


def run_backtest(cfg, spx_csv, agg_csv, jpy_csv, out_dir):
    if cfg.h.n != 4 or cfg.h.intercept_index != 3:
        raise ConfigError("backtest features need n=4 with intercept_index=3", "/n")
    b = cfg.backtest
    fm = build_features(
        load_series_csv(spx_csv, "spx"),
        load_series_csv(agg_csv, "agg"),
        load_series_csv(jpy_csv, "jpyusd"),
        window=b.window,
        log_returns=b.log_returns,
    )
    result = rolling_backtest(fm, cfg.h, cfg.fit, refit_every=b.refit_every, threads=b.threads)
    io.write_backtest(out_dir, result)
    return result


def cmd_backtest(args):
    cfg = parse_config(args.config)
    result = run_backtest(cfg, args.spx, args.agg, args.jpy, args.out)
    m = result.metrics
    print(
        f"{len(result.predicted)} forecasts, {len(result.failed_dates)} skipped; "
        f"r={m['pearson_r']:.4f} R2={m['r_squared']:.4f} p={m['p_value']:.4g}"
    )
    print(render_tercile_table(result.tercile))


def cmd_report(args):
    _, doc = io.load_posterior(args.posterior)
    print(render_report(doc), end="")
    if args.tercile:
        tdoc = json.loads(Path(args.tercile).read_text())
        print()
        print(render_tercile_table(tdoc["percent"]))


def cmd_defaults(args):
    print(io.dumps_json(config_to_dict(config_from_dict({}))))


def build_parser():
    p = argparse.ArgumentParser(prog="regime-vi", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="sample a synthetic dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("-T", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", help="run CAVI on a dataset CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("predict", help="predictive density for one input vector")
    s.add_argument("--config", required=True)
    s.add_argument("--posterior", required=True)
    s.add_argument("--x", required=True, help="comma-separated input values")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("backtest", help="rolling fit/predict on market closes")
    s.add_argument("--config", required=True)
    s.add_argument("--spx", required=True)
    s.add_argument("--agg", required=True)
    s.add_argument("--jpy", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_backtest)

    s = sub.add_parser("report", help="render cluster tables from a posterior")
    s.add_argument("--posterior", required=True)
    s.add_argument("--tercile", help="tercile.json from a backtest")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("defaults", help="print the fully explicit default config")
    s.set_defaults(func=cmd_defaults)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.ERROR,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ValidationError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, CholeskyError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
