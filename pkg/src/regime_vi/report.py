"""Plain-text tables for people: cluster centres, regression vectors and the
predicted-vs-actual tercile matrix."""

from __future__ import annotations

import numpy as np

# (max, min) decimals per table; see _num
CENTER_DECIMALS = (4, 1)
BETA_DECIMALS = (2, 2)

TERCILE_ROWS = ("Predicted decrease", "Predicted unchanged", "Predicted increase")
TERCILE_COLS = ("Actual decreased", "Actual unchanged", "Actual increased")


def _table(header, rows):
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = []
    for r in [header] + rows:
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _num(v, decimals):
    """Round to ``decimals[0]`` places, drop trailing zeros down to
    ``decimals[1]`` places, and print integral results without a point."""
    hi, lo = decimals
    r = round(float(v), hi)
    if r == int(r):
        return str(int(r))
    s = f"{r:.{hi}f}"
    while hi > lo and s.endswith("0"):
        s, hi = s[:-1], hi - 1
    return s


def render_cluster_centers(mu_hat, names, decimals=CENTER_DECIMALS):
    mu_hat = np.asarray(mu_hat)
    header = ["Variable"] + [f"Cluster {k + 1} (mu_hat_{k + 1})" for k in range(mu_hat.shape[0])]
    rows = [[name] + [_num(v, decimals) for v in mu_hat[:, i]] for i, name in enumerate(names)]
    return _table(header, rows)


def render_regression_table(beta_hat, names, decimals=BETA_DECIMALS):
    beta_hat = np.asarray(beta_hat)
    header = ["Variable"] + [f"Cluster {k + 1} (beta_hat_{k + 1})" for k in range(beta_hat.shape[0])]
    rows = [[name] + [_num(v, decimals) for v in beta_hat[:, i]] for i, name in enumerate(names)]
    return _table(header, rows)


def render_tercile_table(percent):
    percent = np.asarray(percent)
    header = [""] + list(TERCILE_COLS)
    rows = [[TERCILE_ROWS[i]] + [f"{v:.2f}%" for v in percent[i]] for i in range(3)]
    return _table(header, rows)


def render_report(doc: dict) -> str:
    """Human-readable summary of a posterior document (see ``io.posterior_to_dict``)."""
    clusters = doc["clusters"]
    mu = np.array([c["mu_hat"] for c in clusters])
    beta = np.array([c["beta_hat"] for c in clusters])
    names = doc.get("feature_names") or [f"x_{i + 1}" for i in range(mu.shape[1])]
    out = [f"Clusters: {doc['K']}   inputs: {doc['n']}"]
    if "elbo" in doc:
        out.append(
            f"ELBO: {doc['elbo']:.4f}   converged: {doc.get('converged')}   "
            f"sweeps: {doc.get('sweeps')}   restart: {doc.get('restart_index')}"
        )
    summary = doc.get("phi_summary")
    if summary and summary.get("T"):
        w = "  ".join(f"{v:.4f}" for v in summary["mean_responsibility"])
        out.append(f"Mean responsibility: {w}")
        out.append(f"Hard assignment counts: {'  '.join(str(c) for c in summary['hard_counts'])}")
    out += ["", "Explanatory variable cluster centers", render_cluster_centers(mu, names)]
    out += ["", "Regression parameter estimates", render_regression_table(beta, names)]
    return "\n".join(out) + "\n"
