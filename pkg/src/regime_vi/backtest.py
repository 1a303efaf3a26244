"""Market feature construction, rolling fit/predict loop and forecast metrics.

Row ``t`` of a feature matrix holds inputs known at the close of day ``t``
and, as its target, the z-scored S&P return from ``t`` to ``t + 1``.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import betainc

from .cavi import FitOptions, fit, worker_count
from .errors import DataError, FitError, CholeskyError, ValidationError
from .model import Dataset, Hyperparameters
from .predictor import mixture_mean, predictive_mixture

log = logging.getLogger(__name__)

FEATURE_NAMES = ("spx_1d_z", "agg_5d_z", "jpy_vol_diff", "const")
SHORT_VOL_DAYS = 5
AGG_HORIZON = 5


@dataclass(frozen=True, eq=False)
class MarketSeries:
    name: str
    dates: np.ndarray  # datetime64[D], strictly increasing
    closes: np.ndarray

    def __len__(self):
        return self.dates.shape[0]


def load_series_csv(path, name=None) -> MarketSeries:
    """Read a ``date,close`` CSV (optional header) into a sorted series."""
    dates, closes = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if lineno == 1 and row[0].strip().lower() == "date":
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                d = dt.date.fromisoformat(row[0].strip())
                c = float(row[1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: malformed row {row!r} ({exc})") from None
            if not np.isfinite(c) or c <= 0:
                raise DataError(f"{path}:{lineno}: close must be positive, got {row[1]!r}")
            dates.append(d)
            closes.append(c)
    if not dates:
        raise DataError(f"{path}: no data rows")
    d = np.array(dates, dtype="datetime64[D]")
    order = np.argsort(d, kind="stable")
    d, c = d[order], np.array(closes)[order]
    dup = np.flatnonzero(d[1:] == d[:-1])
    if dup.size:
        raise DataError(f"{path}: duplicate date {d[dup[0]]}")
    return MarketSeries(name=name or str(path), dates=d, closes=c)


def trailing_zscore(values, window):
    """z-score of each value against the ``window`` values strictly before it.

    Uses the sample standard deviation.  Entries without a full window of
    finite history are NaN; a zero-std window yields 0.  Returns
    ``(z, zero_std_count)``.
    """
    v = np.asarray(values, dtype=np.float64)
    z = np.full_like(v, np.nan)
    if v.shape[0] <= window:
        return z, 0
    W = sliding_window_view(v, window)[:-1]  # W[j] = v[j : j + window] predicts v[j + window]
    mean = W.mean(axis=1)
    std = W.std(axis=1, ddof=1)
    cur = v[window:]
    zero = std == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(zero, 0.0, (cur - mean) / np.where(zero, 1.0, std))
    out[~np.isfinite(mean) | ~np.isfinite(cur)] = np.nan
    z[window:] = out
    return z, int(np.sum(zero & np.isfinite(mean) & np.isfinite(cur)))


def _trailing_std(values, length):
    """Sample std of the ``length`` values ending at (and including) each index."""
    v = np.asarray(values, dtype=np.float64)
    s = np.full_like(v, np.nan)
    if v.shape[0] >= length:
        s[length - 1 :] = sliding_window_view(v, length).std(axis=1, ddof=1)
    return s


def _change(closes, lag, log_returns):
    out = np.full(closes.shape[0], np.nan)
    ratio = closes[lag:] / closes[:-lag]
    out[lag:] = np.log(ratio) if log_returns else ratio - 1.0
    return out


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    dates: np.ndarray
    x: np.ndarray
    y: np.ndarray
    window: int = 250
    names: tuple = FEATURE_NAMES
    zero_std_count: int = 0

    def __len__(self):
        return self.x.shape[0]

    @property
    def dataset(self):
        return Dataset(self.x, self.y)


def build_features(
    spx: MarketSeries,
    agg: MarketSeries,
    jpyusd: MarketSeries,
    window: int = 250,
    log_returns: bool = False,
) -> FeatureMatrix:
    """Inputs ``[spx_1d_z, agg_5d_z, jpy_vol_diff, 1]`` and target
    next-day S&P return z-score, on the common trading dates."""
    if window < SHORT_VOL_DAYS + 1:
        raise ValidationError(f"window must exceed {SHORT_VOL_DAYS}", field="window")
    dates = np.intersect1d(np.intersect1d(spx.dates, agg.dates), jpyusd.dates)
    N = dates.shape[0]
    # first row needs window returns of 5-day AGG changes; last row needs the next close
    if N < window + AGG_HORIZON + 2:
        raise DataError(
            f"insufficient overlap: {N} common dates, need at least {window + AGG_HORIZON + 2} "
            f"for window={window}"
        )

    def aligned(s):
        return s.closes[np.searchsorted(s.dates, dates)]

    p_spx, p_agg, p_jpy = aligned(spx), aligned(agg), aligned(jpyusd)
    r_spx = _change(p_spx, 1, log_returns)
    r_agg = _change(p_agg, AGG_HORIZON, log_returns)
    r_jpy = _change(p_jpy, 1, log_returns)

    z_spx, n0 = trailing_zscore(r_spx, window)
    z_agg, n1 = trailing_zscore(r_agg, window)
    vol_diff = _trailing_std(r_jpy, SHORT_VOL_DAYS) - _trailing_std(r_jpy, window)

    rows = np.arange(window + AGG_HORIZON, N - 1)
    x = np.column_stack([z_spx[rows], z_agg[rows], vol_diff[rows], np.ones(rows.size)])
    y = z_spx[rows + 1]
    zero = n0 + n1
    if zero:
        log.warning("%d trailing windows had zero std; z set to 0", zero)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DataError("non-finite feature values")
    return FeatureMatrix(dates=dates[rows], x=x, y=y, window=window, zero_std_count=zero)


@dataclass(frozen=True, eq=False)
class BacktestResult:
    dates: np.ndarray
    predicted: np.ndarray
    actual: np.ndarray
    probs: np.ndarray  # (m, K) predictive cluster probabilities
    metrics: dict
    tercile: np.ndarray
    failed_dates: list = field(default_factory=list)


def rolling_backtest(
    fm: FeatureMatrix,
    h: Hyperparameters,
    fit_opts: FitOptions = FitOptions(),
    refit_every: int = 1,
    threads: int = 1,
) -> BacktestResult:
    """Fit on the trailing ``fm.window`` rows strictly before each test row,
    then forecast that row's target from its inputs alone."""
    W = fm.window
    m = len(fm)
    if m < W + 1:
        raise ValidationError(f"need at least window+1={W + 1} rows, have {m}", field="window")
    if refit_every < 1:
        raise ValidationError("refit_every must be >= 1", field="refit_every")

    fit_rows = list(range(W, m, refit_every))

    def fit_at(i):
        train = Dataset(fm.x[i - W : i], fm.y[i - W : i])
        try:
            return fit(train, h, fit_opts).posterior
        except (FitError, CholeskyError) as exc:
            log.warning("fit for %s failed: %s", fm.dates[i], exc)
            return exc

    workers = worker_count(threads)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            posts = list(pool.map(fit_at, fit_rows))
    else:
        posts = [fit_at(i) for i in fit_rows]

    keep, pred, probs, failed = [], [], [], []
    for j, i0 in enumerate(fit_rows):
        post = posts[j]
        for i in range(i0, min(i0 + refit_every, m)):
            if isinstance(post, Exception):
                failed.append(fm.dates[i])
                continue
            mix = predictive_mixture(fm.x[i], post, h)
            keep.append(i)
            pred.append(mixture_mean(mix))
            probs.append(mix.weights)
    if failed:
        log.warning("%d test dates skipped after failed fits", len(failed))
    keep = np.array(keep, dtype=np.int64)
    predicted = np.array(pred)
    actual = fm.y[keep]
    return BacktestResult(
        dates=fm.dates[keep],
        predicted=predicted,
        actual=actual,
        probs=np.array(probs).reshape(len(keep), h.K),
        metrics=pearson_metrics(predicted, actual),
        tercile=tercile_table(predicted, actual),
        failed_dates=failed,
    )


def pearson_metrics(pred, actual):
    """Pearson correlation with a two-sided Student-t p-value."""
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(actual, dtype=np.float64)
    m = a.shape[0]
    if b.shape[0] != m:
        raise ValidationError("pred and actual differ in length", field="actual")
    if m < 3:
        raise ValidationError("need at least 3 observations", field="pred")
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.sqrt(da @ da), np.sqrt(db @ db)
    if na == 0 or nb == 0:
        raise ValidationError("constant input vector", field="pred" if na == 0 else "actual")
    r = float(np.clip((da @ db) / (na * nb), -1.0, 1.0))
    df = m - 2
    if abs(r) == 1.0:
        p = 0.0
    else:
        t2 = r * r * df / (1.0 - r * r)
        p = float(betainc(0.5 * df, 0.5, df / (df + t2)))
    return {"pearson_r": r, "r_squared": r * r, "p_value": p, "n": int(m)}


def tercile_buckets(values):
    """Equal-count buckets 0/1/2 by rank; ties keep original order and any
    remainder goes to the middle bucket."""
    v = np.asarray(values, dtype=np.float64)
    m = v.shape[0]
    q = m // 3
    order = np.argsort(v, kind="stable")
    labels = np.empty(m, dtype=np.int64)
    labels[order[:q]] = 0
    labels[order[q : m - q]] = 1
    labels[order[m - q :]] = 2
    return labels


def tercile_counts(pred, actual):
    pred = np.asarray(pred)
    if pred.shape[0] < 9:
        raise ValidationError("tercile table needs at least 9 observations", field="pred")
    if np.asarray(actual).shape[0] != pred.shape[0]:
        raise ValidationError("pred and actual differ in length", field="actual")
    counts = np.zeros((3, 3), dtype=np.int64)
    np.add.at(counts, (tercile_buckets(pred), tercile_buckets(actual)), 1)
    return counts


def tercile_table(pred, actual):
    """Row ``i`` gives the percentage of predicted-bucket-``i`` observations
    landing in each actual bucket (low, mid, high)."""
    counts = tercile_counts(pred, actual)
    return 100.0 * counts / counts.sum(axis=1, keepdims=True)


def feature_matrix_from_dataset(data: Dataset, window: int, start: str = "2000-01-03",
                                names=None) -> FeatureMatrix:
    """Wrap an arbitrary dataset (e.g. a synthetic one) as a feature matrix on
    consecutive business days starting at ``start``."""
    dates = np.busday_offset(np.datetime64(start, "D"), np.arange(data.T), roll="forward")
    names = tuple(names) if names else tuple(f"x_{i + 1}" for i in range(data.n))
    return FeatureMatrix(dates=dates, x=data.x, y=data.y, window=window, names=names)
