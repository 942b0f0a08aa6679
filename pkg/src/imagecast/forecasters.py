"""The pool of point-forecast methods and forecast CSV interchange."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .series import (
    TimeSeries,
    seasonal_decompose,
    seasonality_test,
    reseasonalize,
)

logger = logging.getLogger(__name__)

IN_REPO_METHODS = ("naive", "snaive", "rw_drift", "theta", "ets", "stl_ar", "naive2")
EXTERNAL_PREFIX = "external:"

ALPHA_BOUNDS = (1e-4, 1.0 - 1e-4)
DAMPING_BOUNDS = (0.8, 0.98)
THETA_ALPHA_FALLBACK = 0.5
AR_MAX_ORDER = 5


class ForecastError(ValueError):
    """A method's preconditions cannot be met and no fallback applies."""


@dataclass
class ForecastSet:
    """Point forecasts of one method for one series.

    ``fallback`` names the documented fallback taken, if any (e.g. a
    seasonal method on too short a series reverting to naive).
    """

    series_id: str
    method_id: str
    horizon: int
    values: np.ndarray
    fallback: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.size != self.horizon:
            raise ForecastError(
                f"{self.series_id}/{self.method_id}: got {self.values.size} "
                f"values for horizon {self.horizon}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ForecastError(
                f"{self.series_id}/{self.method_id}: non-finite forecast"
            )


# ---------------------------------------------------------------------------
# simple benchmarks
# ---------------------------------------------------------------------------


def naive(values: np.ndarray, horizon: int) -> np.ndarray:
    """Repeat the last observation."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 1:
        raise ForecastError("naive needs at least one observation")
    return np.full(horizon, values[-1])


def snaive(values: np.ndarray, period: int, horizon: int) -> tuple[np.ndarray, str | None]:
    """Repeat the observation from the same phase one cycle back, cycling.

    Falls back to naive (flagged) when fewer than one full cycle exists.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n < period:
        return naive(values, horizon), "snaive: series shorter than one cycle"
    k = np.arange(horizon)
    return values[n - period + (k % period)], None


def rw_drift(values: np.ndarray, horizon: int) -> np.ndarray:
    """Random walk with drift: extend the first-to-last straight line."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n < 2:
        raise ForecastError("rw_drift needs at least 2 observations")
    drift = (values[-1] - values[0]) / (n - 1)
    return values[-1] + drift * np.arange(1, horizon + 1)


# ---------------------------------------------------------------------------
# simple exponential smoothing plumbing (used by theta and ets)
# ---------------------------------------------------------------------------


def ses_level(values: np.ndarray, alpha: float) -> float:
    """Final level of simple exponential smoothing started at the first value."""
    level = values[0]
    for v in values[1:]:
        level = alpha * v + (1.0 - alpha) * level
    return float(level)


def ses_sse(values: np.ndarray, alpha: float) -> float:
    """One-step-ahead squared error of SES (first step is error-free by init)."""
    level = values[0]
    sse = 0.0
    for v in values[1:]:
        err = v - level
        sse += err * err
        level = alpha * v + (1.0 - alpha) * level
    return sse


def _optimize_alpha(values: np.ndarray) -> float | None:
    try:
        res = optimize.minimize_scalar(
            lambda a: ses_sse(values, a),
            bounds=ALPHA_BOUNDS,
            method="bounded",
            options={"xatol": 1e-8},
        )
    except Exception:  # pragma: no cover - scipy failure is environment noise
        return None
    if not res.success or not np.isfinite(res.x):
        return None
    return float(res.x)


# ---------------------------------------------------------------------------
# theta
# ---------------------------------------------------------------------------


def _theta_core(values: np.ndarray, horizon: int) -> tuple[np.ndarray, str | None]:
    n = values.size
    t = np.arange(1.0, n + 1.0)
    slope, intercept = np.polyfit(t, values, 1)
    trend_out = intercept + slope * np.arange(n + 1.0, n + horizon + 1.0)
    # theta=2 line: doubles deviations from the fitted straight line.
    qline = 2.0 * values - (intercept + slope * t)
    alpha = _optimize_alpha(qline)
    flag = None
    if alpha is None:
        alpha = THETA_ALPHA_FALLBACK
        flag = "theta: alpha optimizer failed, using 0.5"
    level = ses_level(qline, alpha)
    return 0.5 * trend_out + 0.5 * level, flag


def theta(values: np.ndarray, period: int, horizon: int) -> tuple[np.ndarray, str | None]:
    """Classic two-line theta: half trend extrapolation, half SES of the
    theta=2 line, on the seasonally adjusted series when seasonality tests
    significant."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise ForecastError("theta needs at least 2 observations")
    ts = TimeSeries("_", values, period, max(1, horizon))
    if period > 1 and seasonality_test(ts):
        dec = seasonal_decompose(ts)
        fc, flag = _theta_core(dec.adjusted.values, horizon)
        return reseasonalize(fc, dec.indices, values.size, dec.additive), flag
    return _theta_core(values, horizon)


# ---------------------------------------------------------------------------
# ets (additive error-trend-season subset with AICc selection)
# ---------------------------------------------------------------------------


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _to_bounds(z: float, lo: float, hi: float) -> float:
    return lo + (hi - lo) * _sigmoid(z)


def _from_bounds(p: float, lo: float, hi: float) -> float:
    q = min(max((p - lo) / (hi - lo), 1e-9), 1.0 - 1e-9)
    return math.log(q / (1.0 - q))


def _ses_run(y, alpha):
    level = y[0]
    sse = 0.0
    for v in y[1:]:
        err = v - level
        sse += err * err
        level = alpha * v + (1.0 - alpha) * level
    return sse, (level,)


def _holt_run(y, alpha, beta, phi=1.0):
    level = y[0]
    trend = y[1] - y[0]
    sse = 0.0
    for v in y[1:]:
        pred = level + phi * trend
        err = v - pred
        sse += err * err
        new_level = alpha * v + (1.0 - alpha) * pred
        trend = beta * (new_level - level) + (1.0 - beta) * phi * trend
        level = new_level
    return sse, (level, trend)


def _hw_run(y, m, alpha, beta, gamma):
    season = y[:m] - y[:m].mean()
    level = float(y[:m].mean())
    trend = (float(y[m : 2 * m].mean()) - level) / m
    season = list(season)
    sse = 0.0
    for i in range(m, y.size):
        s_old = season[i - m]
        pred = level + trend + s_old
        err = y[i] - pred
        sse += err * err
        new_level = alpha * (y[i] - s_old) + (1.0 - alpha) * (level + trend)
        trend = beta * (new_level - level) + (1.0 - beta) * trend
        season.append(gamma * (y[i] - new_level) + (1.0 - gamma) * s_old)
        level = new_level
    return sse, (level, trend, np.array(season[-m:]))


def _ets_candidates(y: np.ndarray, m: int):
    """Yield (name, n_params, fit) where fit() -> (sse, forecast_fn)."""
    n = y.size

    def fit_ses():
        def obj(z):
            return _ses_run(y, _to_bounds(z[0], *ALPHA_BOUNDS))[0]

        z = _simplex_min(obj, [[_from_bounds(a, *ALPHA_BOUNDS)] for a in (0.2, 0.7)])
        alpha = _to_bounds(z[0], *ALPHA_BOUNDS)
        sse, (level,) = _ses_run(y, alpha)
        return sse, lambda h: np.full(h, level)

    yield "ses", 3, fit_ses

    if n >= 4:

        def fit_holt():
            def obj(z):
                return _holt_run(
                    y, _to_bounds(z[0], *ALPHA_BOUNDS), _to_bounds(z[1], *ALPHA_BOUNDS)
                )[0]

            z = _simplex_min(
                obj,
                [
                    [_from_bounds(0.3, *ALPHA_BOUNDS), _from_bounds(0.1, *ALPHA_BOUNDS)],
                    [_from_bounds(0.7, *ALPHA_BOUNDS), _from_bounds(0.05, *ALPHA_BOUNDS)],
                ],
            )
            alpha = _to_bounds(z[0], *ALPHA_BOUNDS)
            beta = _to_bounds(z[1], *ALPHA_BOUNDS)
            sse, (level, trend) = _holt_run(y, alpha, beta)
            return sse, lambda h: level + trend * np.arange(1.0, h + 1.0)

        def fit_damped():
            def obj(z):
                return _holt_run(
                    y,
                    _to_bounds(z[0], *ALPHA_BOUNDS),
                    _to_bounds(z[1], *ALPHA_BOUNDS),
                    _to_bounds(z[2], *DAMPING_BOUNDS),
                )[0]

            z = _simplex_min(
                obj,
                [
                    [
                        _from_bounds(0.3, *ALPHA_BOUNDS),
                        _from_bounds(0.1, *ALPHA_BOUNDS),
                        _from_bounds(0.95, *DAMPING_BOUNDS),
                    ]
                ],
            )
            alpha = _to_bounds(z[0], *ALPHA_BOUNDS)
            beta = _to_bounds(z[1], *ALPHA_BOUNDS)
            phi = _to_bounds(z[2], *DAMPING_BOUNDS)
            sse, (level, trend) = _holt_run(y, alpha, beta, phi)

            def fc(h):
                damp = np.cumsum(phi ** np.arange(1.0, h + 1.0))
                return level + trend * damp

            return sse, fc

        yield "holt", 5, fit_holt
        yield "damped", 6, fit_damped

    if m > 1 and n >= 2 * m:

        def fit_hw():
            def obj(z):
                return _hw_run(
                    y,
                    m,
                    _to_bounds(z[0], *ALPHA_BOUNDS),
                    _to_bounds(z[1], *ALPHA_BOUNDS),
                    _to_bounds(z[2], *ALPHA_BOUNDS),
                )[0]

            z = _simplex_min(
                obj,
                [
                    [
                        _from_bounds(0.3, *ALPHA_BOUNDS),
                        _from_bounds(0.1, *ALPHA_BOUNDS),
                        _from_bounds(0.1, *ALPHA_BOUNDS),
                    ]
                ],
            )
            alpha = _to_bounds(z[0], *ALPHA_BOUNDS)
            beta = _to_bounds(z[1], *ALPHA_BOUNDS)
            gamma = _to_bounds(z[2], *ALPHA_BOUNDS)
            sse, (level, trend, season) = _hw_run(y, m, alpha, beta, gamma)

            def fc(h):
                k = np.arange(1.0, h + 1.0)
                return level + trend * k + season[(np.arange(h)) % m]

            return sse, fc

        yield "hw", m + 5, fit_hw


def _simplex_min(obj, starts: list[list[float]]) -> np.ndarray:
    """Derivative-free simplex minimization from fixed starting points."""
    best = None
    best_val = math.inf
    for x0 in starts:
        res = optimize.minimize(
            obj,
            np.asarray(x0, dtype=np.float64),
            method="Nelder-Mead",
            options={"xatol": 1e-6, "fatol": 1e-10, "maxiter": 500},
        )
        if np.isfinite(res.fun) and res.fun < best_val:
            best_val = float(res.fun)
            best = np.asarray(res.x, dtype=np.float64)
    if best is None:
        raise ForecastError("simplex search failed from every start")
    return best


def _aicc(sse: float, n: int, k: int) -> float:
    if n - k - 1 <= 0:
        return math.inf
    return (
        n * math.log(max(sse, 1e-300) / n)
        + 2.0 * k
        + 2.0 * k * (k + 1.0) / (n - k - 1.0)
    )


def ets(values: np.ndarray, period: int, horizon: int) -> tuple[np.ndarray, str | None]:
    """Additive exponential-smoothing family selected by AICc.

    Candidates: SES, Holt, damped Holt, and additive Holt-Winters (the
    latter only when a full two cycles are available). Smoothing parameters
    are least-squares fitted by simplex search from fixed starts; damping is
    constrained to (0.8, 0.98). Falls back to naive, flagged, when every
    candidate fails or fewer than 4 observations exist.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n < 4:
        return naive(values, horizon), "ets: fewer than 4 observations, using naive"
    best_fc = None
    best_aicc = math.inf
    best_name = None
    for name, k_params, fit in _ets_candidates(values, period):
        try:
            sse, fc = fit()
        except Exception as exc:
            logger.debug("ets candidate %s failed: %s", name, exc)
            continue
        crit = _aicc(sse, n, k_params)
        if crit < best_aicc:
            out = np.asarray(fc(horizon), dtype=np.float64)
            if not np.all(np.isfinite(out)):
                continue
            best_aicc = crit
            best_fc = out
            best_name = name
    if best_fc is None:
        return naive(values, horizon), "ets: every candidate failed, using naive"
    logger.debug("ets selected %s (aicc=%.3f)", best_name, best_aicc)
    return best_fc, None


# ---------------------------------------------------------------------------
# seasonal-adjust + autoregression
# ---------------------------------------------------------------------------


def _fit_ar(y: np.ndarray, order: int) -> tuple[np.ndarray, float, int]:
    """Least-squares AR(order) with intercept on the conditional sample.

    Returns (coefficients [c, phi_1..phi_p], sse, rank). Rows predict y[t]
    from the `order` previous values.
    """
    n = y.size
    rows = n - order
    design = np.ones((rows, order + 1))
    for lag in range(1, order + 1):
        design[:, lag] = y[order - lag : n - lag]
    target = y[order:]
    coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    resid = target - design @ coef
    return coef, float(resid @ resid), int(rank)


def _select_ar_order(y: np.ndarray) -> int:
    n = y.size
    p_max = min(AR_MAX_ORDER, max(0, (n - 2) // 2))
    if p_max == 0:
        return 0
    # Compare orders on the common conditional sample so AICs are comparable.
    common = y[p_max:]
    rows = common.size
    best_p, best_aic = 0, math.inf
    for p in range(p_max + 1):
        design = np.ones((rows, p + 1))
        for lag in range(1, p + 1):
            design[:, lag] = y[p_max - lag : n - lag]
        coef, _, rank, _ = np.linalg.lstsq(design, common, rcond=None)
        if rank < p + 1:
            continue
        resid = common - design @ coef
        sse = float(resid @ resid)
        aic = rows * math.log(max(sse, 1e-300) / rows) + 2.0 * (p + 1)
        if aic < best_aic:
            best_aic, best_p = aic, p
    return best_p


def _ar_forecast(y: np.ndarray, horizon: int) -> np.ndarray:
    order = _select_ar_order(y)
    if order == 0:
        return np.full(horizon, y.mean())
    coef, _, rank = _fit_ar(y, order)
    while rank < order + 1 and order > 0:
        order -= 1
        if order == 0:
            return np.full(horizon, y.mean())
        coef, _, rank = _fit_ar(y, order)
    history = list(y[-order:])
    out = np.empty(horizon)
    for k in range(horizon):
        lagged = history[-order:][::-1]
        out[k] = coef[0] + float(np.dot(coef[1:], lagged))
        history.append(out[k])
    return out


def stl_ar(values: np.ndarray, period: int, horizon: int) -> tuple[np.ndarray, str | None]:
    """Seasonal adjustment followed by an AIC-selected autoregression.

    Order 0 degenerates to the adjusted-series mean. The seasonal step is
    taken only when the series passes the seasonality test and is long
    enough for the decomposition window (n >= 2m + 2).
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n < 2:
        raise ForecastError("stl_ar needs at least 2 observations")
    ts = TimeSeries("_", values, period, max(1, horizon))
    if period > 1 and n >= 2 * period + 2 and seasonality_test(ts):
        dec = seasonal_decompose(ts)
        fc = _ar_forecast(dec.adjusted.values, horizon)
        return reseasonalize(fc, dec.indices, n, dec.additive), None
    return _ar_forecast(values, horizon), None


def naive2(values: np.ndarray, period: int, horizon: int) -> np.ndarray:
    """Naive on the seasonally adjusted series, reseasonalized.

    The reference method for the overall weighted average: identical to
    naive whenever the seasonality test fails (including all period-1
    series).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise ForecastError("naive2 needs at least 2 observations")
    ts = TimeSeries("_", values, period, max(1, horizon))
    if period > 1 and seasonality_test(ts):
        dec = seasonal_decompose(ts)
        fc = naive(dec.adjusted.values, horizon)
        return reseasonalize(fc, dec.indices, values.size, dec.additive)
    return naive(values, horizon)


# ---------------------------------------------------------------------------
# dispatch and CSV interchange
# ---------------------------------------------------------------------------


def run_method(method_id: str, train: TimeSeries, horizon: int | None = None) -> ForecastSet:
    """Run one in-repo method on a training series.

    Methods with documented fallbacks report them via ``ForecastSet.fallback``.
    """
    h = train.horizon if horizon is None else horizon
    y, m = train.values, train.period
    flag: str | None = None
    if method_id == "naive":
        fc = naive(y, h)
    elif method_id == "snaive":
        fc, flag = snaive(y, m, h)
    elif method_id == "rw_drift":
        fc = rw_drift(y, h)
    elif method_id == "theta":
        fc, flag = theta(y, m, h)
    elif method_id == "ets":
        fc, flag = ets(y, m, h)
    elif method_id == "stl_ar":
        fc, flag = stl_ar(y, m, h)
    elif method_id == "naive2":
        fc = naive2(y, m, h)
    else:
        raise ForecastError(f"unknown method {method_id!r}")
    return ForecastSet(train.series_id, method_id, h, fc, flag)


def write_forecast_csv(path, forecast_sets: list[ForecastSet]) -> None:
    """Write forecasts as ``id,method,f1..fh`` rows (ragged horizons allowed)."""
    max_h = max((fs.horizon for fs in forecast_sets), default=0)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "method"] + [f"f{i}" for i in range(1, max_h + 1)])
        for fs in forecast_sets:
            writer.writerow([fs.series_id, fs.method_id] + [repr(float(v)) for v in fs.values])


def read_forecast_csv(
    path, horizons: dict[str, int], prefix_external: bool = False
) -> tuple[list[ForecastSet], list[str]]:
    """Read a forecast CSV, validating each row against known horizons.

    Rejected rows (unknown id, wrong value count, non-numeric or non-finite
    values) are returned as messages naming the row number, not raised.
    With ``prefix_external`` the method id is namespaced as
    ``external:<name>`` unless already so.
    """
    out: list[ForecastSet] = []
    rejected: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2 or header[0].strip().lower() != "id":
            raise ForecastError(f"{path}: header must start with id,method,f1,...")
        for row_no, row in enumerate(reader, start=2):
            if not row or all(c.strip() == "" for c in row):
                continue
            if len(row) < 3:
                rejected.append(f"row {row_no}: too few fields")
                continue
            sid, method = row[0].strip(), row[1].strip()
            cells = row[2:]
            while cells and cells[-1].strip() == "":
                cells.pop()
            if sid not in horizons:
                rejected.append(f"row {row_no}: unknown series id {sid!r}")
                continue
            h = horizons[sid]
            if len(cells) != h:
                rejected.append(
                    f"row {row_no}: {len(cells)} values, horizon is {h}"
                )
                continue
            try:
                values = np.array([float(c) for c in cells])
            except ValueError:
                rejected.append(f"row {row_no}: non-numeric forecast value")
                continue
            if not np.all(np.isfinite(values)):
                rejected.append(f"row {row_no}: non-finite forecast value")
                continue
            if prefix_external and not method.startswith(EXTERNAL_PREFIX):
                method = EXTERNAL_PREFIX + method
            out.append(ForecastSet(sid, method, h, values))
    return out, rejected


def ingest_external_forecasts(
    path, horizons: dict[str, int]
) -> tuple[list[ForecastSet], list[str]]:
    """Ingest forecasts computed outside the repo (namespaced ``external:``)."""
    return read_forecast_csv(path, horizons, prefix_external=True)
