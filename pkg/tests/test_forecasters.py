import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imagecast.forecasters import (
    EXTERNAL_PREFIX,
    ForecastError,
    ForecastSet,
    _ar_forecast,
    _fit_ar,
    _select_ar_order,
    ets,
    ingest_external_forecasts,
    naive,
    naive2,
    read_forecast_csv,
    run_method,
    rw_drift,
    snaive,
    stl_ar,
    theta,
    write_forecast_csv,
)

from conftest import make_series


# --- oracle: straight theta reimplementation with its own optimizer --------


def _reference_theta(y: np.ndarray, h: int) -> np.ndarray:
    n = y.size
    t = np.arange(1.0, n + 1.0)
    tc = t - t.mean()
    slope = float((tc * (y - y.mean())).sum() / (tc * tc).sum())
    intercept = float(y.mean() - slope * t.mean())
    q = 2.0 * y - (intercept + slope * t)

    def sse(a):
        level, s = q[0], 0.0
        for v in q[1:]:
            e = v - level
            s += e * e
            level = a * v + (1.0 - a) * level
        return s

    # global grid bracket, then ternary search inside it
    grid = np.linspace(1e-4, 1.0 - 1e-4, 201)
    i = int(np.argmin([sse(a) for a in grid]))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    for _ in range(80):
        m1, m2 = lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0
        if sse(m1) <= sse(m2):
            hi = m2
        else:
            lo = m1
    alpha = 0.5 * (lo + hi)
    level = q[0]
    for v in q[1:]:
        level = alpha * v + (1.0 - alpha) * level
    trend = intercept + slope * np.arange(n + 1.0, n + h + 1.0)
    return 0.5 * trend + 0.5 * level


def test_naive_examples():
    np.testing.assert_array_equal(naive([1, 2, 3], 2), [3.0, 3.0])
    np.testing.assert_array_equal(naive([7], 3), [7.0, 7.0, 7.0])
    # constant series has zero drift
    np.testing.assert_array_equal(naive([4, 4, 4], 5), rw_drift([4, 4, 4], 5))
    with pytest.raises(ForecastError):
        naive([], 2)


def test_snaive_examples():
    fc, flag = snaive([1, 2, 3, 4, 5, 6, 7, 8], 4, 4)
    np.testing.assert_array_equal(fc, [5, 6, 7, 8])
    assert flag is None
    fc, _ = snaive([1, 2, 3, 4, 5, 6, 7, 8], 4, 6)
    np.testing.assert_array_equal(fc, [5, 6, 7, 8, 5, 6])
    fc, _ = snaive([1, 2, 3], 1, 2)
    np.testing.assert_array_equal(fc, naive([1, 2, 3], 2))
    fc, flag = snaive([1, 2, 3], 5, 2)
    np.testing.assert_array_equal(fc, [3, 3])
    assert flag is not None


def test_rw_drift_examples():
    np.testing.assert_array_equal(rw_drift([1, 3, 5, 7], 2), [9.0, 11.0])
    np.testing.assert_array_equal(rw_drift([2, 2, 2], 3), [2.0, 2.0, 2.0])
    with pytest.raises(ForecastError):
        rw_drift([1], 2)


def test_rw_drift_matches_trend_only_when_linear(rng):
    # exactly linear input: the endpoints line IS the least-squares line
    t = np.arange(1.0, 21.0)
    y = 3.0 + 0.7 * t
    slope, intercept = np.polyfit(t, y, 1)
    expect = intercept + slope * np.arange(21.0, 25.0)
    np.testing.assert_allclose(rw_drift(y, 4), expect, atol=1e-9)
    yn = y + rng.normal(0, 1, y.size)
    slope, intercept = np.polyfit(t, yn, 1)
    expect = intercept + slope * np.arange(21.0, 25.0)
    assert not np.allclose(rw_drift(yn, 4), expect, atol=1e-6)


def test_theta_constant_is_flat():
    fc, flag = theta(np.full(10, 3.5), 1, 4)
    np.testing.assert_allclose(fc, 3.5, atol=1e-9)
    assert flag is None


def test_theta_linear_series_continues_at_half_slope():
    # on y=2t the trend fit is exact, so consecutive forecast steps differ
    # by exactly half the slope regardless of the optimized alpha
    y = 2.0 * np.arange(1.0, 31.0)
    fc, _ = theta(y, 1, 5)
    np.testing.assert_allclose(np.diff(fc), 1.0, atol=1e-6)


def test_theta_matches_reference_on_seeded_series():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(20, 80))
        y = 100.0 + np.cumsum(rng.normal(0.2, 2.0, n))
        got, _ = theta(y, 1, 6)
        ref = _reference_theta(y, 6)
        scale = max(1.0, float(np.abs(ref).max()))
        assert np.abs(got - ref).max() <= 1e-4 * scale


def test_theta_seasonal_path_reseasonalizes(rng):
    pattern = np.array([0.7, 1.3, 1.1, 0.9])
    y = 50.0 * np.tile(pattern, 8) * (1 + rng.normal(0, 0.005, 32))
    fc, _ = theta(y, 4, 4)
    # seasonal shape survives into the forecast
    assert fc[1] > fc[0] and fc[1] > fc[3]


def test_ets_constant_series():
    fc, flag = ets(np.full(12, 9.0), 1, 3)
    np.testing.assert_allclose(fc, 9.0, atol=1e-9)
    assert flag is None


def test_ets_short_series_falls_back():
    fc, flag = ets([1.0, 2.0, 3.0], 1, 2)
    np.testing.assert_array_equal(fc, [3.0, 3.0])
    assert "naive" in flag


def test_ets_white_noise_prefers_ses(caplog):
    rng = np.random.default_rng(42)
    wins = 0
    with caplog.at_level(logging.DEBUG, logger="imagecast.forecasters"):
        for _ in range(100):
            caplog.clear()
            y = rng.normal(50, 1, 100)
            ets(y, 1, 4)
            picked = [r.message for r in caplog.records if "selected" in r.message]
            assert picked
            if "ses" in picked[-1]:
                wins += 1
    assert wins >= 80


def test_ets_recovers_strong_trend(caplog):
    rng = np.random.default_rng(3)
    y = 10.0 + 5.0 * np.arange(60.0) + rng.normal(0, 0.1, 60)
    with caplog.at_level(logging.DEBUG, logger="imagecast.forecasters"):
        fc, flag = ets(y, 1, 6)
    assert flag is None
    picked = [r.message for r in caplog.records if "selected" in r.message]
    assert "ses" not in picked[-1]
    step = (fc[-1] - fc[0]) / 5.0
    assert abs(step - 5.0) <= 0.5


def test_ets_seasonal_series_uses_hw(caplog):
    rng = np.random.default_rng(11)
    season = np.array([10.0, -5.0, 3.0, -8.0])
    y = 100.0 + np.tile(season, 10) + rng.normal(0, 0.2, 40)
    with caplog.at_level(logging.DEBUG, logger="imagecast.forecasters"):
        fc, _ = ets(y, 4, 4)
    picked = [r.message for r in caplog.records if "selected" in r.message]
    assert "hw" in picked[-1]
    np.testing.assert_allclose(fc, 100.0 + season, atol=1.0)


def test_ar_fit_recovers_phi(rng):
    y = np.empty(500)
    y[0] = 0.0
    for t in range(1, 500):
        y[t] = 0.8 * y[t - 1] + rng.normal()
    order = _select_ar_order(y)
    assert order >= 1
    coef, _, _ = _fit_ar(y, order)
    assert abs(coef[1] - 0.8) <= 0.1


def test_stl_ar_white_noise_forecasts_mean(rng):
    y = rng.normal(20, 1, 200)
    fc, flag = stl_ar(y, 1, 4)
    assert flag is None
    se = y.std(ddof=1) / np.sqrt(y.size)
    assert np.abs(fc - y.mean()).max() <= 2 * se


def test_stl_ar_m1_is_plain_ar(rng):
    y = np.cumsum(rng.normal(0, 1, 60)) + 50
    fc, _ = stl_ar(y, 1, 5)
    np.testing.assert_array_equal(fc, _ar_forecast(y, 5))


def test_naive2_equals_naive_when_not_seasonal(rng):
    y = rng.normal(10, 1, 30)
    np.testing.assert_array_equal(naive2(y, 1, 4), naive(y, 4))
    # m>1 but no significant seasonality
    np.testing.assert_array_equal(naive2(y, 7, 4), naive(y, 4))


def test_naive2_reproduces_deterministic_cycle():
    pattern = np.array([10.0, 20.0, 15.0, 5.0])
    y = np.tile(pattern, 6)
    fc = naive2(y, 4, 4)
    np.testing.assert_allclose(fc, pattern, atol=1e-6)


def test_run_method_dispatch(tiny_corpus):
    ts = tiny_corpus[0]
    fs = run_method("theta", ts)
    assert fs.series_id == ts.series_id
    assert fs.method_id == "theta"
    assert fs.horizon == ts.horizon
    assert fs.values.shape == (ts.horizon,)
    fs2 = run_method("naive", ts, horizon=2)
    assert fs2.horizon == 2
    with pytest.raises(ForecastError):
        run_method("arima", ts)


def test_run_method_deterministic(tiny_corpus):
    for ts in tiny_corpus[:3]:
        for m in ("naive", "snaive", "rw_drift", "theta", "ets", "stl_ar", "naive2"):
            a = run_method(m, ts)
            b = run_method(m, ts)
            np.testing.assert_array_equal(a.values, b.values)


def test_forecast_set_validation():
    with pytest.raises(ForecastError):
        ForecastSet("s", "naive", 3, np.ones(2))
    with pytest.raises(ForecastError):
        ForecastSet("s", "naive", 2, np.array([1.0, np.nan]))


def test_forecast_csv_roundtrip(tmp_path, tiny_corpus):
    sets = [run_method(m, ts) for ts in tiny_corpus for m in ("naive", "theta")]
    path = tmp_path / "fc.csv"
    write_forecast_csv(path, sets)
    horizons = {ts.series_id: ts.horizon for ts in tiny_corpus}
    back, rejected = read_forecast_csv(path, horizons)
    assert rejected == []
    assert len(back) == len(sets)
    for a, b in zip(sets, back):
        assert (a.series_id, a.method_id) == (b.series_id, b.method_id)
        np.testing.assert_array_equal(a.values, b.values)


def test_forecast_csv_rejections(tmp_path):
    path = tmp_path / "fc.csv"
    path.write_text(
        "id,method,f1,f2\n"
        "s1,good,1.0,2.0\n"
        "zz,bad,1.0,2.0\n"
        "s1,short,1.0\n"
        "s1,words,a,b\n"
        "s1,inf,1.0,inf\n"
    )
    sets, rejected = read_forecast_csv(path, {"s1": 2})
    assert len(sets) == 1
    assert len(rejected) == 4
    assert any("row 3" in r for r in rejected)
    assert any("row 4" in r for r in rejected)
    with pytest.raises(ForecastError):
        bad = tmp_path / "bad.csv"
        bad.write_text("method,id,f1\n")
        read_forecast_csv(bad, {"s1": 1})


def test_external_ingestion_prefixes(tmp_path):
    path = tmp_path / "ext.csv"
    path.write_text("id,method,f1,f2\ns1,arima,1.0,2.0\ns1,external:tbats,3.0,4.0\n")
    sets, rejected = ingest_external_forecasts(path, {"s1": 2})
    assert rejected == []
    assert {fs.method_id for fs in sets} == {
        EXTERNAL_PREFIX + "arima",
        EXTERNAL_PREFIX + "tbats",
    }


# --- scale equivariance: forecast(a*y + b) == a*forecast(y) + b ------------

_EQUIV_TOL = {
    "naive": 1e-12,
    "snaive": 1e-12,
    "rw_drift": 1e-12,
    "naive2": 1e-9,
    "theta": 1e-6,
    "stl_ar": 1e-6,
}


@settings(max_examples=30, deadline=None)
@given(
    st.integers(min_value=0, max_value=2**31 - 1),
    st.floats(min_value=0.1, max_value=10.0),
    st.floats(min_value=-50.0, max_value=50.0),
    st.sampled_from(sorted(_EQUIV_TOL)),
)
def test_scale_equivariance(seed, a, b, method):
    rng = np.random.default_rng(seed)
    y = 100.0 + np.cumsum(rng.normal(0, 2, 30))
    base = run_method(method, make_series(y, period=1, horizon=4)).values
    scaled = run_method(method, make_series(a * y + b, period=1, horizon=4)).values
    tol = _EQUIV_TOL[method] * max(1.0, np.abs(scaled).max())
    np.testing.assert_allclose(scaled, a * base + b, atol=tol)


def test_ets_scale_equivariance(rng):
    y = 100.0 + np.cumsum(rng.normal(0.5, 2, 40))
    base, _ = ets(y, 1, 4)
    for a, b in ((2.0, 0.0), (0.25, 30.0), (7.0, -90.0)):
        scaled, _ = ets(a * y + b, 1, 4)
        np.testing.assert_allclose(
            scaled, a * base + b, atol=1e-3 * max(1.0, np.abs(scaled).max())
        )


def test_multiplicative_seasonal_scale_equivariance(rng):
    # multiplicative decomposition paths: b must stay 0
    pattern = np.array([0.6, 1.4, 1.2, 0.8])
    y = 40.0 * np.tile(pattern, 9) * (1 + rng.normal(0, 0.01, 36))
    for method in ("naive2", "theta", "stl_ar"):
        base = run_method(method, make_series(y, period=4, horizon=4)).values
        scaled = run_method(method, make_series(3.0 * y, period=4, horizon=4)).values
        np.testing.assert_allclose(
            scaled, 3.0 * base, atol=1e-6 * max(1.0, np.abs(scaled).max())
        )
