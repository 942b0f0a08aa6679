import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imagecast.forecasters import ForecastSet, run_method
from imagecast.metrics import (
    MetricsError,
    aggregate,
    build_loss_matrix,
    mase,
    owa_contrib,
    read_loss_csv,
    smape,
    write_loss_csv,
)
from imagecast.series import TimeSeries, split_train_test

from conftest import make_series


def test_smape_hand_example():
    # terms: 2*|10-12|/(10+12)=4/22, 2*|20-15|/(20+15)=10/35
    actual = np.array([10.0, 20.0])
    forecast = np.array([12.0, 15.0])
    expect = (100.0 / 2.0) * (4.0 / 22.0 + 10.0 / 35.0)
    assert smape(actual, forecast) == pytest.approx(expect, abs=1e-9)


def test_smape_perfect_and_bounds(rng):
    y = rng.uniform(1, 100, 12)
    assert smape(y, y) == 0.0
    # 200 is the ceiling: forecast of opposite sign maximizes each term
    assert smape(np.ones(4), -np.ones(4)) == pytest.approx(200.0)


def test_smape_zero_denominator_terms_are_zero():
    actual = np.array([0.0, 10.0])
    forecast = np.array([0.0, 10.0])
    assert smape(actual, forecast) == 0.0


def test_mase_hand_example():
    # train [1,3,2,5], m=1: scale = (|3-1|+|2-3|+|5-2|)/3 = 2
    train = np.array([1.0, 3.0, 2.0, 5.0])
    actual = np.array([6.0, 4.0])
    forecast = np.array([5.0, 5.0])
    got = mase(train, actual, forecast, period=1)
    assert got == pytest.approx(((1.0 + 1.0) / 2.0) / 2.0, abs=1e-9)


def test_mase_seasonal_scale():
    # m=2: scale over |y_t - y_{t-2}|
    train = np.array([1.0, 10.0, 3.0, 14.0])
    scale = (abs(3 - 1) + abs(14 - 10)) / 2.0
    got = mase(train, np.array([5.0]), np.array([8.0]), period=2)
    assert got == pytest.approx(3.0 / scale, abs=1e-12)


def test_mase_constant_train_is_nan():
    got = mase(np.full(6, 7.0), np.array([1.0]), np.array([2.0]), period=1)
    assert np.isnan(got)


def test_mase_requires_enough_train():
    with pytest.raises(MetricsError):
        mase(np.array([1.0, 2.0]), np.array([1.0]), np.array([1.0]), period=2)


def test_owa_contrib_is_mean_of_ratios():
    owa, flags = owa_contrib(10.0, 2.0, 20.0, 1.0)
    assert owa == pytest.approx(0.5 * (0.5 + 2.0), abs=1e-12)
    assert flags == []


def test_owa_contrib_zero_over_zero_is_one():
    owa, flags = owa_contrib(0.0, 0.0, 0.0, 0.0)
    assert owa == 1.0
    assert flags == []


def test_owa_contrib_nonzero_over_zero_capped():
    owa, flags = owa_contrib(5.0, 1.0, 0.0, 1.0)
    assert owa == pytest.approx(0.5 * (20.0 + 1.0))
    assert len(flags) == 1


def test_owa_contrib_nan_mase_uses_smape_ratio_alone():
    owa, flags = owa_contrib(10.0, float("nan"), 20.0, float("nan"))
    assert owa == pytest.approx(0.5)
    assert len(flags) == 1


def _forecast_all(splits, methods):
    out = []
    for sp in splits:
        for m in methods:
            out.append(run_method(m, sp.train))
    return out


def test_build_loss_matrix_and_naive2_anchor(tiny_corpus):
    splits = [split_train_test(s) for s in tiny_corpus]
    sets = _forecast_all(splits, ["naive", "naive2"])
    lm = build_loss_matrix(splits, sets)
    col = lm.column("naive2")
    np.testing.assert_allclose(lm.owa[:, col], 1.0, atol=1e-9)
    assert lm.smape.shape == (len(splits), 2)


def test_build_loss_matrix_requires_reference(tiny_corpus):
    splits = [split_train_test(s) for s in tiny_corpus]
    sets = _forecast_all(splits, ["naive"])
    with pytest.raises(MetricsError, match="naive2"):
        build_loss_matrix(splits, sets)


def test_build_loss_matrix_rejects_gaps_and_duplicates(tiny_corpus):
    splits = [split_train_test(s) for s in tiny_corpus]
    sets = _forecast_all(splits, ["naive", "naive2"])
    with pytest.raises(MetricsError, match="duplicate"):
        build_loss_matrix(splits, sets + [sets[0]])
    with pytest.raises(MetricsError, match="incomplete"):
        build_loss_matrix(splits, sets[1:])


def test_aggregate_total_matches_hand_mean(tiny_corpus):
    splits = [split_train_test(s) for s in tiny_corpus]
    sets = _forecast_all(splits, ["naive", "snaive", "naive2"])
    lm = build_loss_matrix(splits, sets)
    groups = {s.series_id: ("A" if s.series_id.startswith("walk") else "B")
              for s in tiny_corpus}
    report = aggregate(lm, groups)
    assert report.groups[-1] == "Total"
    j = lm.column("naive")
    assert report.get("Total", "naive", "owa") == pytest.approx(lm.owa[:, j].mean())
    mask = np.array([groups[sid] == "A" for sid in lm.series_ids])
    assert report.get("A", "naive", "smape") == pytest.approx(lm.smape[mask, j].mean())
    assert report.get("A", "naive", "count") == int(mask.sum())
    # group-normalized OWA: ratios of group means
    sm_ref = lm.smape[mask, lm.column("naive2")].mean()
    ms_ref = np.nanmean(lm.mase[mask, lm.column("naive2")])
    expect = 0.5 * (lm.smape[mask, j].mean() / sm_ref + np.nanmean(lm.mase[mask, j]) / ms_ref)
    assert report.get("A", "naive", "owa_group") == pytest.approx(expect)


def test_loss_csv_roundtrip(tmp_path, tiny_corpus):
    splits = [split_train_test(s) for s in tiny_corpus]
    lm = build_loss_matrix(splits, _forecast_all(splits, ["naive", "naive2"]))
    path = tmp_path / "losses.csv"
    write_loss_csv(path, lm)
    back = read_loss_csv(path)
    assert back.series_ids == lm.series_ids
    assert back.method_ids == lm.method_ids
    np.testing.assert_array_equal(back.smape, lm.smape)
    np.testing.assert_array_equal(back.owa, lm.owa)
    # NaN mase survives as NaN
    lm.mase[0, 0] = np.nan
    write_loss_csv(path, lm)
    back = read_loss_csv(path)
    assert np.isnan(back.mase[0, 0])


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_smape_range_property(seed):
    rng = np.random.default_rng(seed)
    h = int(rng.integers(1, 20))
    y = rng.normal(0, 50, h)
    f = rng.normal(0, 50, h)
    v = smape(y, f)
    assert 0.0 <= v <= 200.0 + 1e-12


@settings(max_examples=40, deadline=None)
@given(
    st.integers(min_value=0, max_value=2**31 - 1),
    st.floats(min_value=0.01, max_value=1000.0),
)
def test_mase_and_smape_scale_invariance(seed, c):
    # both metrics are invariant to y -> c*y applied everywhere
    rng = np.random.default_rng(seed)
    train = rng.uniform(1, 100, 12)
    y = rng.uniform(1, 100, 4)
    f = rng.uniform(1, 100, 4)
    assert smape(c * y, c * f) == pytest.approx(smape(y, f), rel=1e-9)
    assert mase(c * train, c * y, c * f, 1) == pytest.approx(
        mase(train, y, f, 1), rel=1e-9
    )


def test_forecast_length_mismatch_rejected(tiny_corpus):
    splits = [split_train_test(s) for s in tiny_corpus[:1]]
    sid = splits[0].train.series_id
    bad = ForecastSet(sid, "naive2", 3, np.ones(3))
    with pytest.raises(MetricsError):
        build_loss_matrix(splits, [bad])
