"""Forecast accuracy metrics and the per-series loss matrix."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .series import SplitSeries

logger = logging.getLogger(__name__)

# Reference method whose scores normalize the overall weighted average.
REFERENCE_METHOD = "naive2"
# Cap for a ratio against a zero reference score (degenerate, flagged).
RATIO_CAP = 20.0


class MetricsError(ValueError):
    """Raised when scores cannot be assembled into a complete matrix."""


def smape(actual: np.ndarray, forecast: np.ndarray) -> float:
    """Symmetric MAPE in percent.

    ``(100/h) * sum(2|Y - F| / (|Y| + |F|))`` with zero-denominator terms
    contributing zero.
    """
    a = np.asarray(actual, dtype=np.float64)
    f = np.asarray(forecast, dtype=np.float64)
    if a.shape != f.shape or a.ndim != 1 or a.size == 0:
        raise MetricsError("smape needs matching non-empty 1-d arrays")
    denom = np.abs(a) + np.abs(f)
    terms = np.zeros_like(denom)
    nz = denom > 0.0
    terms[nz] = 2.0 * np.abs(a - f)[nz] / denom[nz]
    return float(100.0 * terms.mean())


def mase(
    train: np.ndarray, actual: np.ndarray, forecast: np.ndarray, period: int
) -> float:
    """Mean absolute error scaled by the in-sample seasonal-naive error.

    The scale is ``mean(|Y_t - Y_{t-m}|)`` over the training head. Returns
    NaN (with a warning) when that scale is zero, e.g. a constant or exactly
    periodic training series.
    """
    t = np.asarray(train, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    f = np.asarray(forecast, dtype=np.float64)
    if a.shape != f.shape or a.ndim != 1 or a.size == 0:
        raise MetricsError("mase needs matching non-empty 1-d arrays")
    if period < 1 or t.size <= period:
        raise MetricsError("mase needs train length > period >= 1")
    scale = float(np.abs(t[period:] - t[:-period]).mean())
    if scale == 0.0:
        logger.warning("mase undefined: zero seasonal-difference scale")
        return float("nan")
    return float(np.abs(a - f).mean() / scale)


def _ratio(value: float, ref: float, flags: list[str], label: str) -> float:
    # ref == 0 is degenerate: equal-zero scores count as parity, anything
    # else is capped so one series cannot dominate an aggregate.
    if ref > 0.0:
        return value / ref
    if value == 0.0:
        return 1.0
    flags.append(f"{label}: zero reference score, ratio capped at {RATIO_CAP:g}")
    return RATIO_CAP


def owa_contrib(
    smape_val: float, mase_val: float, smape_ref: float, mase_ref: float
) -> tuple[float, list[str]]:
    """Per-series overall weighted average against the reference method.

    Averages the two ratios method/reference. An undefined MASE (NaN on both
    sides, since the scale depends only on the training head) drops that
    term, leaving the sMAPE ratio alone, flagged.
    """
    flags: list[str] = []
    s_ratio = _ratio(smape_val, smape_ref, flags, "smape")
    if math.isnan(mase_val) or math.isnan(mase_ref):
        flags.append("mase undefined: owa uses smape ratio only")
        return s_ratio, flags
    m_ratio = _ratio(mase_val, mase_ref, flags, "mase")
    return 0.5 * (s_ratio + m_ratio), flags


@dataclass
class LossMatrix:
    """Per-series, per-method scores with the reference-normalized average.

    ``smape``/``mase``/``owa`` are ``(n_series, n_methods)`` arrays indexed
    by ``series_ids`` x ``method_ids``. ``mase`` may hold NaN where undefined;
    ``owa`` is always finite and non-negative.
    """

    series_ids: list[str]
    method_ids: list[str]
    smape: np.ndarray
    mase: np.ndarray
    owa: np.ndarray
    flags: list[str] = field(default_factory=list)

    def column(self, method_id: str) -> int:
        return self.method_ids.index(method_id)


def build_loss_matrix(splits: list[SplitSeries], forecast_sets) -> LossMatrix:
    """Score every (series, method) pair against the held-out tails.

    Every method must cover every series, including the reference method;
    gaps raise :class:`MetricsError` listing the missing pairs.
    """
    by_key = {}
    methods: list[str] = []
    for fs in forecast_sets:
        key = (fs.series_id, fs.method_id)
        if key in by_key:
            raise MetricsError(f"duplicate forecast for {key}")
        by_key[key] = fs
        if fs.method_id not in methods:
            methods.append(fs.method_id)
    if REFERENCE_METHOD not in methods:
        raise MetricsError(f"reference method {REFERENCE_METHOD!r} missing")
    series_ids = [sp.train.series_id for sp in splits]
    missing = [
        (sid, m) for sid in series_ids for m in methods if (sid, m) not in by_key
    ]
    if missing:
        raise MetricsError(f"incomplete forecasts, first gaps: {missing[:5]}")

    n, k = len(splits), len(methods)
    sm = np.zeros((n, k))
    ms = np.zeros((n, k))
    ow = np.zeros((n, k))
    flags: list[str] = []
    ref_col = methods.index(REFERENCE_METHOD)
    for i, sp in enumerate(splits):
        sid = sp.train.series_id
        train = sp.train.values
        period = sp.train.period
        for j, m in enumerate(methods):
            fs = by_key[(sid, m)]
            if fs.values.size != sp.test.size:
                raise MetricsError(
                    f"{sid}/{m}: forecast length {fs.values.size} != "
                    f"test length {sp.test.size}"
                )
            sm[i, j] = smape(sp.test, fs.values)
            ms[i, j] = mase(train, sp.test, fs.values, period)
        for j in range(k):
            ow[i, j], row_flags = owa_contrib(
                sm[i, j], ms[i, j], sm[i, ref_col], ms[i, ref_col]
            )
            flags.extend(f"{sid}/{methods[j]}: {f}" for f in row_flags)
    return LossMatrix(
        series_ids=series_ids,
        method_ids=methods,
        smape=sm,
        mase=ms,
        owa=ow,
        flags=flags,
    )


@dataclass
class Report:
    """Aggregated scores per method: ``values[group][method][metric]``.

    Carries both the mean of per-series OWA contributions (``owa``) and the
    group-normalized variant (``owa_group``: ratio of group-mean scores),
    which matches published-table conventions.
    """

    groups: list[str]
    method_ids: list[str]
    values: dict

    def get(self, group: str, method: str, metric: str) -> float:
        return self.values[group][method][metric]


def aggregate(lm: LossMatrix, groups: dict[str, str]) -> Report:
    """Aggregate a loss matrix per frequency group plus a Total row.

    ``groups`` maps series id -> group label. NaN MASE entries are excluded
    from their aggregates (already flagged at the series level).
    """
    labels = []
    for sid in lm.series_ids:
        g = groups.get(sid, "Other")
        if g not in labels:
            labels.append(g)
    group_order = labels + ["Total"]
    ref_col = lm.column(REFERENCE_METHOD)
    values: dict = {}
    row_groups = np.array([groups.get(sid, "Other") for sid in lm.series_ids])
    for g in group_order:
        mask = np.ones(len(lm.series_ids), dtype=bool) if g == "Total" else row_groups == g
        values[g] = {}
        sm_ref = float(lm.smape[mask, ref_col].mean())
        ms_block_ref = lm.mase[mask, ref_col]
        ms_ref = float(np.nanmean(ms_block_ref)) if np.any(~np.isnan(ms_block_ref)) else float("nan")
        for j, m in enumerate(lm.method_ids):
            sm = float(lm.smape[mask, j].mean())
            ms_col = lm.mase[mask, j]
            ms = float(np.nanmean(ms_col)) if np.any(~np.isnan(ms_col)) else float("nan")
            ow = float(lm.owa[mask, j].mean())
            gn_flags: list[str] = []
            s_ratio = _ratio(sm, sm_ref, gn_flags, "smape")
            if math.isnan(ms) or math.isnan(ms_ref):
                ow_gn = s_ratio
            else:
                ow_gn = 0.5 * (s_ratio + _ratio(ms, ms_ref, gn_flags, "mase"))
            values[g][m] = {
                "smape": sm,
                "mase": ms,
                "owa": ow,
                "owa_group": ow_gn,
                "count": int(mask.sum()),
            }
    return Report(groups=group_order, method_ids=list(lm.method_ids), values=values)


def write_loss_csv(path, lm: LossMatrix) -> None:
    """Write per-series scores as ``id,method,smape,mase,owa`` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "method", "smape", "mase", "owa"])
        for i, sid in enumerate(lm.series_ids):
            for j, m in enumerate(lm.method_ids):
                ms = lm.mase[i, j]
                writer.writerow(
                    [
                        sid,
                        m,
                        repr(float(lm.smape[i, j])),
                        "" if math.isnan(ms) else repr(float(ms)),
                        repr(float(lm.owa[i, j])),
                    ]
                )


def read_loss_csv(path) -> LossMatrix:
    """Read scores written by :func:`write_loss_csv`."""
    rows = {}
    series_ids: list[str] = []
    method_ids: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != [
            "id",
            "method",
            "smape",
            "mase",
            "owa",
        ]:
            raise MetricsError(f"{path}: bad loss CSV header")
        for row in reader:
            if not row:
                continue
            sid, m = row[0], row[1]
            if sid not in series_ids:
                series_ids.append(sid)
            if m not in method_ids:
                method_ids.append(m)
            rows[(sid, m)] = (
                float(row[2]),
                float(row[3]) if row[3] != "" else float("nan"),
                float(row[4]),
            )
    n, k = len(series_ids), len(method_ids)
    sm = np.zeros((n, k))
    ms = np.zeros((n, k))
    ow = np.zeros((n, k))
    for i, sid in enumerate(series_ids):
        for j, m in enumerate(method_ids):
            if (sid, m) not in rows:
                raise MetricsError(f"{path}: missing row for {(sid, m)}")
            sm[i, j], ms[i, j], ow[i, j] = rows[(sid, m)]
    return LossMatrix(series_ids, method_ids, sm, ms, ow)
