"""Univariate series containers, corpus I/O, and seasonal utilities."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

# One-sided 90% normal quantile used by the seasonality significance limit.
SEASONALITY_Z = 1.645


class CorpusError(ValueError):
    """A corpus, metadata, or series constraint was violated."""


@dataclass
class TimeSeries:
    """A univariate series with its seasonal period and forecast horizon.

    Parameters
    ----------
    series_id : str
        Unique identifier within a corpus.
    values : np.ndarray
        Observations, oldest first. Must be finite and hold at least
        two points.
    period : int
        Observations per seasonal cycle (1 = non-seasonal).
    horizon : int
        Number of future points forecasts must cover.
    """

    series_id: str
    values: np.ndarray
    period: int = 1
    horizon: int = 1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size < 2:
            raise CorpusError(
                f"series {self.series_id!r}: needs at least 2 observations, "
                f"got {self.values.size}"
            )
        if not np.all(np.isfinite(self.values)):
            raise CorpusError(f"series {self.series_id!r}: non-finite observation")
        if self.period < 1:
            raise CorpusError(f"series {self.series_id!r}: period must be >= 1")
        if self.horizon < 1:
            raise CorpusError(f"series {self.series_id!r}: horizon must be >= 1")

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass
class SplitSeries:
    """A series partitioned into a training head and a held-out tail."""

    train: TimeSeries
    test: np.ndarray

    def __post_init__(self):
        self.test = np.asarray(self.test, dtype=np.float64)


@dataclass
class Decomposition:
    """Classical seasonal decomposition of a series.

    ``indices`` holds one factor per phase (mean 1 for the multiplicative
    mode, mean 0 for the additive fallback). ``additive`` is True only when
    non-positive observations forced the additive fallback.
    """

    indices: np.ndarray
    adjusted: TimeSeries
    additive: bool = False


def _parse_row(row: list[str], line_no: int) -> tuple[str, np.ndarray]:
    # Trailing empty cells are padding (ragged corpora); interior blanks are not.
    values = list(row[1:])
    while values and values[-1].strip() == "":
        values.pop()
    out = np.empty(len(values), dtype=np.float64)
    for col, cell in enumerate(values):
        try:
            out[col] = float(cell)
        except ValueError:
            raise CorpusError(
                f"line {line_no}, column {col + 2}: non-numeric observation {cell!r}"
            ) from None
    return row[0].strip(), out


def load_corpus(path, period: int = 1, horizon: int = 1) -> list[TimeSeries]:
    """Read an M4-style observation CSV into a list of series.

    Each row is ``id,v1,v2,...`` with optional trailing empty cells.
    A header row is detected by a non-numeric second cell and skipped.

    Raises
    ------
    CorpusError
        On a non-numeric observation (naming line and column) or a series
        with fewer than two observations (naming the id).
    """
    series = []
    with open(path, newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row or all(cell.strip() == "" for cell in row):
                continue
            if line_no == 1 and _looks_like_header(row):
                continue
            sid, values = _parse_row(row, line_no)
            if values.size < 2:
                raise CorpusError(
                    f"series {sid!r} (line {line_no}): fewer than 2 observations"
                )
            series.append(TimeSeries(sid, values, period, horizon))
    return series


def load_corpus_lenient(
    path, period: int = 1, horizon: int = 1
) -> tuple[list[TimeSeries], list[str]]:
    """Like :func:`load_corpus` but skips bad rows, returning their reasons."""
    series = []
    problems = []
    with open(path, newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row or all(cell.strip() == "" for cell in row):
                continue
            if line_no == 1 and _looks_like_header(row):
                continue
            try:
                sid, values = _parse_row(row, line_no)
                if values.size < 2:
                    raise CorpusError(
                        f"series {sid!r} (line {line_no}): fewer than 2 observations"
                    )
                series.append(TimeSeries(sid, values, period, horizon))
            except CorpusError as exc:
                problems.append(str(exc))
                logger.warning("skipping corpus row: %s", exc)
    return series, problems


def _looks_like_header(row: list[str]) -> bool:
    if len(row) < 2:
        return False
    try:
        float(row[1])
    except ValueError:
        return True
    return False


def load_metadata(path) -> dict[str, tuple[int, int]]:
    """Read an ``id,period,horizon`` CSV into ``{id: (period, horizon)}``."""
    meta: dict[str, tuple[int, int]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip().lower() for c in header[:3]] != [
            "id",
            "period",
            "horizon",
        ]:
            raise CorpusError(f"{path}: metadata header must be id,period,horizon")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(c.strip() == "" for c in row):
                continue
            if len(row) < 3:
                raise CorpusError(f"{path} line {line_no}: expected 3 fields")
            sid = row[0].strip()
            try:
                period, horizon = int(row[1]), int(row[2])
            except ValueError:
                raise CorpusError(
                    f"{path} line {line_no}: period/horizon must be integers"
                ) from None
            if sid in meta:
                raise CorpusError(f"{path} line {line_no}: duplicate id {sid!r}")
            meta[sid] = (period, horizon)
    return meta


def apply_metadata(
    series: list[TimeSeries], meta: dict[str, tuple[int, int]]
) -> list[TimeSeries]:
    """Return the series with per-id period/horizon overrides applied."""
    out = []
    for s in series:
        if s.series_id in meta:
            period, horizon = meta[s.series_id]
            out.append(TimeSeries(s.series_id, s.values, period, horizon))
        else:
            out.append(s)
    return out


def write_corpus(path, series: list[TimeSeries]) -> None:
    """Write an observation CSV (``id,v1,v2,...``, ragged, no header)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for s in series:
            writer.writerow([s.series_id] + [repr(float(v)) for v in s.values])


def write_metadata(path, series: list[TimeSeries]) -> None:
    """Write the companion ``id,period,horizon`` CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "period", "horizon"])
        for s in series:
            writer.writerow([s.series_id, s.period, s.horizon])


def split_train_test(s: TimeSeries) -> SplitSeries:
    """Split off the last ``horizon`` points as the held-out test tail.

    Raises
    ------
    CorpusError
        When the series is not longer than its horizon, or the remaining
        training head is shorter than ``max(2, period + 1)`` (the minimum
        for a defined seasonal-difference scale).
    """
    n, h, m = len(s), s.horizon, s.period
    if n <= h:
        raise CorpusError(
            f"series {s.series_id!r}: length {n} does not exceed horizon {h}"
        )
    min_train = max(2, m + 1)
    if n - h < min_train:
        raise CorpusError(
            f"series {s.series_id!r}: training head {n - h} shorter than "
            f"minimum {min_train}"
        )
    train = TimeSeries(s.series_id, s.values[: n - h], m, h)
    return SplitSeries(train=train, test=s.values[n - h :].copy())


def acf(values: np.ndarray, max_lag: int) -> np.ndarray:
    """Sample autocorrelations at lags ``1..max_lag`` (biased estimator)."""
    x = np.asarray(values, dtype=np.float64)
    n = x.size
    x = x - x.mean()
    denom = float(np.dot(x, x))
    out = np.zeros(max_lag)
    if denom <= 0.0:
        return out
    for lag in range(1, max_lag + 1):
        if lag >= n:
            break
        out[lag - 1] = float(np.dot(x[:-lag], x[lag:])) / denom
    return out


def seasonality_test(s: TimeSeries) -> bool:
    """Significance test for seasonality at the series' own period.

    Returns False for period 1 or when fewer than three full cycles are
    available. Otherwise the lag-``m`` autocorrelation must exceed the
    Bartlett-style limit built from the shorter lags.
    """
    m, n = s.period, len(s)
    if m <= 1 or n < 3 * m:
        return False
    rho = acf(s.values, m)
    limit = SEASONALITY_Z * math.sqrt((1.0 + 2.0 * float(np.sum(rho[: m - 1] ** 2))) / n)
    return bool(abs(rho[m - 1]) > limit)


def _centered_ma(values: np.ndarray, m: int) -> tuple[np.ndarray, int]:
    # Window of width m; even periods take half weight at both ends so the
    # window stays centered.
    if m % 2 == 0:
        kernel = np.ones(m + 1)
        kernel[0] = kernel[-1] = 0.5
        kernel /= m
    else:
        kernel = np.full(m, 1.0 / m)
    trend = np.convolve(values, kernel, mode="valid")
    offset = (kernel.size - 1) // 2
    return trend, offset


def seasonal_decompose(s: TimeSeries) -> Decomposition:
    """Classical decomposition by the ratio-to-centered-moving-average method.

    Factors are per-phase means of the detrended series, normalized to mean
    one, and the adjusted value at position t is ``value_t / factor[t % m]``.
    Series with non-positive values fall back to the additive analogue
    (differences instead of ratios, factors normalized to mean zero),
    flagged via ``Decomposition.additive``.
    """
    m, n = s.period, len(s)
    if m <= 1:
        raise CorpusError(f"series {s.series_id!r}: decomposition needs period > 1")
    if n < 2 * m:
        raise CorpusError(
            f"series {s.series_id!r}: decomposition needs at least 2 cycles"
        )
    values = s.values
    additive = bool(np.any(values <= 0.0))
    trend, offset = _centered_ma(values, m)
    phases = (offset + np.arange(trend.size)) % m
    indices = np.zeros(m)
    if additive:
        detrended = values[offset : offset + trend.size] - trend
        for p in range(m):
            sel = detrended[phases == p]
            indices[p] = sel.mean() if sel.size else 0.0
        indices -= indices.mean()
        adjusted = values - indices[np.arange(n) % m]
    else:
        detrended = values[offset : offset + trend.size] / trend
        for p in range(m):
            sel = detrended[phases == p]
            indices[p] = sel.mean() if sel.size else 1.0
        indices /= indices.mean()
        adjusted = values / indices[np.arange(n) % m]
    return Decomposition(
        indices=indices,
        adjusted=TimeSeries(s.series_id, adjusted, m, s.horizon),
        additive=additive,
    )


def reseasonalize(
    forecast: np.ndarray, indices: np.ndarray, n_train: int, additive: bool = False
) -> np.ndarray:
    """Reapply seasonal factors to a forecast made on the adjusted series."""
    forecast = np.asarray(forecast, dtype=np.float64)
    m = indices.size
    idx = (n_train + np.arange(forecast.size)) % m
    if additive:
        return forecast + indices[idx]
    return forecast * indices[idx]
