"""Seeded synthetic corpora for experiments and end-to-end checks.

Two generators: a three-class corpus where naive, seasonal-naive, and
drift are each best by construction on one class, and a yearly-style
corpus of positive trending series (period 1, horizon 6).
"""

from __future__ import annotations

import numpy as np

from .series import TimeSeries

THREE_CLASS_PERIOD = 4
THREE_CLASS_HORIZON = 6
YEARLY_HORIZON = 6

CLASS_LABELS = ("walk", "seasonal", "trend")


def _length(rng: np.random.Generator, lo: int, hi: int) -> int:
    return int(rng.integers(lo, hi + 1))


def _walk_series(rng: np.random.Generator, n: int) -> np.ndarray:
    """Driftless random walk: the naive forecaster is optimal."""
    base = rng.uniform(80.0, 120.0)
    steps = rng.normal(0.0, 2.0, size=n - 1)
    y = base + np.concatenate([[0.0], np.cumsum(steps)])
    return np.maximum(y, 1.0)


def _seasonal_series(rng: np.random.Generator, n: int, m: int) -> np.ndarray:
    """Stable repeating pattern: seasonal naive is nearly exact."""
    base = rng.uniform(80.0, 120.0)
    pattern = rng.uniform(-25.0, 25.0, size=m)
    pattern -= pattern.mean()
    t = np.arange(n)
    y = base + pattern[t % m] + rng.normal(0.0, 0.5, size=n)
    return np.maximum(y, 1.0)


def _trend_series(rng: np.random.Generator, n: int) -> np.ndarray:
    """Strong linear trend with small noise: drift extrapolation wins."""
    base = rng.uniform(50.0, 100.0)
    slope = rng.uniform(2.0, 5.0) * rng.choice([-1.0, 1.0], p=[0.2, 0.8])
    t = np.arange(n)
    y = base + slope * t + rng.normal(0.0, 1.0, size=n)
    return np.maximum(y, 1.0)


def three_class_corpus(n_series: int = 600, seed: int = 0) -> tuple[list[TimeSeries], list[str]]:
    """Corpus cycling through walk/seasonal/trend classes.

    Returns the series plus an aligned class label per series. Ids encode
    the class (``walk17``), lengths vary in [40, 60].
    """
    rng = np.random.default_rng(seed)
    out: list[TimeSeries] = []
    labels: list[str] = []
    makers = {
        "walk": lambda n: _walk_series(rng, n),
        "seasonal": lambda n: _seasonal_series(rng, n, THREE_CLASS_PERIOD),
        "trend": lambda n: _trend_series(rng, n),
    }
    for i in range(n_series):
        label = CLASS_LABELS[i % len(CLASS_LABELS)]
        n = _length(rng, 40, 60)
        values = makers[label](n)
        out.append(
            TimeSeries(
                series_id=f"{label}{i + 1}",
                values=values,
                period=THREE_CLASS_PERIOD,
                horizon=THREE_CLASS_HORIZON,
            )
        )
        labels.append(label)
    return out, labels


def yearly_like_corpus(n_series: int = 1000, seed: int = 0) -> list[TimeSeries]:
    """Positive yearly-style series: compounding growth, noise, some walks.

    Mix: 60% clear growth curves, 20% weak trends, 20% driftless walks;
    lengths in [20, 40], period 1, horizon 6. Ids are ``Y1..Yn`` so the
    frequency group resolves to Yearly.
    """
    rng = np.random.default_rng(seed)
    out: list[TimeSeries] = []
    for i in range(n_series):
        n = _length(rng, 20, 40)
        kind = rng.uniform()
        base = rng.uniform(500.0, 5000.0)
        t = np.arange(n)
        if kind < 0.6:
            growth = rng.uniform(0.02, 0.10)
            noise = rng.normal(0.0, 0.02, size=n)
            y = base * (1.0 + growth) ** t * (1.0 + noise)
        elif kind < 0.8:
            growth = rng.uniform(-0.02, 0.03)
            noise = rng.normal(0.0, 0.03, size=n)
            y = base * (1.0 + growth) ** t * (1.0 + noise)
        else:
            steps = rng.normal(0.0, 0.04, size=n - 1)
            y = base * np.exp(np.concatenate([[0.0], np.cumsum(steps)]))
        out.append(
            TimeSeries(
                series_id=f"Y{i + 1}",
                values=np.maximum(y, 1.0),
                period=1,
                horizon=YEARLY_HORIZON,
            )
        )
    return out
