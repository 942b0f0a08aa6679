import numpy as np
import pytest

from imagecast.series import TimeSeries


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_series(values, sid="s1", period=1, horizon=4) -> TimeSeries:
    return TimeSeries(sid, np.asarray(values, dtype=np.float64), period, horizon)


@pytest.fixture
def tiny_corpus():
    """Nine positive series, three per behavior class, period 4 horizon 4."""
    rng = np.random.default_rng(99)
    out = []
    for i in range(3):
        n = 36 + 2 * i
        walk = 100 + np.cumsum(rng.normal(0, 2, n))
        out.append(make_series(np.maximum(walk, 1), f"walk{i}", period=4, horizon=4))
        t = np.arange(n)
        season = 100 + 20 * np.sin(2 * np.pi * t / 4) + rng.normal(0, 0.5, n)
        out.append(make_series(np.maximum(season, 1), f"season{i}", period=4, horizon=4))
        trend = 50 + 3.0 * t + rng.normal(0, 1, n)
        out.append(make_series(np.maximum(trend, 1), f"trend{i}", period=4, horizon=4))
    return out
