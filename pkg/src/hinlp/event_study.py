"""Log returns around news events, distribution summaries and the two-sample KS test."""

from __future__ import annotations

import logging
from bisect import bisect_left
from dataclasses import dataclass
from datetime import date
from typing import Iterable, Sequence

import numpy as np
from scipy import stats
from scipy.special import kolmogorov

logger = logging.getLogger(__name__)

QUANTILE_LEVELS = (0.01, 0.05, 0.5, 0.95, 0.99)


@dataclass
class PriceSeries:
    symbol: str
    dates: list[date]
    prices: np.ndarray

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=float)
        if len(self.dates) != len(self.prices):
            raise ValueError("dates and prices differ in length")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError(f"{self.symbol}: dates must be strictly increasing")
        if np.any(self.prices <= 0):
            raise ValueError(f"{self.symbol}: prices must be positive")


def nearest_trading_day(dates: Sequence[date], when: date) -> int | None:
    """Index of the trading day closest to ``when`` (earlier day on ties); None if out of range."""
    if not dates or when < dates[0] or when > dates[-1]:
        return None
    k = bisect_left(dates, when)
    if dates[k] == when or k == 0:
        return k
    before, after = dates[k - 1], dates[k]
    return k - 1 if (when - before) <= (after - when) else k


def window_log_returns(series: PriceSeries, event_dates: Iterable[date], window: int = 10):
    """Split ``window``-trading-day log returns into (with news, without news).

    An event on trading day ``k`` contributes ``log(p[k + w/2] / p[k - w/2])``.
    Every other span ``[s, s + w]`` sharing no daily return with an event
    window contributes to the without-news sample; spans may overlap each
    other.
    """
    if window < 2 or window % 2:
        raise ValueError("window must be an even number of at least 2 trading days")
    n = len(series.prices)
    if n <= window:
        raise ValueError(f"{series.symbol}: series too short for a {window}-day window")
    half = window // 2
    logp = np.log(series.prices)
    centers = set()
    for when in event_dates:
        k = nearest_trading_day(series.dates, when)
        if k is None or k - half < 0 or k + half >= n:
            logger.warning("%s: event %s outside usable price range, skipped", series.symbol, when)
            continue
        centers.add(k)
    centers = sorted(centers)
    with_news = np.array([logp[k + half] - logp[k - half] for k in centers])

    blocked = np.zeros(n - 1, dtype=bool)  # daily return t -> t+1 lies inside an event window
    for k in centers:
        blocked[k - half:k + half] = True
    starts = np.arange(n - window)
    csum = np.r_[0, np.cumsum(blocked)]
    clean = (csum[starts + window] - csum[starts]) == 0
    s = starts[clean]
    without_news = logp[s + window] - logp[s]
    return with_news, without_news


@dataclass
class SampleStats:
    count: int
    quantiles: dict[float, float]
    skewness: float


def sample_stats(sample, levels: Sequence[float] = QUANTILE_LEVELS) -> SampleStats:
    """Linear-interpolation quantiles and adjusted Fisher-Pearson skewness."""
    x = np.asarray(sample, dtype=float)
    if x.size < 3:
        raise ValueError("need at least 3 values for skewness")
    q = np.quantile(x, levels)
    return SampleStats(int(x.size), dict(zip(levels, q.tolist())), float(stats.skew(x, bias=False)))


def ks_statistic(a, b) -> float:
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample KS statistic and asymptotic p-value with ``en = m n / (m + n)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    d = ks_statistic(a, b)
    en = a.size * b.size / (a.size + b.size)
    p = float(kolmogorov(np.sqrt(en) * d)) if d > 0 else 1.0
    return d, min(1.0, max(p, np.finfo(float).tiny))


def read_prices(lines: Iterable[str]) -> dict[str, PriceSeries]:
    rows: dict[str, list[tuple[date, float]]] = {}
    for line in lines:
        if not line.strip() or line.startswith("#"):
            continue
        symbol, when, close = line.rstrip("\n").split("\t")
        if symbol == "symbol":
            continue
        rows.setdefault(symbol, []).append((date.fromisoformat(when), float(close)))
    out = {}
    for symbol, pts in rows.items():
        pts.sort()
        out[symbol] = PriceSeries(symbol, [d for d, _ in pts], np.array([p for _, p in pts]))
    return out
