"""1-second mid-price series, realized volatility and markout PnL."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter

from .market import Amount, EntityId, TimeMs, Unit
from .sequencer import Lane

STABLECOINS = frozenset({"USD", "USDC", "USDT"})
# wrapped tokens are priced off their CEX underlying
DEFAULT_ALIASES = {"WETH": "ETH", "WBTC": "BTC"}


class CoverageError(LookupError):
    """Price data does not cover the requested time."""


class InsufficientDataError(ValueError):
    """Fewer than two samples inside a volatility window."""


@dataclass(frozen=True, eq=False)
class PriceSeries:
    asset: str
    times: np.ndarray
    prices: np.ndarray
    resolution: int = 1000

    def __post_init__(self) -> None:
        t = np.array(self.times, dtype=np.int64)
        p = np.array(self.prices, dtype=np.float64)
        if t.ndim != 1 or t.shape != p.shape:
            raise ValueError("times and prices must be 1-D and equally long")
        if t.size == 0:
            raise ValueError(f"empty price series for {self.asset}")
        if t.size > 1:
            d = np.diff(t)
            if np.any(d <= 0):
                raise ValueError(f"{self.asset}: timestamps not strictly increasing")
            if np.any(d != self.resolution):
                bad = int(t[1:][d != self.resolution][0])
                raise ValueError(f"{self.asset}: gap in {self.resolution} ms grid at {bad}")
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            raise ValueError(f"{self.asset}: prices must be finite and positive")
        t.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "prices", p)

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def first(self) -> TimeMs:
        return int(self.times[0])

    @property
    def last(self) -> TimeMs:
        return int(self.times[-1])

    def covers(self, t: TimeMs) -> bool:
        return self.first <= t < self.last + self.resolution

    def index_at_or_before(self, t: TimeMs) -> int:
        return int(np.searchsorted(self.times, t, side="right")) - 1

    def price_at(self, t: TimeMs) -> float:
        """Mid price of the last sample at or before ``t``."""
        first = self._first
        i = (t - first) // self.resolution
        if t < first or i >= len(self._plist):
            raise CoverageError(f"{self.asset} has no price at {t}")
        return self._plist[i]

    @cached_property
    def _plist(self) -> list[float]:
        return self.prices.tolist()

    @cached_property
    def _first(self) -> int:
        return int(self.times[0])

    @cached_property
    def log_returns(self) -> np.ndarray:
        r = np.diff(np.log(self.prices))
        r.setflags(write=False)
        return r


def _window_indices(series: PriceSeries, ends: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    starts = ends - window
    if starts.size and (starts.min() < series.first or ends.max() >= series.last + series.resolution):
        raise InsufficientDataError(f"{series.asset}: series does not cover the volatility window")
    i0 = np.searchsorted(series.times, starts, side="left")
    i1 = np.searchsorted(series.times, ends, side="right") - 1
    return i0, i1


def _std_rows(rows: np.ndarray) -> np.ndarray:
    mean = rows.sum(axis=1) / rows.shape[1]
    dev = rows - mean[:, None]
    return np.sqrt((dev * dev).sum(axis=1) / rows.shape[1])


def realized_vols(series: PriceSeries, ends: Sequence[int] | np.ndarray, window: int,
                  chunk: int = 4096) -> np.ndarray:
    """Population std of consecutive 1 s log returns in ``[end - window, end]``
    for each end. Vectorised; :func:`realized_vol` is the one-element case."""
    ends = np.asarray(ends, dtype=np.int64)
    out = np.empty(ends.size, dtype=np.float64)
    if ends.size == 0:
        return out
    i0, i1 = _window_indices(series, ends, window)
    counts = i1 - i0  # number of returns in each window
    if np.any(counts < 1):
        raise InsufficientDataError(f"{series.asset}: fewer than 2 samples in a {window} ms window")
    lr = series.log_returns
    for n in np.unique(counts):
        sel = np.flatnonzero(counts == n)
        view = sliding_window_view(lr, int(n))
        for k in range(0, sel.size, chunk):
            part = sel[k:k + chunk]
            out[part] = _std_rows(view[i0[part]])
    return out


def realized_vol(series: PriceSeries, end: TimeMs, window: int) -> float:
    return float(realized_vols(series, [end], window)[0])


class VolProvider:
    """Caches realized volatility of one series per (window, end)."""

    def __init__(self, series: PriceSeries):
        self.series = series
        self._cache: dict[tuple[int, bytes], np.ndarray] = {}

    def sigma(self, end: TimeMs, window: int) -> float:
        return realized_vol(self.series, end, window)

    def sigmas(self, ends: np.ndarray, window: int) -> np.ndarray:
        ends = np.asarray(ends, dtype=np.int64)
        key = (int(window), ends.tobytes())
        hit = self._cache.get(key)
        if hit is None:
            hit = self._cache[key] = realized_vols(self.series, ends, window)
        return hit


# --- trades and markouts ---------------------------------------------------


@dataclass(frozen=True)
class Trade:
    trade_id: str
    t: TimeMs
    buy_asset: str
    x: float
    sell_asset: str
    y: float
    fees: Amount = field(default_factory=lambda: Amount.zero(Unit.USD))
    lane: Lane = Lane.REGULAR
    sender: EntityId = ""

    def __post_init__(self) -> None:
        if self.x < 0 or self.y < 0:
            raise ValueError(f"trade {self.trade_id}: x and y must be non-negative")
        if self.fees.unit is not Unit.USD or self.fees.units < 0:
            raise ValueError(f"trade {self.trade_id}: fees must be non-negative USD")


def usd_price(asset: str, t: TimeMs, prices: Mapping[str, PriceSeries],
              aliases: Mapping[str, str] = DEFAULT_ALIASES) -> float:
    """USD price of ``asset`` at ``t`` (stablecoins are 1.0 unless a series is given)."""
    key = aliases.get(asset, asset)
    s = prices.get(asset) or prices.get(key)
    if s is not None:
        return s.price_at(t)
    if asset in STABLECOINS or key in STABLECOINS:
        return 1.0
    raise CoverageError(f"no price series for {asset}")


def markout_pnl(trade: Trade, prices: Mapping[str, PriceSeries], m: int = 5_000,
                aliases: Mapping[str, str] = DEFAULT_ALIASES) -> float:
    """``x * P_A(t+m) - y * P_B(t+m) - fees`` in USD."""
    h = trade.t + m
    pa = usd_price(trade.buy_asset, h, prices, aliases)
    pb = usd_price(trade.sell_asset, h, prices, aliases)
    return trade.x * pa - trade.y * pb - float(trade.fees)


# --- synthetic series ------------------------------------------------------


def step_value(schedule: Sequence[tuple[int, float]], t: np.ndarray) -> np.ndarray:
    """Right-continuous step function: value of the latest step at or before t."""
    ts = np.array([s[0] for s in schedule], dtype=np.int64)
    vs = np.array([s[1] for s in schedule], dtype=np.float64)
    idx = np.searchsorted(ts, t, side="right") - 1
    return vs[np.clip(idx, 0, None)]


def generate_series(
    seed: int | np.random.Generator,
    vol_schedule: Sequence[tuple[int, float]],
    start: TimeMs,
    length: int,
    p0: float = 3000.0,
    asset: str = "ETH",
    vol_of_vol: float = 0.0,
    vol_persistence: float = 0.999,
    resolution: int = 1000,
) -> PriceSeries:
    """Geometric random walk at ``resolution`` steps.

    ``vol_schedule`` gives per-step log-return vol from each timestamp on. When
    ``vol_of_vol > 0`` the step vol is multiplied by ``exp(h)`` with ``h`` an
    AR(1) factor of stationary std ``vol_of_vol``.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    if not vol_schedule or any(v <= 0 for _, v in vol_schedule):
        raise ValueError("per-regime vol must be positive")
    if not 0 <= vol_persistence < 1:
        raise ValueError("vol_persistence must be in [0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    times = start + resolution * np.arange(length, dtype=np.int64)
    base = step_value(vol_schedule, times[:-1])
    z = rng.standard_normal(length - 1)
    if vol_of_vol > 0:
        eta = rng.standard_normal(length - 1)
        innov = vol_of_vol * np.sqrt(1.0 - vol_persistence**2)
        h = lfilter([innov], [1.0, -vol_persistence], eta)
        base = base * np.exp(h)
    steps = base * z - 0.5 * base * base
    logp = np.log(p0) + np.concatenate(([0.0], np.cumsum(steps)))
    return PriceSeries(asset, times, np.exp(logp), resolution)
