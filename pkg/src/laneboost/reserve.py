"""Reserve-price policies, counterfactual revenue replay and grid calibration.

Replays hold bids fixed: bidders are assumed not to respond to the policy.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence, TextIO, Union

import numpy as np

from .auction import AuctionOutcome
from .market import Amount, RoundBounds, RoundSchedule, TimeMs, Unit, format_units, round_bounds
from .prices import InsufficientDataError, PriceSeries, VolProvider

_I64_SAFE = 2**62


@dataclass(frozen=True)
class Fixed:
    amount: Amount

    def __post_init__(self) -> None:
        if self.amount.unit is not Unit.ETH or self.amount.units < 0:
            raise ValueError("fixed reserve must be a non-negative ETH amount")


@dataclass(frozen=True)
class Schedule:
    """Step changes; before the first step the first value applies."""

    steps: tuple[tuple[TimeMs, Amount], ...]

    def __post_init__(self) -> None:
        steps = tuple((int(t), a) for t, a in self.steps)
        object.__setattr__(self, "steps", steps)
        if not steps:
            raise ValueError("schedule needs at least one step")
        for (t0, _), (t1, _) in zip(steps, steps[1:]):
            if t1 <= t0:
                raise ValueError("schedule timestamps must be strictly increasing")
        for _, a in steps:
            if a.unit is not Unit.ETH or a.units <= 0:
                raise ValueError("schedule amounts must be positive ETH")

    def value_at(self, t: TimeMs) -> Amount:
        times = [s[0] for s in self.steps]
        i = int(np.searchsorted(times, t, side="right")) - 1
        return self.steps[max(i, 0)][1]


@dataclass(frozen=True)
class VolIndexed:
    """``clamp(c * sigma^2, floor, cap)`` with sigma measured over ``window``
    ms ending at the auction close."""

    c: float
    window: int
    floor: Amount
    cap: Amount

    def __post_init__(self) -> None:
        if not np.isfinite(self.c) or self.c < 0:
            raise ValueError("c must be finite and non-negative")
        if self.window < 2_000:
            raise ValueError("volatility window must be at least 2 s")
        if self.floor.units <= 0 or self.floor.unit is not Unit.ETH or self.cap.unit is not Unit.ETH:
            raise ValueError("floor must be positive ETH")
        if self.cap < self.floor:
            raise ValueError("floor must not exceed cap")


ReservePolicy = Union[Fixed, Schedule, VolIndexed]


def _int_array(values) -> np.ndarray:
    """int64 when every value is safely inside int64, otherwise python ints."""
    vals = [int(v) for v in values]
    if all(-_I64_SAFE < v < _I64_SAFE for v in vals):
        return np.array(vals, dtype=np.int64)
    return np.array(vals, dtype=object)


def _vol_reserve_units(c: float, sigma: np.ndarray, floor: int, cap: int) -> np.ndarray:
    """``clamp(rint(c * sigma^2 * 1e18), floor, cap)`` in 1e-18 ETH units."""
    x = c * sigma * sigma * 1e18
    lo = x <= float(floor)
    hi = x >= float(cap)
    mid = ~(lo | hi)
    if cap < _I64_SAFE:
        out = np.empty(sigma.size, dtype=np.int64)
        out[mid] = np.clip(np.rint(x[mid]).astype(np.int64), floor, cap)
    else:
        out = np.empty(sigma.size, dtype=object)
        out[mid] = [min(max(int(v), floor), cap) for v in np.rint(x[mid])]
    out[lo] = floor
    out[hi] = cap
    return out


class ReserveVector(NamedTuple):
    units: np.ndarray  # int64, or python ints when values exceed int64
    fallback: np.ndarray  # bool, vol data missing -> floor used


def reserves_for(policy: ReservePolicy, starts: np.ndarray, closes: np.ndarray,
                 vol: Optional[VolProvider] = None) -> ReserveVector:
    """Reserve for many rounds at once; :func:`reserve_at` is the one-round case."""
    starts = np.asarray(starts, dtype=np.int64)
    closes = np.asarray(closes, dtype=np.int64)
    n = starts.size
    fallback = np.zeros(n, dtype=bool)
    if isinstance(policy, Fixed):
        units = _int_array([policy.amount.units] * n)
    elif isinstance(policy, Schedule):
        times = np.array([s[0] for s in policy.steps], dtype=np.int64)
        vals = _int_array([s[1].units for s in policy.steps])
        idx = np.clip(np.searchsorted(times, starts, side="right") - 1, 0, None)
        units = vals[idx]
    elif isinstance(policy, VolIndexed):
        covered = _covered(vol.series, closes, policy.window) if vol is not None else np.zeros(n, bool)
        sigma = np.zeros(n)
        if covered.any():
            sigma[covered] = vol.sigmas(closes[covered], policy.window)
        units = _vol_reserve_units(policy.c, sigma, policy.floor.units, policy.cap.units)
        units[~covered] = policy.floor.units
        fallback = ~covered
    else:
        raise TypeError(f"unknown policy {policy!r}")
    return ReserveVector(units, fallback)


def _covered(series: PriceSeries, closes: np.ndarray, window: int) -> np.ndarray:
    ok = (closes - window >= series.first) & (closes < series.last + series.resolution)
    # at least two samples inside the window
    i0 = np.searchsorted(series.times, closes - window, side="left")
    i1 = np.searchsorted(series.times, closes, side="right") - 1
    return ok & (i1 - i0 >= 1)


def reserve_detail(policy: ReservePolicy, bounds: RoundBounds,
                   vol: Optional[VolProvider] = None) -> tuple[Amount, bool]:
    """Reserve for one round and whether it fell back to the floor."""
    rv = reserves_for(policy, np.array([bounds.start]), np.array([bounds.bid_close]), vol)
    return Amount(int(rv.units[0]), Unit.ETH), bool(rv.fallback[0])


def reserve_at(policy: ReservePolicy, bounds: RoundBounds, vol: Optional[VolProvider] = None) -> Amount:
    return reserve_detail(policy, bounds, vol)[0]


# --- replay ------------------------------------------------------------------


@dataclass(frozen=True)
class HistoricalRounds:
    """Columnar round data: top and second admissible bids in 1e-18 ETH units
    (0 when absent)."""

    starts: np.ndarray
    closes: np.ndarray
    top: np.ndarray
    second: np.ndarray

    def __post_init__(self) -> None:
        arrs = [np.asarray(a, dtype=np.int64) for a in (self.starts, self.closes)]
        tops = _int_array(self.top)
        secs = _int_array(self.second)
        n = arrs[0].size
        if any(a.size != n for a in (arrs[1], tops, secs)):
            raise ValueError("round columns must be equally long")
        if n and (np.any(secs > tops) or np.any(secs < 0)):
            raise ValueError("second bid must satisfy 0 <= second <= top")
        for name, a in zip(("starts", "closes", "top", "second"), (*arrs, tops, secs)):
            object.__setattr__(self, name, a)

    def __len__(self) -> int:
        return int(self.starts.size)

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[TimeMs, TimeMs, Amount, Optional[Amount]]]) -> "HistoricalRounds":
        rows = list(rows)
        return cls(
            np.array([r[0] for r in rows], dtype=np.int64),
            np.array([r[1] for r in rows], dtype=np.int64),
            [r[2].units for r in rows],
            [r[3].units if r[3] is not None else 0 for r in rows],
        )

    @classmethod
    def from_outcomes(cls, outcomes: Sequence[AuctionOutcome], sched: RoundSchedule) -> "HistoricalRounds":
        rows = []
        for o in outcomes:
            b = round_bounds(o.round_index, sched)
            top = o.top_bid if o.top_bid is not None else Amount.zero()
            rows.append((b.start, b.bid_close, top, o.second_bid))
        return cls.from_rows(rows)

    @property
    def benchmark_units(self) -> int:
        return int(sum(self.top.tolist()))


class ReplayResult(NamedTuple):
    revenue: Amount
    recovery_ratio: float
    sales: int
    fallback_rounds: int


def _replay_units(reserve_units: np.ndarray, top: np.ndarray, second: np.ndarray) -> tuple[int, int]:
    sold = (top >= reserve_units) & (top > 0)
    paid = np.where(second > reserve_units, second, reserve_units)
    return int(sum(paid[sold].tolist())), int(np.count_nonzero(sold))


def replay_revenue(policy: ReservePolicy, rounds: HistoricalRounds,
                   vol: Optional[VolProvider] = None) -> ReplayResult:
    """Counterfactual second-price revenue under ``policy`` with bids held fixed.

    A round sells iff its top bid is at or above the reserve; it then pays
    ``max(second bid, reserve)``.
    """
    rv = reserves_for(policy, rounds.starts, rounds.closes, vol)
    rev, sales = _replay_units(rv.units, rounds.top, rounds.second)
    bench = rounds.benchmark_units
    ratio = rev / bench if bench else 0.0
    return ReplayResult(Amount(rev, Unit.ETH), ratio, sales, int(rv.fallback.sum()))


# --- calibration -------------------------------------------------------------


class GridCell(NamedTuple):
    window: int  # ms
    c: float
    recovery_ratio: float


@dataclass(frozen=True)
class CalibrationReport:
    grid: tuple[GridCell, ...]
    best: GridCell
    benchmark: Amount
    rounds: int
    fallback_rounds: dict[int, int]


def _best(grid: Sequence[GridCell]) -> GridCell:
    return min(grid, key=lambda g: (-g.recovery_ratio, g.c, g.window))


def _eval_window(args) -> list[GridCell]:
    series, rounds, window, cs, floor, cap = args
    vol = VolProvider(series)
    out = []
    for c in cs:
        res = replay_revenue(VolIndexed(c, window, floor, cap), rounds, vol)
        out.append(GridCell(window, c, res.recovery_ratio))
    return out


def calibrate(rounds: HistoricalRounds, series: PriceSeries, windows: Sequence[int], cs: Sequence[float],
              floor: Amount, cap: Amount, jobs: int = 1) -> CalibrationReport:
    """Evaluate the volatility-indexed rule on the full (window, c) grid.

    Best cell maximises recovery; ties go to the smaller c, then the smaller
    window. Output order is windows-major regardless of ``jobs``.
    """
    if len(rounds) == 0:
        raise ValueError("calibration needs at least one round")
    if not windows or not cs:
        raise ValueError("calibration grids must be non-empty")
    tasks = [(series, rounds, int(w), [float(c) for c in cs], floor, cap) for w in windows]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_eval_window, tasks))
    else:
        parts = [_eval_window(t) for t in tasks]
    grid = tuple(cell for part in parts for cell in part)
    covered = {}
    for w in windows:
        covered[int(w)] = int((~_covered(series, rounds.closes, int(w))).sum())
    return CalibrationReport(grid, _best(grid), Amount(rounds.benchmark_units, Unit.ETH),
                             len(rounds), covered)


def write_calibration(report: CalibrationReport, grid_fh: TextIO, summary_fh: TextIO) -> None:
    w = csv.writer(grid_fh, lineterminator="\n")
    w.writerow(["window_s", "c", "recovery_ratio"])
    for g in report.grid:
        w.writerow([_fmt_window(g.window), repr(g.c), repr(g.recovery_ratio)])
    summary = {
        "best": {"window_s": _fmt_window(report.best.window), "c": report.best.c,
                 "recovery_ratio": report.best.recovery_ratio},
        "benchmark_top_bids_eth": format_units(report.benchmark.units),
        "rounds": report.rounds,
        "floor_fallback_rounds": {_fmt_window(k): v for k, v in report.fallback_rounds.items()},
        "assumption": "bids held fixed; no strategic response to the counterfactual reserve",
    }
    summary_fh.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _fmt_window(ms: int):
    return ms // 1000 if ms % 1000 == 0 else ms / 1000


__all__ = [
    "Fixed", "Schedule", "VolIndexed", "ReservePolicy", "reserve_at", "reserve_detail", "reserves_for",
    "HistoricalRounds", "ReplayResult", "replay_revenue", "GridCell", "CalibrationReport", "calibrate",
    "write_calibration", "InsufficientDataError",
]
