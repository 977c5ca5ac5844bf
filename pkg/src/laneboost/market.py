"""Core domain types: fixed-point amounts, UTC millisecond time, round schedule
and regime segmentation."""

from __future__ import annotations

import bisect
import functools
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from decimal import ROUND_HALF_EVEN, Context, Decimal, InvalidOperation
from enum import Enum
from typing import NamedTuple, Sequence, Union

import numpy as np

TimeMs = int
EntityId = str

DECIMALS = 18
SCALE = 10**DECIMALS

SECOND_MS = 1_000
MINUTE_MS = 60_000
HOUR_MS = 3_600_000
DAY_MS = 86_400_000


class Unit(str, Enum):
    ETH = "ETH"
    USD = "USD"
    TOKEN = "token-units"


Number = Union[int, str, Decimal, float]

# wide enough that quantizing any realistic atto-unit product stays exact
_CTX = Context(prec=80)


def _to_decimal(value: Number) -> Decimal:
    if isinstance(value, float):
        # repr gives the shortest round-tripping literal, so 0.0075 stays 0.0075
        return Decimal(repr(value))
    try:
        return Decimal(value)
    except InvalidOperation as exc:
        raise ValueError(f"not a decimal amount: {value!r}") from exc


@functools.total_ordering
@dataclass(frozen=True, slots=True)
class Amount:
    """Exact quantity stored as an integer count of 1e-18 units.

    Arithmetic between amounts is integer arithmetic, so sums never drift.
    Mixing units raises ``ValueError``.
    """

    units: int
    unit: Unit = Unit.ETH

    @classmethod
    def of(cls, value: Number, unit: Unit = Unit.ETH) -> "Amount":
        """Parse ``value`` exactly; floats go through their shortest repr."""
        d = _to_decimal(value)
        if not d.is_finite():
            raise ValueError(f"non-finite amount: {value!r}")
        q = _CTX.multiply(d, SCALE).quantize(Decimal(1), rounding=ROUND_HALF_EVEN, context=_CTX)
        return cls(int(q), unit)

    @classmethod
    def zero(cls, unit: Unit = Unit.ETH) -> "Amount":
        return cls(0, unit)

    def _check(self, other: "Amount") -> None:
        if not isinstance(other, Amount):
            raise TypeError(f"expected Amount, got {type(other).__name__}")
        if other.unit != self.unit:
            raise ValueError(f"unit mismatch: {self.unit.value} vs {other.unit.value}")

    def __add__(self, other: "Amount") -> "Amount":
        self._check(other)
        return Amount(self.units + other.units, self.unit)

    def __radd__(self, other):
        # lets builtin sum() start from 0
        if other == 0:
            return self
        return self.__add__(other)

    def __sub__(self, other: "Amount") -> "Amount":
        self._check(other)
        return Amount(self.units - other.units, self.unit)

    def __neg__(self) -> "Amount":
        return Amount(-self.units, self.unit)

    def __lt__(self, other: "Amount") -> bool:
        self._check(other)
        return self.units < other.units

    def __float__(self) -> float:
        return self.units / SCALE

    def __bool__(self) -> bool:
        return self.units != 0

    def to_decimal(self) -> Decimal:
        return Decimal(self.units).scaleb(-DECIMALS)

    def scale(self, factor: Number, unit: Unit | None = None) -> "Amount":
        """Multiply by a real factor, rounding half-even to the nearest 1e-18."""
        if type(factor) is float:
            r = _scale_float(self.units, factor)
            if r is not None:
                return Amount(r, unit or self.unit)
        d = _CTX.multiply(Decimal(self.units), _to_decimal(factor))
        q = d.quantize(Decimal(1), rounding=ROUND_HALF_EVEN, context=_CTX)
        return Amount(int(q), unit or self.unit)

    def to_usd(self, price: Number) -> "Amount":
        return self.scale(price, Unit.USD)

    def __str__(self) -> str:
        return format_units(self.units)

    def __repr__(self) -> str:
        return f"Amount({format_units(self.units)} {self.unit.value})"


def _scale_float(units: int, factor: float) -> int | None:
    """Integer-only ``units * Decimal(repr(factor))`` rounded half-even, or None
    when the repr is in exponent form (left to the Decimal path)."""
    text = repr(factor)
    if "e" in text or "n" in text:
        return None
    whole, _, frac = text.partition(".")
    num = units * int(whole + frac)
    if not frac:
        return num
    q, r = divmod(num, 10 ** len(frac))
    twice = 2 * r
    d = 10 ** len(frac)
    if twice > d or (twice == d and q & 1):
        q += 1
    return q


def format_units(units: int) -> str:
    """Plain decimal string of an atto-unit count with trailing zeros stripped."""
    sign = "-" if units < 0 else ""
    whole, frac = divmod(abs(units), SCALE)
    if frac == 0:
        return f"{sign}{whole}"
    return f"{sign}{whole}.{frac:018d}".rstrip("0")


def eth(value: Number) -> Amount:
    return Amount.of(value, Unit.ETH)


def usd(value: Number) -> Amount:
    return Amount.of(value, Unit.USD)


_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


def parse_utc(text: str) -> TimeMs:
    """``'2026-02-12 20:31:51'`` (optionally with ``.fff`` and/or ``UTC``) -> ms."""
    s = text.strip().removesuffix("UTC").removesuffix("Z").strip().replace("T", " ")
    for fmt in ("%Y-%m-%d %H:%M:%S.%f", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d"):
        try:
            dt = datetime.strptime(s, fmt).replace(tzinfo=timezone.utc)
        except ValueError:
            continue
        return (dt - _EPOCH) // timedelta(milliseconds=1)
    raise ValueError(f"unparseable UTC timestamp: {text!r}")


def format_utc(t: TimeMs) -> str:
    dt = datetime.fromtimestamp(t // 1000, tz=timezone.utc)
    ms = t % 1000
    base = dt.strftime("%Y-%m-%d %H:%M:%S")
    return f"{base}.{ms:03d}" if ms else base


# --- regimes ---------------------------------------------------------------

PRE_KAIROS = "Pre-Kairos"
KAIROS = "Kairos"
RESERVE_ADAPTATION = "ReservePriceAdaptation"
STEADY_STATE = "SteadyState"
REGIME_NAMES = (PRE_KAIROS, KAIROS, RESERVE_ADAPTATION, STEADY_STATE)


class OutOfRangeError(ValueError):
    """Timestamp precedes the first regime boundary."""


@dataclass(frozen=True)
class RegimeSegmentation:
    boundaries: tuple[tuple[TimeMs, str], ...]

    def __post_init__(self) -> None:
        b = tuple((int(t), str(name)) for t, name in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        if not b:
            raise ValueError("segmentation needs at least one boundary")
        for t, name in b:
            if t < 0:
                raise ValueError(f"negative boundary timestamp {t}")
            if not name:
                raise ValueError("empty regime name")
        for (t0, _), (t1, _) in zip(b, b[1:]):
            if t1 <= t0:
                raise ValueError(f"boundaries not strictly increasing at {t1}")
        object.__setattr__(self, "_starts", [t for t, _ in b])

    @property
    def names(self) -> list[str]:
        return [name for _, name in self.boundaries]

    @property
    def start(self) -> TimeMs:
        return self.boundaries[0][0]

    def interval(self, name: str) -> tuple[TimeMs, TimeMs | None]:
        for i, (t, n) in enumerate(self.boundaries):
            if n == name:
                end = self.boundaries[i + 1][0] if i + 1 < len(self.boundaries) else None
                return t, end
        raise KeyError(name)


def regime_of(t: TimeMs, seg: RegimeSegmentation) -> str:
    """Name of the half-open interval ``[b_i, b_{i+1})`` containing ``t``."""
    if t < seg.start:
        raise OutOfRangeError(f"t={t} precedes first boundary {seg.start}")
    i = bisect.bisect_right(seg._starts, t) - 1
    return seg.boundaries[i][1]


def regime_index_many(ts: Sequence[int] | np.ndarray, seg: RegimeSegmentation) -> np.ndarray:
    """Vectorised regime lookup returning indices into ``seg.boundaries``."""
    arr = np.asarray(ts, dtype=np.int64)
    if arr.size and arr.min() < seg.start:
        raise OutOfRangeError(f"t={int(arr.min())} precedes first boundary {seg.start}")
    return np.searchsorted(np.asarray(seg._starts, dtype=np.int64), arr, side="right") - 1


STUDY_START = parse_utc("2026-02-01 00:00:00")
OBSERVED_SEGMENTATION = RegimeSegmentation(
    (
        (STUDY_START, PRE_KAIROS),
        (parse_utc("2026-02-12 20:31:51"), KAIROS),
        (parse_utc("2026-02-18 20:01:51"), RESERVE_ADAPTATION),
        (parse_utc("2026-02-25 19:49:51"), STEADY_STATE),
    )
)


# --- rounds ----------------------------------------------------------------


class RoundBounds(NamedTuple):
    start: TimeMs
    bid_close: TimeMs
    end: TimeMs


@dataclass(frozen=True)
class RoundSchedule:
    round_length: int = 60_000
    wall_clock_shift: int = 9_000
    bid_close_offset: int = 45_000

    def __post_init__(self) -> None:
        if self.round_length <= 0:
            raise ValueError("round_length must be positive")
        if not 0 < self.bid_close_offset < self.round_length:
            raise ValueError("need 0 < bid_close_offset < round_length")
        if not 0 <= self.wall_clock_shift < self.round_length:
            raise ValueError("need 0 <= wall_clock_shift < round_length")

    @property
    def phase(self) -> int:
        """Offset of round boundaries within the wall-clock period (51 s by default)."""
        return (self.round_length - self.wall_clock_shift) % self.round_length

    def index_at(self, t: TimeMs) -> int:
        """Index of the round whose ``[start, end)`` contains ``t``."""
        return (t - self.phase) // self.round_length


def round_bounds(round_index: int, sched: RoundSchedule) -> RoundBounds:
    if round_index < 0:
        raise ValueError("round_index must be >= 0")
    start = round_index * sched.round_length + sched.phase
    return RoundBounds(start, start + sched.bid_close_offset, start + sched.round_length)
