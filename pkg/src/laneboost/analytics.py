"""Empirical metrics over auction outcomes and marked trades.

Everything here is applied identically to simulated traces and replayed data.
Rounds are attributed to regimes and UTC hours/days by their start time; trades
by their execution time.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np
from scipy import special

from .auction import AuctionOutcome
from .market import (
    DAY_MS,
    HOUR_MS,
    Amount,
    EntityId,
    RegimeSegmentation,
    RoundSchedule,
    TimeMs,
    Unit,
    regime_of,
    round_bounds,
)
from .prices import PriceSeries, Trade
from .sequencer import Lane

OVERALL = "Overall"

# --- classification ----------------------------------------------------------

LIQUID_ASSETS = frozenset({"WETH", "WBTC", "ARB", "USDC", "USDT"})


class MalformedRecord(ValueError):
    pass


@dataclass(frozen=True)
class ClassifierRules:
    target_contracts: Mapping[EntityId, frozenset[str]]
    liquid_assets: frozenset[str] = LIQUID_ASSETS
    max_swap_events: int = 1

    def __post_init__(self) -> None:
        if not self.target_contracts or not any(self.target_contracts.values()):
            raise ValueError("target_contracts must be non-empty")
        if not self.liquid_assets:
            raise ValueError("liquid_assets must be non-empty")
        norm = {e: frozenset(c.lower() for c in cs) for e, cs in self.target_contracts.items()}
        object.__setattr__(self, "target_contracts", norm)

    @property
    def all_contracts(self) -> frozenset[str]:
        return frozenset().union(*self.target_contracts.values())


KNOWN_CONTRACTS = {
    "selini": frozenset({"0xee2e7bbb67676292af2e31dffd1fea2276d6c7ba"}),
    "wintermute": frozenset({"0x27920e8039d2b6e93e36f5d5f53b998e2e631a70"}),
}


@dataclass(frozen=True)
class TxRecord:
    contract: str
    swap_events: int
    asset_a: str
    asset_b: str


def classify_cex_dex(rec: TxRecord, rules: ClassifierRules) -> bool:
    """Targets a known contract, emits exactly one swap event, and trades a
    pair of known liquid assets."""
    if not rec.contract or not rec.asset_a or not rec.asset_b:
        raise MalformedRecord(f"incomplete record {rec!r}")
    if not isinstance(rec.swap_events, int) or rec.swap_events < 0:
        raise MalformedRecord(f"bad swap-event count in {rec!r}")
    return (
        rec.contract.lower() in rules.all_contracts
        and rec.swap_events == rules.max_swap_events
        and rec.asset_a.upper() in rules.liquid_assets
        and rec.asset_b.upper() in rules.liquid_assets
        and rec.asset_a.upper() != rec.asset_b.upper()
    )


def classify_many(records: Iterable[TxRecord], rules: ClassifierRules) -> tuple[list[bool], int]:
    """Flags per record (malformed ones False) and the number skipped as malformed."""
    flags, skipped = [], 0
    for r in records:
        try:
            flags.append(classify_cex_dex(r, rules))
        except MalformedRecord:
            flags.append(False)
            skipped += 1
    return flags, skipped


# --- round helpers -----------------------------------------------------------


@dataclass(frozen=True)
class RoundView:
    outcome: AuctionOutcome
    start: TimeMs
    bid_close: TimeMs
    regime: str


def round_views(outcomes: Iterable[AuctionOutcome], sched: RoundSchedule,
                seg: RegimeSegmentation) -> list[RoundView]:
    out = []
    for o in outcomes:
        b = round_bounds(o.round_index, sched)
        out.append(RoundView(o, b.start, b.bid_close, regime_of(b.start, seg)))
    return out


def _regimes(seg: RegimeSegmentation) -> list[str]:
    seen: list[str] = []
    for n in seg.names:
        if n not in seen:
            seen.append(n)
    return seen


def relative_bid_gap(outcome: AuctionOutcome) -> Optional[float]:
    """``(top - paid) / top`` for a settled round, None otherwise."""
    if not outcome.settled:
        return None
    top, paid = outcome.top_bid.units, outcome.paid.units
    return (top - paid) / top


def _median(xs: Sequence[float]) -> float:
    return float(np.median(np.asarray(xs, dtype=float))) if len(xs) else math.nan


class GapSummary(NamedTuple):
    regime: str
    rounds: int
    median_gap: float  # over rounds
    days: int
    median_daily_gap: float  # median of the per-UTC-day medians


def daily_gaps(views: Sequence[RoundView]) -> list[tuple[str, int, int, float]]:
    """(regime, utc_day_start_ms, n, median gap) per regime-day."""
    buckets: dict[tuple[str, int], list[float]] = defaultdict(list)
    for v in views:
        g = relative_bid_gap(v.outcome)
        if g is not None:
            buckets[(v.regime, v.start - v.start % DAY_MS)].append(g)
    return [(r, d, len(gs), _median(gs)) for (r, d), gs in sorted(buckets.items(), key=lambda kv: (kv[0][1], kv[0][0]))]


def gap_summary(views: Sequence[RoundView], seg: RegimeSegmentation) -> list[GapSummary]:
    per_round: dict[str, list[float]] = defaultdict(list)
    for v in views:
        g = relative_bid_gap(v.outcome)
        if g is not None:
            per_round[v.regime].append(g)
            per_round[OVERALL].append(g)
    per_day: dict[str, list[float]] = defaultdict(list)
    for regime, _, _, med in daily_gaps(views):
        per_day[regime].append(med)
    whole_days: dict[int, list[float]] = defaultdict(list)
    for v in views:
        g = relative_bid_gap(v.outcome)
        if g is not None:
            whole_days[v.start - v.start % DAY_MS].append(g)
    # overall days are whole UTC days, not regime-days
    per_day[OVERALL] = [_median(gs) for _, gs in sorted(whole_days.items())]
    return [
        GapSummary(r, len(per_round[r]), _median(per_round[r]), len(per_day[r]), _median(per_day[r]))
        for r in _regimes(seg) + [OVERALL]
    ]


# --- win shares and combinations ----------------------------------------------


class ShareRow(NamedTuple):
    label: str
    regime: str
    count: int
    rounds: int
    share: float


def _with_bids(views: Iterable[RoundView]) -> list[RoundView]:
    return [v for v in views if v.outcome.admissible_bid_count > 0]


def win_shares(views: Sequence[RoundView], seg: RegimeSegmentation,
               entities: Sequence[EntityId] = ()) -> list[ShareRow]:
    """Wins per entity over rounds with at least one bid, per regime and overall."""
    active = _with_bids(views)
    names = list(entities) + sorted({v.outcome.winner for v in active if v.outcome.winner} - set(entities))
    rows = []
    for name in names:
        for regime in _regimes(seg) + [OVERALL]:
            rs = [v for v in active if regime == OVERALL or v.regime == regime]
            wins = sum(1 for v in rs if v.outcome.winner == name)
            rows.append(ShareRow(name, regime, wins, len(rs), wins / len(rs) if rs else 0.0))
    return rows


def combination_labels(focus: Sequence[tuple[EntityId, str]]) -> list[tuple[frozenset, str]]:
    """The 2^k participation subsets of the focus entities, largest first, in
    the order the reference tables use (all, pairs, singles, none)."""
    ids = [e for e, _ in focus]
    short = dict(focus)
    k = len(ids)
    subsets = []
    for size in range(k, -1, -1):
        for mask in range(2**k - 1, -1, -1):
            members = [ids[i] for i in range(k) if mask >> (k - 1 - i) & 1]
            if len(members) == size:
                subsets.append(frozenset(members))
    labels = []
    for s in subsets:
        members = [e for e in ids if e in s]
        if not members:
            lab = "None"
        elif len(members) == 1:
            lab = f"Only {short[members[0]]}"
        else:
            lab = " + ".join(short[e] for e in members)
        labels.append((s, lab))
    return labels


DEFAULT_FOCUS = (("wintermute", "WM"), ("selini", "Sel"), ("kairos", "Kai"))
OTHER_BIDDERS = "Other bidders present"


def bidder_combinations(views: Sequence[RoundView], seg: RegimeSegmentation,
                        focus: Sequence[tuple[EntityId, str]] = DEFAULT_FOCUS) -> list[ShareRow]:
    """Partition rounds with >= 1 bid by which focus entities bid.

    Non-focus bidders are ignored for the partition; the extra
    ``OTHER_BIDDERS`` row counts rounds where any of them took part.
    """
    active = _with_bids(views)
    ids = {e for e, _ in focus}
    parts = [(v.regime, frozenset(v.outcome.participants)) for v in active]
    rows = []
    for s, lab in combination_labels(focus) + [(None, OTHER_BIDDERS)]:
        for regime in _regimes(seg) + [OVERALL]:
            rs = [p for r, p in parts if regime == OVERALL or r == regime]
            if s is None:
                n = sum(1 for p in rs if p - ids)
            else:
                n = sum(1 for p in rs if p & ids == s)
            rows.append(ShareRow(lab, regime, n, len(rs), n / len(rs) if rs else 0.0))
    return rows


# --- bid distribution ----------------------------------------------------------


class DistRow(NamedTuple):
    bidder: EntityId
    regime: str
    n: int
    p25: float
    median: float
    p75: float
    p99: float
    mean: float


def bid_distribution(views: Sequence[RoundView], seg: RegimeSegmentation) -> list[DistRow]:
    """Percentiles (linear interpolation) of counted bids in ETH per bidder and regime."""
    data: dict[tuple[EntityId, str], list[float]] = defaultdict(list)
    for v in views:
        for bidder, amt in v.outcome.bids:
            data[(bidder, v.regime)].append(float(amt))
    order = {r: i for i, r in enumerate(_regimes(seg))}
    rows = []
    for (bidder, regime), xs in sorted(data.items(), key=lambda kv: (order[kv[0][1]], kv[0][0])):
        a = np.asarray(xs)
        q = np.percentile(a, [25, 50, 75, 99])
        rows.append(DistRow(bidder, regime, a.size, *map(float, q), float(a.mean())))
    return rows


# --- correlation -------------------------------------------------------------


class UndefinedCorrelation(ValueError):
    pass


class Pearson(NamedTuple):
    r: float
    p: float
    n: int


def pearson_with_p(x: Sequence[float], y: Sequence[float]) -> Pearson:
    """Pearson r with a two-sided p-value from Student's t on n - 2 dof."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise ValueError("x and y must be 1-D and aligned")
    n = xa.size
    if n < 3:
        raise ValueError("need at least 3 observations")
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelation("zero variance")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    df = n - 2
    if abs(r) == 1.0:
        return Pearson(r, 0.0, n)
    t2 = r * r * df / (1.0 - r * r)
    # P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)
    p = float(special.betainc(0.5 * df, 0.5, df / (df + t2)))
    return Pearson(r, p, n)


def hourly_vol(series: PriceSeries, hours: Iterable[int]) -> dict[int, float]:
    """Population std of the 1 s log returns whose both samples fall in each
    UTC hour; hours with fewer than two samples are omitted."""
    out = {}
    lr = series.log_returns
    for h in hours:
        i0 = int(np.searchsorted(series.times, h, side="left"))
        i1 = int(np.searchsorted(series.times, h + HOUR_MS, side="left")) - 1
        if i1 - i0 >= 1:
            seg = lr[i0:i1]
            out[h] = float(np.sqrt(np.mean((seg - seg.mean()) ** 2)))
    return out


class CorrRow(NamedTuple):
    subject: str
    metric: str
    regime: str
    r: float
    p: float
    n: int


def _corr_rows(subject: str, metric: str, buckets: Mapping[tuple[str, int], float],
               vols: Mapping[int, float], regimes: Sequence[str]) -> list[CorrRow]:
    rows = []
    for regime in regimes:
        pairs = sorted((h, v) for (r, h), v in buckets.items() if r == regime and h in vols)
        xs = [vols[h] for h, _ in pairs]
        ys = [v for _, v in pairs]
        try:
            res = pearson_with_p(xs, ys)
            rows.append(CorrRow(subject, metric, regime, res.r, res.p, res.n))
        except ValueError:
            rows.append(CorrRow(subject, metric, regime, math.nan, math.nan, len(pairs)))
    return rows


def vol_corr(views: Sequence[RoundView], series: PriceSeries, seg: RegimeSegmentation) -> list[CorrRow]:
    """Hourly vol vs hourly mean paid bid, top bid and absolute gap (ETH).

    Only hours with at least one settled round enter.
    """
    paid: dict[tuple[str, int], list[float]] = defaultdict(list)
    top: dict[tuple[str, int], list[float]] = defaultdict(list)
    gap: dict[tuple[str, int], list[float]] = defaultdict(list)
    for v in views:
        o = v.outcome
        if not o.settled:
            continue
        key = (v.regime, v.start - v.start % HOUR_MS)
        paid[key].append(float(o.paid))
        top[key].append(float(o.top_bid))
        gap[key].append(float(o.top_bid - o.paid))
    vols = hourly_vol(series, {h for _, h in paid})
    regimes = _regimes(seg)
    rows = []
    for name, b in (("Paid Bid (ETH)", paid), ("Top Bid (ETH)", top), ("Absolute Bid Gap (ETH)", gap)):
        means = {k: float(np.mean(xs)) for k, xs in b.items()}
        rows += _corr_rows("auction", name, means, vols, regimes)
    return rows


# --- trades ------------------------------------------------------------------


@dataclass(frozen=True)
class MarkedTrade:
    trade: Trade
    pnl: float  # markout PnL in USD, net of the trade's fees

    @property
    def time_boosted(self) -> bool:
        return self.trade.lane is Lane.EXPRESS

    @cached_property
    def gross(self) -> Amount:
        """PnL before the trade's fees, exact in USD."""
        return Amount.of(self.pnl, Unit.USD) + self.trade.fees


def positive_only(marked: Iterable[MarkedTrade]) -> list[MarkedTrade]:
    return [m for m in marked if m.pnl > 0]


class PnlRow(NamedTuple):
    searcher: EntityId
    regime: str
    tb_txs: int
    tb_pnl: float
    tb_avg: float
    regular_txs: int
    regular_pnl: float
    regular_avg: float


def pnl_summary(marked: Sequence[MarkedTrade], seg: RegimeSegmentation) -> list[PnlRow]:
    acc: dict[tuple[str, str, bool], list[float]] = defaultdict(list)
    for m in marked:
        r = regime_of(m.trade.t, seg)
        for regime in (r, OVERALL):
            acc[(m.trade.sender, regime, m.time_boosted)].append(m.pnl)
    rows = []
    for s in sorted({m.trade.sender for m in marked}):
        for regime in _regimes(seg) + [OVERALL]:
            tb = acc.get((s, regime, True), [])
            rg = acc.get((s, regime, False), [])
            rows.append(PnlRow(s, regime, len(tb), math.fsum(tb), math.fsum(tb) / len(tb) if tb else 0.0,
                               len(rg), math.fsum(rg), math.fsum(rg) / len(rg) if rg else 0.0))
    return rows


def pnl_vol_corr(marked: Sequence[MarkedTrade], series: PriceSeries, seg: RegimeSegmentation) -> list[CorrRow]:
    """Hourly vol vs hourly summed PnL per searcher for TB, Non-TB and Total."""
    sums: dict[tuple[str, str], dict[tuple[str, int], float]] = defaultdict(lambda: defaultdict(float))
    for m in marked:
        key = (regime_of(m.trade.t, seg), m.trade.t - m.trade.t % HOUR_MS)
        lane = "TB PnL" if m.time_boosted else "Non-TB PnL"
        sums[(m.trade.sender, lane)][key] += m.pnl
        sums[(m.trade.sender, "Total PnL")][key] += m.pnl
    hours = {h for b in sums.values() for _, h in b}
    vols = hourly_vol(series, hours)
    rows = []
    for (s, metric) in sorted(sums):
        rows += _corr_rows(s, metric, sums[(s, metric)], vols, _regimes(seg))
    return rows


# --- hour-of-day loss profile ------------------------------------------------


class HourRow(NamedTuple):
    hour: int
    in_session: bool  # hour bin overlaps the session window
    participated: int
    lost: int
    loss_rate: float
    median_bid_won: float
    median_bid_lost: float


@dataclass(frozen=True)
class LossProfile:
    hours: tuple[HourRow, ...]
    in_session_rate: float
    out_session_rate: float
    in_session_rounds: int
    out_session_rounds: int


def hourly_loss_profile(views: Sequence[RoundView], reseller: EntityId,
                        session: tuple[int, int] = (14 * 60 + 30, 21 * 60),
                        regime: Optional[str] = None) -> LossProfile:
    """Share of rounds the reseller bid in but did not win, by UTC hour.

    ``session`` is a [start, end) window in minutes of the UTC day; a round
    counts as in-session when its start falls inside it.
    """
    s0, s1 = session
    part = [0] * 24
    lost = [0] * 24
    won_bids: list[list[float]] = [[] for _ in range(24)]
    lost_bids: list[list[float]] = [[] for _ in range(24)]
    agg = {True: [0, 0], False: [0, 0]}
    for v in views:
        if regime is not None and v.regime != regime:
            continue
        bid = v.outcome.bid_of(reseller)
        if bid is None:
            continue
        minute = (v.start % DAY_MS) // 60_000
        h = minute // 60
        inside = s0 <= minute < s1
        did_lose = v.outcome.winner != reseller
        part[h] += 1
        agg[inside][0] += 1
        if did_lose:
            lost[h] += 1
            agg[inside][1] += 1
            lost_bids[h].append(float(bid))
        else:
            won_bids[h].append(float(bid))
    rows = tuple(
        HourRow(h, h * 60 < s1 and (h + 1) * 60 > s0, part[h], lost[h],
                lost[h] / part[h] if part[h] else 0.0, _median(won_bids[h]), _median(lost_bids[h]))
        for h in range(24)
    )
    rate = lambda a: a[1] / a[0] if a[0] else 0.0  # noqa: E731
    return LossProfile(rows, rate(agg[True]), rate(agg[False]), agg[True][0], agg[False][0])


# --- surplus -----------------------------------------------------------------


@dataclass(frozen=True)
class SurplusRow:
    period: str
    scope: str  # "all" or "time-boosted"
    total_pnl: Amount  # USD, gross of transaction fees
    tx_fees: Amount
    bids_paid: Amount
    top_bids: Amount
    net_surplus: Amount
    captured_share_paid: float
    captured_share_top: float
    flagged: bool = False  # zero-PnL period, shares undefined
    bids_paid_by_entity: tuple[tuple[EntityId, Amount], ...] = ()


@dataclass
class _Acc:
    pnl: Amount = field(default_factory=lambda: Amount.zero(Unit.USD))
    fees: Amount = field(default_factory=lambda: Amount.zero(Unit.USD))
    paid: Amount = field(default_factory=lambda: Amount.zero(Unit.USD))
    top: Amount = field(default_factory=lambda: Amount.zero(Unit.USD))
    by_entity: dict = field(default_factory=lambda: defaultdict(lambda: Amount.zero(Unit.USD)))


def _row(period: str, scope: str, a: _Acc) -> SurplusRow:
    net = a.pnl - a.fees - a.paid
    ok = a.pnl.units != 0
    return SurplusRow(
        period, scope, a.pnl, a.fees, a.paid, a.top, net,
        a.paid.units / a.pnl.units if ok else math.nan,
        a.top.units / a.pnl.units if ok else math.nan,
        not ok,
        tuple(sorted(a.by_entity.items())),
    )


def surplus_decompose(marked: Sequence[MarkedTrade], views: Sequence[RoundView],
                      eth_usd: Callable[[TimeMs], float], seg: RegimeSegmentation,
                      time_boosted_only: bool = False) -> list[SurplusRow]:
    """Split searcher PnL into transaction fees, auction bids paid and net surplus.

    ``marked`` should already be restricted to positive-PnL trades. PnL is
    taken gross of each trade's fees (``pnl + fees``), so that fees appear once,
    as revenue captured alongside paid bids. Bids are converted to USD at the
    ETH price at each round's auction close. All sums are exact fixed-point and
    the regime rows add up to the overall row.
    """
    acc: dict[str, _Acc] = {r: _Acc() for r in _regimes(seg)}
    for m in marked:
        if time_boosted_only and not m.time_boosted:
            continue
        a = acc[regime_of(m.trade.t, seg)]
        a.pnl = a.pnl + m.gross
        a.fees = a.fees + m.trade.fees
    for v in views:
        o = v.outcome
        if not o.settled:
            continue
        a = acc[v.regime]
        px = eth_usd(v.bid_close)
        paid = o.paid.to_usd(px)
        a.paid = a.paid + paid
        a.top = a.top + o.top_bid.to_usd(px)
        a.by_entity[o.winner] = a.by_entity[o.winner] + paid
    total = _Acc()
    for a in acc.values():
        total.pnl += a.pnl
        total.fees += a.fees
        total.paid += a.paid
        total.top += a.top
        for e, x in a.by_entity.items():
            total.by_entity[e] = total.by_entity[e] + x
    scope = "time-boosted" if time_boosted_only else "all"
    return [_row(r, scope, a) for r, a in acc.items()] + [_row(OVERALL, scope, total)]
