"""Deterministic discrete-event simulation of a scenario.

Each auction round n is opened, collects bids until second 45, and settles;
its winner controls the express lane during round n + 1. Searchers discover
trading opportunities whose arrival rate and size scale with volatility, race
for them through the lane they have access to, and the first executed
transaction captures the trade.
"""

from __future__ import annotations

import heapq
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .agents import (
    AgentSpec,
    ControlState,
    Opportunity,
    OrderPayload,
    Role,
    RoundContext,
    bid_decision,
    route_trade,
    value_round,
)
from .auction import AuctionOutcome, Bid, settle
from .config import ScenarioConfig
from .market import SCALE, Amount, Unit, round_bounds
from .prices import PriceSeries, Trade, VolProvider, generate_series
from .reserve import VolIndexed, reserves_for
from .resale import Channel, Receipt, ResaleLedger, SubAuctionWindow, Submission, close_window
from .rng import substream
from .sequencer import Lane, TxEvent, _order_key, merged_order, submit

log = logging.getLogger(__name__)

# event kinds, in the order they run at equal timestamps
_ROUND_OPEN, _CONTROL_START, _BID, _BID_CLOSE, _OPPORTUNITY, _WINDOW_CLOSE, _RESOLVE = range(7)


@dataclass(frozen=True)
class OppDetail:
    opp: Opportunity
    owner: str
    price: float  # mid at discovery
    qty: float  # units of the DEX asset
    dislocation: float
    buy: bool  # buy the DEX asset (DEX cheap) or sell it


@dataclass
class SimResult:
    config: ScenarioConfig
    series: PriceSeries
    first_round: int
    outcomes: list[AuctionOutcome]
    bids: list[Bid]
    trace: list[TxEvent]
    receipts: list[Receipt]
    trades: list[Trade]
    ledger_eth: ResaleLedger
    ledger_usd: ResaleLedger
    invariants: dict[str, object] = field(default_factory=dict)


class _Streams:
    """Named substreams created on first use."""

    def __init__(self, seed: int):
        self.seed = seed
        self._s: dict[str, np.random.Generator] = {}

    def __call__(self, kind: str, who: str) -> np.random.Generator:
        key = f"{kind}:{who}"
        g = self._s.get(key)
        if g is None:
            g = self._s[key] = substream(self.seed, key)
        return g


def _price_span(cfg: ScenarioConfig, resolve_delay: int) -> tuple[int, int]:
    sched = cfg.schedule
    back = cfg.valuation_window_ms
    if isinstance(cfg.reserve, VolIndexed):
        back = max(back, cfg.reserve.window)
    lo = cfg.start - back - 2_000
    lo -= lo % 1000
    hi = round_bounds(sched.index_at(cfg.start) + cfg.rounds + 1, sched).end + resolve_delay + cfg.trading.markout_ms
    return lo, (hi - lo) // 1000 + 3


def simulate(cfg: ScenarioConfig) -> SimResult:
    sched, seq = cfg.schedule, cfg.sequencer
    streams = _Streams(cfg.seed)
    detect = {a.id: streams("detect", a.id) for a in cfg.agents}
    react = {a.id: streams("reaction", a.id) for a in cfg.agents}
    searchers = [a for a in cfg.agents if a.role is Role.SEARCHER]
    traders = [a for a in searchers if a.opportunity_rate > 0]
    reseller = cfg.reseller
    resellers = frozenset({reseller.id}) if reseller else frozenset()
    win_len = reseller.window_ms if reseller else 100
    latency = reseller.latency_ms if reseller else 0
    max_react = max((a.reaction_ms[1] for a in searchers), default=0)
    resolve_delay = max_react + win_len + latency + seq.regular_delay + seq.express_base_latency + 1

    lo, n_samples = _price_span(cfg, resolve_delay)
    pc = cfg.prices
    series = generate_series(streams("prices", pc.asset), pc.vol, lo, n_samples, pc.p0, pc.asset,
                             pc.vol_of_vol, pc.vol_persistence)
    vol = VolProvider(series)

    i0 = sched.index_at(cfg.start)
    idx = np.arange(i0, i0 + cfg.rounds, dtype=np.int64)
    starts = idx * sched.round_length + sched.phase
    closes = starts + sched.bid_close_offset
    sigma = vol.sigmas(closes, cfg.valuation_window_ms)
    reserves = reserves_for(cfg.reserve, starts, closes, vol)
    subscribers = [a for a in searchers if a.subscribes]

    heap: list[tuple] = []
    seqno = 0

    def push(t: int, kind: int, payload) -> None:
        nonlocal seqno
        heapq.heappush(heap, (t, kind, seqno, payload))
        seqno += 1

    for k in range(cfg.rounds):
        push(int(starts[k]), _ROUND_OPEN, k)
        push(int(closes[k]), _BID_CLOSE, k)
        push(int(starts[k]) + sched.round_length, _CONTROL_START, k + 1)

    book: dict[int, list[Bid]] = defaultdict(list)
    all_bids: list[Bid] = []
    outcomes: list[AuctionOutcome] = []
    controller: dict[int, Optional[str]] = {}
    windows: dict[int, SubAuctionWindow] = {}
    pending: dict[str, list[TxEvent]] = defaultdict(list)
    details: dict[str, OppDetail] = {}
    plans: dict[str, list[tuple[AgentSpec, int]]] = {}
    trace: list[TxEvent] = []
    receipts: list[Receipt] = []
    trades: list[Trade] = []
    ledger_eth, ledger_usd = ResaleLedger(Unit.ETH), ResaleLedger(Unit.USD)
    rejections = 0
    batches: list[tuple[int, tuple[TxEvent, ...]]] = []
    fee = cfg.trading.fee_usd

    while heap:
        t, kind, _, payload = heapq.heappop(heap)

        if kind == _ROUND_OPEN:
            k = payload
            s = float(sigma[k])
            reserve = Amount(int(reserves.units[k]), Unit.ETH)
            demand = Amount.of(sum(a.value_coeff for a in subscribers) * s * s, Unit.ETH)
            for a in cfg.agents:
                u = streams("participation", a.id).random()
                val = value_round(a, s, streams("value", a.id), i0 + k)
                at = t + int(streams("bidtime", a.id).integers(0, sched.bid_close_offset))
                if u >= a.participation:
                    continue
                bid = bid_decision(a, val, reserve, RoundContext(i0 + k, at, demand))
                if bid is not None:
                    push(at, _BID, bid)

        elif kind == _BID:
            book[payload.round_index].append(payload)
            all_bids.append(payload)

        elif kind == _BID_CLOSE:
            k = payload
            b = round_bounds(i0 + k, sched)
            out = settle(book.pop(i0 + k, []), Amount(int(reserves.units[k]), Unit.ETH), b, round_index=i0 + k)
            outcomes.append(out)
            controller[i0 + k + 1] = out.winner
            if reseller and out.winner == reseller.id:
                ledger_eth.record_primary(b.start, out.paid)
                ledger_usd.record_primary(b.start, out.paid.to_usd(series.price_at(b.bid_close)))

        elif kind == _CONTROL_START:
            k = payload  # control round i0 + k, sold in auction k - 1
            r = i0 + k
            s = float(sigma[k - 1])
            ctrl = controller.get(r)
            if reseller and ctrl == reseller.id and reseller.subscription_fee.units > 0:
                px = series.price_at(t)
                for a in subscribers:
                    rc = Receipt(t, f"fee:{r}:{a.id}", Channel.SUBSCRIPTION, reseller.subscription_fee)
                    receipts.append(rc)
                    ledger_eth.record_receipt(t, rc.channel, rc.payment)
                    ledger_usd.record_receipt(t, rc.channel, rc.payment.to_usd(px))
            scale = s / pc.reference_vol
            new_opps: list[str] = []
            for a in traders:
                g = streams("opportunity", a.id)
                n = int(g.poisson(a.opportunity_rate * scale * sched.round_length / 1000))
                times = np.sort(g.integers(0, sched.round_length, n)) + t
                z = g.standard_normal(n)
                side = g.random(n) < 0.5
                for j in range(n):
                    at = int(times[j])
                    px = series.price_at(at)
                    qty = cfg.trading.notional_usd / px
                    disl = cfg.trading.dislocation * s * abs(float(z[j]))
                    opp = Opportunity(f"{a.id}-{r}-{j}", at, Amount(round(qty * disl * SCALE), Unit.ETH))
                    details[opp.opp_id] = OppDetail(opp, a.id, px, qty, disl, bool(side[j]))
                    new_opps.append(opp.opp_id)
                    push(at, _OPPORTUNITY, opp.opp_id)
            # who sees each opportunity and how fast they react: one vector draw per agent and round
            m = len(new_opps)
            if m:
                draws = []
                for a in searchers:
                    lo_r, hi_r = a.reaction_ms
                    draws.append((a, detect[a.id].random(m).tolist(),
                                  react[a.id].integers(lo_r, hi_r + 1, m).tolist()))
                for j, oid in enumerate(new_opps):
                    owner = details[oid].owner
                    plans[oid] = [(a, dl[j]) for a, u, dl in draws if a.id == owner or u[j] < a.detect_prob]

        elif kind == _OPPORTUNITY:
            d = details[payload]
            for a, delay in plans.pop(payload):
                arrival = t + delay
                r = sched.index_at(arrival)
                ctrl = controller.get(r)
                tx = route_trade(a, d.opp, ControlState(ctrl, resellers, latency, r), arrival)
                if tx.via_resale:
                    ws = arrival - (arrival - sched.phase) % win_len
                    w = windows.get(ws)
                    if w is None:
                        w = windows[ws] = SubAuctionWindow(ws, win_len)
                        push(ws + win_len, _WINDOW_CLOSE, ws)
                    pay: OrderPayload = tx.payload
                    w.add(Submission(tx, pay.payment, pay.channel))
                else:
                    ex, rejected = submit(tx, seq, ctrl)
                    rejections += rejected
                    pending[payload].append(ex)
            push(t + resolve_delay, _RESOLVE, payload)

        elif kind == _WINDOW_CLOSE:
            w = windows.pop(payload)
            cb = close_window(w)
            batches.append((cb.window_start, cb.batch))
            px = series.price_at(cb.window_start)
            for tx, rc in zip(cb.batch, cb.receipts):
                pending[tx.payload.opp_id].append(tx)
                receipts.append(rc)
                ledger_eth.record_receipt(cb.window_start, rc.channel, rc.payment)
                ledger_usd.record_receipt(cb.window_start, rc.channel, rc.payment.to_usd(px))

        elif kind == _RESOLVE:
            txs = merged_order(pending.pop(payload, []))
            d = details.pop(payload)
            trace.extend(txs)
            if txs:
                trades.append(_trade(d, txs[0], cfg, fee))

    trace = merged_order(trace)
    inv = _check(trace, batches, rejections, seq.regular_delay, win_len, sched.phase, latency, receipts, ledger_eth)
    log.info("simulated %d rounds, %d bids, %d txs, %d trades", cfg.rounds, len(all_bids), len(trace), len(trades))
    return SimResult(cfg, series, i0, outcomes, all_bids, trace, receipts, trades, ledger_eth, ledger_usd, inv)


def _trade(d: OppDetail, winner: TxEvent, cfg: ScenarioConfig, fee: Amount) -> Trade:
    tc = cfg.trading
    if d.buy:
        return Trade(d.opp.opp_id, winner.executed_at, tc.dex_asset, d.qty, tc.quote_asset,
                     d.qty * d.price * (1.0 - d.dislocation), fee, winner.lane, winner.sender)
    return Trade(d.opp.opp_id, winner.executed_at, tc.quote_asset, d.qty * d.price * (1.0 + d.dislocation),
                 tc.dex_asset, d.qty, fee, winner.lane, winner.sender)


def _check(trace: list[TxEvent], batches, rejections: int, regular_delay: int, win_len: int, phase: int, latency: int,
           receipts: list[Receipt], ledger: ResaleLedger) -> dict[str, object]:
    regular_ok = all(e.executed_at - e.arrival == regular_delay for e in trace if e.lane is Lane.REGULAR)
    first_regular: dict[int, tuple] = {}
    for e in trace:
        if e.lane is Lane.REGULAR:
            ws = e.arrival - (e.arrival - phase) % win_len
            key = _order_key(e)
            if ws not in first_regular or key < first_regular[ws]:
                first_regular[ws] = key
    violations = 0
    for ws, batch in batches:
        last = max(_order_key(e) for e in batch)
        lo = first_regular.get(ws)
        if lo is not None and lo < last:
            violations += 1
    tot = ledger.totals()
    receipt_sum = sum((r.payment for r in receipts), Amount.zero())
    return {
        "express_rejections": rejections,
        "regular_delay_exact": regular_ok,
        "resale_batches": len(batches),
        "resale_guarantee_violations": violations,
        "resale_guarantee_expected": latency < win_len,
        "receipts_conserved": (tot.onchain_receipts + tot.subscription_receipts).units == receipt_sum.units,
    }


def invariants_ok(inv: dict[str, object]) -> bool:
    if inv.get("express_rejections"):
        return False
    if not inv.get("regular_delay_exact", True) or not inv.get("receipts_conserved", True):
        return False
    if inv.get("resale_guarantee_expected") and inv.get("resale_guarantee_violations"):
        return False
    return bool(inv.get("surplus_conserved", True))
