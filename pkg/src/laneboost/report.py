"""Assemble the analytics tables of a run and write them as CSV or JSON."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, NamedTuple, Optional, Sequence

from .analytics import (
    OVERALL,
    MarkedTrade,
    RoundView,
    bid_distribution,
    bidder_combinations,
    daily_gaps,
    gap_summary,
    hourly_loss_profile,
    pnl_summary,
    pnl_vol_corr,
    positive_only,
    surplus_decompose,
    vol_corr,
    win_shares,
)
from .config import AnalyticsConfig
from .csvio import Bundle, json_value
from .market import RegimeSegmentation
from .prices import PriceSeries
from .resale import ResaleLedger, revenue_gap


class Table(NamedTuple):
    columns: list[str]
    rows: list[tuple]


@dataclass(frozen=True)
class Exclusion:
    trade_id: str
    reason: str


SURPLUS_COLUMNS = ["period", "scope", "total_pnl_usd", "tx_fees_usd", "bids_paid_usd", "top_bids_usd",
                   "net_surplus_usd", "captured_share_paid", "captured_share_top", "flagged"]


def _periods(seg: RegimeSegmentation) -> list[tuple[str, Optional[tuple[int, int]]]]:
    out = []
    b = seg.boundaries
    for i, (t, name) in enumerate(b):
        end = b[i + 1][0] if i + 1 < len(b) else 2**62
        out.append((name, (t, end)))
    return out + [(OVERALL, None)]


def analytics_tables(views: Sequence[RoundView], marked: Sequence[MarkedTrade], eth: PriceSeries,
                     seg: RegimeSegmentation, acfg: AnalyticsConfig, ledger_eth: ResaleLedger,
                     ledger_usd: ResaleLedger, exclusions: Sequence[Exclusion] = ()) -> dict[str, Table]:
    """Every report table, keyed by file stem, in a fixed order.

    ``marked`` holds all markout-evaluated trades; the positive-PnL filter is
    applied here before trade aggregates.
    """
    pos = positive_only(marked)
    t: dict[str, Table] = {}
    entities = [e for e, _ in acfg.focus]
    t["rounds_won"] = Table(["entity", "regime", "wins", "rounds", "share"],
                            [tuple(r) for r in win_shares(views, seg, entities)])
    t["bidder_combinations"] = Table(["combination", "regime", "rounds", "total", "share"],
                                     [tuple(r) for r in bidder_combinations(views, seg, acfg.focus)])
    t["bid_distribution"] = Table(["bidder", "regime", "n", "p25", "median", "p75", "p99", "mean"],
                                  [tuple(r) for r in bid_distribution(views, seg)])
    t["bid_gap_daily"] = Table(["regime", "utc_day_ms", "rounds", "median_gap"], daily_gaps(views))
    t["bid_gap_summary"] = Table(["regime", "rounds", "median_gap", "days", "median_daily_gap"],
                                 [tuple(r) for r in gap_summary(views, seg)])
    t["vol_corr"] = Table(["subject", "metric", "regime", "r", "p", "n"], [tuple(r) for r in vol_corr(views, eth, seg)])
    t["pnl_summary"] = Table(["searcher", "regime", "tb_txs", "tb_pnl_usd", "tb_avg_usd", "regular_txs",
                              "regular_pnl_usd", "regular_avg_usd"], [tuple(r) for r in pnl_summary(pos, seg)])
    t["pnl_vol_corr"] = Table(["subject", "metric", "regime", "r", "p", "n"],
                              [tuple(r) for r in pnl_vol_corr(pos, eth, seg)])

    surplus = []
    by_entity = []
    for tb in (False, True):
        for s in surplus_decompose(pos, views, eth.price_at, seg, time_boosted_only=tb):
            surplus.append((s.period, s.scope, s.total_pnl, s.tx_fees, s.bids_paid, s.top_bids, s.net_surplus,
                            s.captured_share_paid, s.captured_share_top, s.flagged))
            by_entity += [(s.period, s.scope, e, a) for e, a in s.bids_paid_by_entity]
    t["surplus"] = Table(SURPLUS_COLUMNS, surplus)
    t["surplus_by_entity"] = Table(["period", "scope", "entity", "bids_paid_usd"], by_entity)

    loss = hourly_loss_profile(views, acfg.reseller, acfg.session_minutes)
    t["reseller_loss_by_hour"] = Table(
        ["hour", "in_session", "participated", "lost", "loss_rate", "median_bid_won_eth", "median_bid_lost_eth"],
        [tuple(r) for r in loss.hours])
    t["reseller_loss_summary"] = Table(
        ["session", "participated", "loss_rate"],
        [("in", loss.in_session_rounds, loss.in_session_rate), ("out", loss.out_session_rounds, loss.out_session_rate)])

    rev = []
    for name, over in _periods(seg):
        ge, gu = revenue_gap(ledger_eth, over), revenue_gap(ledger_usd, over)
        sub = ledger_eth.totals(over).subscription_receipts
        rev.append((name, ge.bids_paid, ge.observable, ge.gap, sub, gu.bids_paid, gu.observable, gu.gap))
    t["resale_revenue"] = Table(["period", "bids_paid_eth", "observable_eth", "gap_eth", "unobservable_eth",
                                 "bids_paid_usd", "observable_usd", "gap_usd"], rev)
    t["trade_exclusions"] = Table(["trade_id", "reason"], [(e.trade_id, e.reason) for e in exclusions])
    return t


def surplus_conserved(tables: dict[str, Table]) -> bool:
    """net + fees + bids == total PnL on every surplus row, exactly."""
    for r in tables["surplus"].rows:
        _, _, pnl, fees, paid, _, net = r[:7]
        if (net + fees + paid).units != pnl.units:
            return False
    return True


def write_tables(bundle: Bundle, tables: dict[str, Table], fmt: str = "csv") -> None:
    if fmt == "csv":
        for name, tab in tables.items():
            bundle.write_table(f"{name}.csv", tab.columns, tab.rows)
    elif fmt == "json":
        doc: dict[str, Any] = {
            name: [{c: json_value(v) for c, v in zip(tab.columns, row)} for row in tab.rows]
            for name, tab in tables.items()
        }
        bundle.write_json("analytics.json", doc)
    else:
        raise ValueError(f"unknown format {fmt!r}")
