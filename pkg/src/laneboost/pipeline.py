"""End-to-end commands: simulate, replay, calibrate and report, each writing a bundle."""

from __future__ import annotations

import logging
import time
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .analytics import MalformedRecord, MarkedTrade, RoundView, classify_cex_dex, round_views
from .auction import AuctionOutcome, Bid, settle
from .config import ScenarioConfig, load_config
from .csvio import (
    BID_COLUMNS,
    PRICE_COLUMNS,
    TRADE_COLUMNS,
    Bundle,
    BidRow,
    PaymentRow,
    SchemaError,
    read_bids,
    read_payments,
    read_prices,
    read_trades,
    sha256_file,
)
from .market import Amount, Unit, round_bounds
from .prices import CoverageError, PriceSeries, Trade, VolProvider, markout_pnl
from .report import Exclusion, Table, analytics_tables, surplus_conserved, write_tables
from .reserve import Fixed, HistoricalRounds, calibrate, reserves_for, write_calibration
from .resale import Channel, ResaleLedger, write_receipts
from .sequencer import write_trace
from .simulate import SimResult, invariants_ok, simulate

log = logging.getLogger(__name__)

ROUND_COLUMNS = ["round_index", "round_start_utc_ms", "bid_close_utc_ms", "regime", "reserve_eth",
                 "admissible_bids", "winner", "top_bid_eth", "second_bid_eth", "paid_eth"]
MARKOUT_COLUMNS = ["trade_id", "pnl_usd"]


# --- shared steps ------------------------------------------------------------


def mark_trades(trades: Sequence[tuple[Trade, object]], prices: Mapping[str, PriceSeries], m: int,
                rules=None) -> tuple[list[MarkedTrade], list[Exclusion]]:
    """Classify (when records are present) and mark out each trade."""
    marked, excluded = [], []
    for trade, rec in trades:
        if rec is not None and rules is not None:
            try:
                if not classify_cex_dex(rec, rules):
                    excluded.append(Exclusion(trade.trade_id, "not classified as CEX-DEX"))
                    continue
            except MalformedRecord:
                excluded.append(Exclusion(trade.trade_id, "malformed classification record"))
                continue
        try:
            marked.append(MarkedTrade(trade, markout_pnl(trade, prices, m)))
        except CoverageError as exc:
            excluded.append(Exclusion(trade.trade_id, f"price coverage: {exc}"))
    return marked, excluded


def outcomes_from_bids(rows: Sequence[BidRow], cfg: ScenarioConfig,
                       vol: Optional[VolProvider]) -> list[AuctionOutcome]:
    """Settle every round present in the bid records under the config's reserve policy."""
    sched = cfg.schedule
    by_round: dict[int, list[Bid]] = defaultdict(list)
    for r in rows:
        i = sched.index_at(r.round_start)
        if round_bounds(i, sched).start != r.round_start:
            raise SchemaError("bids", r.line, "round_start_utc_ms", f"{r.round_start} is not a round start")
        by_round[i].append(Bid(r.bidder, r.amount, r.submitted_at, i))
    idx = sorted(by_round)
    if not idx:
        return []
    starts = np.array([round_bounds(i, sched).start for i in idx], dtype=np.int64)
    closes = starts + sched.bid_close_offset
    rv = reserves_for(cfg.reserve, starts, closes, vol)
    if rv.fallback.any():
        log.warning("%d rounds lack volatility data; reserve fell back to the floor", int(rv.fallback.sum()))
    return [settle(by_round[i], Amount(int(rv.units[k]), Unit.ETH), round_bounds(i, sched), round_index=i)
            for k, i in enumerate(idx)]


def ledgers_from(outcomes: Sequence[AuctionOutcome], payments: Sequence[PaymentRow], reseller: str,
                 cfg: ScenarioConfig, eth: PriceSeries) -> tuple[ResaleLedger, ResaleLedger]:
    le, lu = ResaleLedger(Unit.ETH), ResaleLedger(Unit.USD)
    for o in outcomes:
        if o.winner == reseller:
            b = round_bounds(o.round_index, cfg.schedule)
            le.record_primary(b.start, o.paid)
            lu.record_primary(b.start, o.paid.to_usd(eth.price_at(b.bid_close)))
    for p in payments:
        le.record_receipt(p.t, p.channel, p.payment)
        lu.record_receipt(p.t, p.channel, p.payment.to_usd(eth.price_at(p.t)))
    return le, lu


def _manifest(cfg: ScenarioConfig, command: str, inputs: Mapping[str, str], extra: Optional[dict] = None) -> dict:
    m = {
        "command": command,
        "scenario": cfg.name,
        "seed": cfg.seed,
        "config_sha256": cfg.digest(),
        "code_version": __version__,
        "inputs": dict(sorted(inputs.items())),
    }
    if extra:
        m.update(extra)
    return m


def _timing(t0: float) -> dict:
    return {"start_wall": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t0)),
            "end_wall": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "elapsed_s": round(time.time() - t0, 3)}


def reseller_id(cfg: ScenarioConfig) -> str:
    return cfg.reseller.id if cfg.reseller else cfg.analytics.reseller


@dataclass
class RunSummary:
    ok: bool
    out: Path
    tables: dict[str, Table]
    invariants: dict


# --- simulate ----------------------------------------------------------------


def _write_prices(bundle: Bundle, series: PriceSeries) -> None:
    name = series.asset
    lines = [",".join(PRICE_COLUMNS)]
    lines += [f"{t},{name},{p!r}" for t, p in zip(series.times.tolist(), series.prices.tolist())]
    bundle.write_text("prices.csv", "\n".join(lines) + "\n")


def write_sim_bundle(res: SimResult, out: str | Path, fmt: str = "csv", config_text: str = "",
                     t0: Optional[float] = None) -> RunSummary:
    t0 = time.time() if t0 is None else t0
    cfg = res.config
    sched, seg = cfg.schedule, cfg.regimes
    bundle = Bundle(out)
    if config_text:
        bundle.write_text("config.toml", config_text)
    views = round_views(res.outcomes, sched, seg)

    def rounds_rows():
        for v in views:
            o = v.outcome
            yield (o.round_index, v.start, v.bid_close, v.regime, o.reserve, o.admissible_bid_count,
                   o.winner, o.top_bid, o.second_bid, o.paid)

    bundle.write_table("rounds.csv", ROUND_COLUMNS, rounds_rows())
    bundle.write_table("bids.csv", BID_COLUMNS,
                       ((round_bounds(b.round_index, sched).start, b.bidder, b.amount, b.submitted_at)
                        for b in res.bids))
    bundle.write_with("execution_trace.csv", lambda fh: write_trace(res.trace, fh))
    bundle.write_with("receipts.csv", lambda fh: write_receipts(res.receipts, fh))
    bundle.write_table("trades.csv", TRADE_COLUMNS,
                       ((t.trade_id, t.t, t.buy_asset, t.x, t.sell_asset, t.y, t.fees, t.lane, t.sender)
                        for t in res.trades))
    _write_prices(bundle, res.series)

    prices = {res.series.asset: res.series}
    marked, excl = mark_trades([(t, None) for t in res.trades], prices, cfg.trading.markout_ms)
    bundle.write_table("markouts.csv", MARKOUT_COLUMNS, ((m.trade.trade_id, m.pnl) for m in marked))
    tables = analytics_tables(views, marked, res.series, seg, replace(cfg.analytics, reseller=reseller_id(cfg)),
                              res.ledger_eth, res.ledger_usd, excl)
    write_tables(bundle, tables, fmt)
    inv = dict(res.invariants, surplus_conserved=surplus_conserved(tables))
    ok = invariants_ok(inv)
    bundle.finish(_manifest(cfg, "simulate", {}, {"invariants": inv, "invariants_ok": ok}), _timing(t0))
    return RunSummary(ok, Path(out), tables, inv)


def run_simulate(cfg: ScenarioConfig, out: str | Path, fmt: str = "csv", config_text: str = "") -> RunSummary:
    t0 = time.time()
    res = simulate(cfg)
    return write_sim_bundle(res, out, fmt, config_text, t0)


def _simulate_job(args) -> tuple[bool, str]:
    source, seed, out, fmt = args
    cfg, text = load_config(source)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    s = run_simulate(cfg, out, fmt, text)
    return s.ok, str(s.out)


# --- replay / report ---------------------------------------------------------


def run_replay(cfg: ScenarioConfig, auctions: str | Path, trades: str | Path, prices: str | Path,
               payments: Optional[str | Path], out: str | Path, fmt: str = "csv",
               config_text: str = "") -> RunSummary:
    t0 = time.time()
    bid_rows = read_bids(auctions)
    trade_rows = read_trades(trades)
    series = read_prices(prices)
    pays = read_payments(payments) if payments else []
    asset = cfg.prices.asset
    if asset not in series:
        raise SchemaError(str(prices), 1, "asset", f"no {asset} price series")
    eth = series[asset]
    vol = VolProvider(eth)
    outcomes = outcomes_from_bids(bid_rows, cfg, vol)
    views: list[RoundView] = round_views(outcomes, cfg.schedule, cfg.regimes)
    marked, excl = mark_trades(trade_rows, series, cfg.trading.markout_ms, cfg.analytics.classifier)
    acfg = replace(cfg.analytics, reseller=reseller_id(cfg))
    le, lu = ledgers_from(outcomes, pays, acfg.reseller, cfg, eth)
    tables = analytics_tables(views, marked, eth, cfg.regimes, acfg, le, lu, excl)

    bundle = Bundle(out)
    if config_text:
        bundle.write_text("config.toml", config_text)
    bundle.write_table("rounds.csv", ROUND_COLUMNS, (
        (v.outcome.round_index, v.start, v.bid_close, v.regime, v.outcome.reserve, v.outcome.admissible_bid_count,
         v.outcome.winner, v.outcome.top_bid, v.outcome.second_bid, v.outcome.paid) for v in views))
    bundle.write_table("markouts.csv", MARKOUT_COLUMNS, ((m.trade.trade_id, m.pnl) for m in marked))
    write_tables(bundle, tables, fmt)
    inputs = {"auctions": sha256_file(auctions), "trades": sha256_file(trades), "prices": sha256_file(prices)}
    if payments:
        inputs["payments"] = sha256_file(payments)
    inv = {"surplus_conserved": surplus_conserved(tables), "excluded_trades": len(excl)}
    ok = bool(inv["surplus_conserved"])
    bundle.finish(_manifest(cfg, "replay", inputs, {"invariants": inv, "invariants_ok": ok}), _timing(t0))
    return RunSummary(ok, Path(out), tables, inv)


def run_report(bundle_dir: str | Path, out: Optional[str | Path] = None, fmt: str = "csv",
               config: Optional[str] = None) -> RunSummary:
    """Recompute the analytics of a simulation bundle from its trace files."""
    src = Path(bundle_dir)
    cfg, text = load_config(config or src / "config.toml")
    return run_replay(cfg, src / "bids.csv", src / "trades.csv", src / "prices.csv", src / "receipts.csv",
                      out or src / "report", fmt, text)


# --- calibrate ---------------------------------------------------------------


def historical_rounds(rows: Sequence[BidRow], cfg: ScenarioConfig) -> HistoricalRounds:
    """Top and second admissible bids per round; these do not depend on the reserve."""
    outcomes = outcomes_from_bids(rows, replace(cfg, reserve=Fixed(Amount.zero())), None)
    return HistoricalRounds.from_outcomes(outcomes, cfg.schedule)


def run_calibrate(cfg: ScenarioConfig, rounds: str | Path, prices: str | Path, out: str | Path,
                  jobs: int = 1, windows_ms: Optional[Sequence[int]] = None,
                  cs: Optional[Sequence[float]] = None) -> RunSummary:
    t0 = time.time()
    rows = read_bids(rounds)
    if not rows:
        raise SchemaError(str(rounds), 1, None, "no bid records")
    hist = historical_rounds(rows, cfg)
    series = read_prices(prices)
    if cfg.prices.asset not in series:
        raise SchemaError(str(prices), 1, "asset", f"no {cfg.prices.asset} price series")
    cal = cfg.calibration
    report = calibrate(hist, series[cfg.prices.asset], list(windows_ms or cal.windows_ms), list(cs or cal.cs),
                       cal.floor, cal.cap, jobs=jobs)
    bundle = Bundle(out)
    grid_path, summary_path = bundle.path("calibration_grid.csv"), bundle.path("calibration_summary.json")
    with open(grid_path, "w", newline="") as g, open(summary_path, "w") as s:
        write_calibration(report, g, s)
    inputs = {"rounds": sha256_file(rounds), "prices": sha256_file(prices)}
    best = report.best
    bundle.finish(_manifest(cfg, "calibrate", inputs,
                            {"best": {"window_ms": best.window, "c": best.c, "recovery_ratio": best.recovery_ratio}}),
                  _timing(t0))
    return RunSummary(True, Path(out), {}, {"best": best})
