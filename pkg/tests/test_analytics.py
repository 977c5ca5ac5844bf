import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from laneboost.analytics import (
    OVERALL,
    ClassifierRules,
    MalformedRecord,
    MarkedTrade,
    KNOWN_CONTRACTS,
    TxRecord,
    UndefinedCorrelation,
    bidder_combinations,
    classify_cex_dex,
    classify_many,
    combination_labels,
    daily_gaps,
    gap_summary,
    hourly_loss_profile,
    pearson_with_p,
    positive_only,
    relative_bid_gap,
    round_views,
    surplus_decompose,
    win_shares,
)
from laneboost.auction import AuctionOutcome
from laneboost.market import (
    OBSERVED_SEGMENTATION,
    PRE_KAIROS,
    Amount,
    RegimeSegmentation,
    RoundSchedule,
    Unit,
    eth,
    usd,
)
from laneboost.prices import Trade
from laneboost.sequencer import Lane
from oracles import pearson_textbook, t_two_sided_p

RULES = ClassifierRules(KNOWN_CONTRACTS)
WM = "0x27920e8039d2b6e93e36f5d5f53b998e2e631a70"
SCHED = RoundSchedule()
SEG = RegimeSegmentation(((0, "A"), (10 * 60_000, "B")))


def test_classifier_rules():
    assert classify_cex_dex(TxRecord(WM, 1, "WETH", "USDT"), RULES)
    assert classify_cex_dex(TxRecord(WM.upper().replace("0X", "0x"), 1, "weth", "usdc"), RULES)
    assert not classify_cex_dex(TxRecord(WM, 2, "WETH", "USDT"), RULES)
    assert not classify_cex_dex(TxRecord("0xabc", 1, "WETH", "USDC"), RULES)
    assert not classify_cex_dex(TxRecord(WM, 1, "WETH", "PEPE"), RULES)
    with pytest.raises(MalformedRecord):
        classify_cex_dex(TxRecord("", 1, "WETH", "USDC"), RULES)
    flags, skipped = classify_many([TxRecord(WM, 1, "WETH", "USDC"), TxRecord(WM, -1, "WETH", "USDC")], RULES)
    assert flags == [True, False] and skipped == 1


def outcome(i, winner=None, top=None, paid=None, bids=()):
    bids = tuple(sorted((b, eth(a)) for b, a in bids))
    return AuctionOutcome(i, eth("0.001"), len(bids), winner, top and eth(top), paid and eth(paid), None, bids)


def test_relative_gap():
    assert relative_bid_gap(outcome(0, "a", "0.008", "0.005", [("a", "0.008")])) == 0.375
    assert relative_bid_gap(outcome(0, "a", "0.004", "0.004", [("a", "0.004")])) == 0.0
    assert relative_bid_gap(outcome(0)) is None


def views(outs):
    return round_views(outs, SCHED, SEG)


def test_win_shares_and_single_round():
    v = views([outcome(1, "a", "0.002", "0.001", [("a", "0.002")])])
    rows = {(r.label, r.regime): r for r in win_shares(v, SEG, ["a"])}
    assert rows[("a", "A")].share == 1.0 and rows[("a", OVERALL)].count == 1
    assert rows[("a", "B")].rounds == 0


def test_combinations_none_bucket_and_partition():
    focus = (("wm", "WM"), ("sel", "Sel"))
    outs = [outcome(1, "wm", "0.002", "0.001", [("wm", "0.002"), ("sel", "0.001")]),
            outcome(2, "x", "0.002", "0.001", [("x", "0.002")]),
            outcome(3)]
    rows = [r for r in bidder_combinations(views(outs), SEG, focus) if r.regime == OVERALL]
    d = {r.label: r for r in rows}
    assert d["WM + Sel"].count == 1 and d["None"].count == 1 and d["Other bidders present"].count == 1
    assert d["WM + Sel"].rounds == 2  # rounds with no bids at all are excluded
    assert sum(r.count for r in rows if r.label != "Other bidders present") == 2
    assert [lab for _, lab in combination_labels(focus)] == ["WM + Sel", "Only WM", "Only Sel", "None"]


def test_gap_summary_daily_medians():
    outs = [outcome(i, "a", "0.01", p, [("a", "0.01")]) for i, p in enumerate(["0.005", "0.006", "0.007"])]
    g = {r.regime: r for r in gap_summary(views(outs), SEG)}
    assert g["A"].median_gap == pytest.approx(0.4)
    assert g[OVERALL].days == 1 and len(daily_gaps(views(outs))) == 1


def test_pearson_perfect_and_guard_rails():
    x = np.arange(10.0)
    assert pearson_with_p(x, 2 * x + 1) == (1.0, 0.0, 10)
    with pytest.raises(UndefinedCorrelation):
        pearson_with_p([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson_with_p([1, 2], [1, 2])


def test_pearson_independent_series_not_significant():
    rng = np.random.default_rng(365)
    x = rng.normal(size=365)
    y = rng.permutation(x)
    r = pearson_with_p(x, y)
    assert abs(r.r) < 0.15 and r.p > 0.01


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=5, max_size=60))
def test_pearson_matches_textbook(pairs):
    x, y = zip(*pairs)
    try:
        res = pearson_with_p(x, y)
    except UndefinedCorrelation:
        return
    if np.std(x) < 1e-6 or np.std(y) < 1e-6:
        return
    assert res.r == pytest.approx(pearson_textbook(x, y), abs=1e-9)


@pytest.mark.parametrize("n,r", [(10, 0.3), (100, 0.2), (285, 0.805), (285, 0.05)])
def test_pearson_p_against_mpmath(n, r):
    # build a series with exactly this r: y = r*x + sqrt(1-r^2)*z with x, z orthonormal
    rng = np.random.default_rng(n)
    a = rng.normal(size=(n, 2))
    a -= a.mean(axis=0)
    q, _ = np.linalg.qr(a)
    x, z = q[:, 0], q[:, 1]
    y = r * x + math.sqrt(1 - r * r) * z
    res = pearson_with_p(x, y)
    assert res.r == pytest.approx(r, abs=1e-12)
    assert res.p == pytest.approx(t_two_sided_p(res.r, n), abs=1e-6)


def test_hourly_loss_profile():
    hour = 3_600_000
    # reseller wins at 02:00, loses at 15:00 (inside the 14:30-21:00 window)
    base = 86_400_000
    sched = RoundSchedule()
    i_out = sched.index_at(base + 2 * hour + 60_000)
    i_in = sched.index_at(base + 15 * hour + 60_000)
    outs = [outcome(i_out, "kai", "0.004", "0.001", [("kai", "0.004")]),
            outcome(i_in, "wm", "0.005", "0.004", [("kai", "0.004"), ("wm", "0.005")])]
    seg = RegimeSegmentation(((0, "A"),))
    prof = hourly_loss_profile(round_views(outs, sched, seg), "kai")
    assert prof.in_session_rate == 1.0 and prof.out_session_rate == 0.0
    assert prof.hours[15].lost == 1 and prof.hours[2].participated == 1
    assert prof.hours[15].in_session and not prof.hours[2].in_session
    always = hourly_loss_profile(round_views(outs[:1], sched, seg), "kai")
    assert all(h.loss_rate == 0 for h in always.hours)


def marked(pnl, fee, t=0, lane=Lane.EXPRESS, sender="wm"):
    return MarkedTrade(Trade(f"t{t}", t, "WETH", 1.0, "USDC", 1.0, usd(fee), lane, sender), pnl)


def test_surplus_hand_example():
    # PnL 100 gross, fees 5, one paid bid of 0.01 ETH at 1000 USD = 10 USD
    m = [marked(95.0, 5)]
    v = views([outcome(1, "wm", "0.02", "0.01", [("wm", "0.02")])])
    rows = {r.period: r for r in surplus_decompose(m, v, lambda t: 1000.0, SEG)}
    r = rows["A"]
    assert (r.total_pnl, r.tx_fees, r.bids_paid, r.net_surplus) == (usd(100), usd(5), usd(10), usd(85))
    assert r.captured_share_paid == pytest.approx(0.10)
    assert r.captured_share_top == pytest.approx(0.20)
    assert rows["B"].flagged and math.isnan(rows["B"].captured_share_paid)
    assert rows[OVERALL].bids_paid_by_entity == (("wm", usd(10)),)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-50, 500), st.integers(0, 300), st.integers(0, 19 * 60_000), st.booleans()),
                max_size=30),
       st.lists(st.tuples(st.integers(1, 18), st.integers(1, 50), st.integers(0, 50)), max_size=15))
def test_surplus_conserves_exactly(trades, rounds):
    ms = positive_only([marked(p, f / 100, t, Lane.EXPRESS if e else Lane.REGULAR) for p, f, t, e in trades])
    outs = []
    for i, top, sec in {r[0]: r for r in rounds}.values():
        hi, lo = max(top, sec), min(top, sec)
        paid = max(lo, 1)
        outs.append(AuctionOutcome(i, Amount(10**15), 2, "wm", Amount(hi * 10**15), Amount(paid * 10**15),
                                   None, (("wm", Amount(hi * 10**15)),)))
    for tb in (False, True):
        rows = surplus_decompose(ms, views(outs), lambda t: 3123.456789, SEG, tb)
        for r in rows:
            assert (r.net_surplus + r.tx_fees + r.bids_paid).units == r.total_pnl.units
        parts = [r for r in rows if r.period != OVERALL]
        total = rows[-1]
        assert sum(r.total_pnl.units for r in parts) == total.total_pnl.units
        assert sum(r.bids_paid.units for r in parts) == total.bids_paid.units


def test_positive_only_filter():
    assert [m.pnl for m in positive_only([marked(1.0, 0), marked(0.0, 0), marked(-2.0, 0)])] == [1.0]
