"""Regenerate the committed replay fixtures under tests/fixtures/.

hand/        ten rounds small enough to check every table by hand
aggregates/  rounds, trades and payments engineered so the replayed tables land on
              the headline aggregates of the study (gap medians, bidder mix, Kairos
              win and loss rates, captured shares)

Both use a constant ETH price of 2000 USD so USD conversions are exact, and a
compressed timeline with their own regime boundaries so one contiguous 1 s
price file covers everything.

    python scripts/make_paper_fixture.py [--out tests/fixtures]
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from laneboost.market import DAY_MS, MINUTE_MS, SCALE, format_units, parse_utc

ETH_USD = 2000.0
WM_C = "0x27920e8039d2b6e93e36f5d5f53b998e2e631a70"
SEL_C = "0xee2e7bbb67676292af2e31dffd1fea2276d6c7ba"
MILLI = SCALE // 1000  # 0.001 ETH in units

CONFIG = """# Replay config for the {name} fixture.
name = "{name}_fixture"
rounds = 1
start = "{start}"

[regimes]
boundaries = {boundaries}

[reserve]
kind = "fixed"
amount_eth = "0.001"

[[agents]]
id = "wintermute"
strategy = "Competitive"
"""


def write(path: Path, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for r in rows:
            fh.write(",".join(str(x) for x in r) + "\n")


def prices(path: Path, t0: int, t1: int) -> None:
    ts = range(t0 - t0 % 1000, t1 + 1000, 1000)
    write(path, "utc_ms,asset,mid_price", ((t, "ETH", repr(ETH_USD)) for t in ts))


def eth_str(units: int) -> str:
    return format_units(units)


# --- hand fixture ------------------------------------------------------------


def hand(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    s = parse_utc("2026-02-01 00:00:51")
    r = lambda k: s + k * MINUTE_MS  # noqa: E731
    m = lambda x: int(round(x * 10**6)) * (SCALE // 10**6)  # noqa: E731  milli-ETH grid
    bids = [
        (r(0), "wintermute", 0.008, 1_000), (r(0), "selini", 0.005, 2_000),
        (r(1), "wintermute", 0.004, 1_000), (r(1), "selini", 0.006, 3_000),
        (r(2), "wintermute", 0.010, 5_000),
        (r(3), "selini", 0.002, 1_000), (r(3), "wintermute", 0.0005, 2_000),
        # round 4: nobody bids
        (r(5), "kairos", 0.008, 1_000), (r(5), "wintermute", 0.002, 2_000), (r(5), "selini", 0.001, 3_000),
        (r(6), "kairos", 0.010, 1_000), (r(6), "selini", 0.001, 2_000),
        (r(7), "kairos", 0.004, 1_000), (r(7), "wintermute", 0.005, 2_000),
        (r(8), "kairos", 0.006, 1_000), (r(8), "kairos", 0.004, 2_000), (r(8), "wintermute", 0.003, 3_000),
        (r(9), "wintermute", 0.0008, 1_000), (r(9), "selini", 0.009, 45_000),  # second bid is late
    ]
    write(out / "auctions.csv", "round_start_utc_ms,bidder,amount_eth,submitted_utc_ms",
          ((t, b, eth_str(m(a)), t + dt) for t, b, a, dt in bids))
    tr = [
        # trade_id, offset s, buy, x, sell, y, fee, lane, sender, contract, swaps
        ("t1", 10, "WETH", 1, "USDC", 1990, "0.5", "Express", "wintermute", WM_C, 1),
        ("t2", 70, "USDC", 2020, "WETH", 1, "0.5", "Regular", "selini", SEL_C, 1),
        ("t3", 130, "WETH", 0.5, "USDC", 990, "1", "Express", "wintermute", WM_C, 1),
        ("t4", 190, "WETH", 1, "USDC", 2005, "0.5", "Regular", "wintermute", WM_C, 1),
        ("t5", 200, "WETH", 1, "USDC", 1000, "0", "Regular", "wintermute", "0xdeadbeef", 1),
        ("t6", 310, "WETH", 2, "USDC", 3950, "1", "Express", "selini", SEL_C, 1),
        ("t7", 430, "USDC", 4100, "WETH", 2, "2", "Express", "wintermute", WM_C, 1),
        ("t8", 550, "WETH", 1, "USDC", 1980, "0", "Regular", "selini", SEL_C, 1),
        ("t9", 560, "WETH", 1, "USDC", 1000, "0", "Regular", "selini", SEL_C, "x"),
    ]
    write(out / "trades.csv", "trade_id,utc_ms,buy_asset,x,sell_asset,y,fees_usd,lane,sender,contract,swap_events",
          ((i, s + o * 1000, b, x, sl, y, f, ln, sd, c, n) for i, o, b, x, sl, y, f, ln, sd, c, n in tr))
    write(out / "payments.csv", "window_start_ms,tx_id,channel,payment_eth",
          [(s + 310_000, "t6", "OnChain", "0.0004"), (s + 310_000, "t6b", "Subscription", "0.0002")])
    prices(out / "prices.csv", s - 2_000, s + 11 * MINUTE_MS)
    (out / "config.toml").write_text(CONFIG.format(
        name="hand", start="2026-02-01 00:00:51",
        boundaries='[["2026-02-01 00:00:00", "Pre-Kairos"], ["2026-02-01 00:05:51", "SteadyState"]]'))


# --- aggregate-matched fixture ----------------------------------------------------


def gap_day(n: int, g_star: float, lo: tuple[float, float], hi: tuple[float, float], rng) -> np.ndarray:
    """n gaps (n even) whose median is exactly g_star: two middle values equal it."""
    half = n // 2 - 1
    below = rng.uniform(*lo, half)
    above = rng.uniform(*hi, half)
    return np.concatenate([below, [g_star, g_star], above])


def solve_weight(g: np.ndarray, is_high: np.ndarray, ratio: float) -> float:
    """Top-bid weight w on high-gap rounds so that sum(paid) / sum(top) = ratio."""
    keep = 1.0 - g
    a_low, n_low = keep[~is_high].sum(), (~is_high).sum()
    a_high, n_high = keep[is_high].sum(), is_high.sum()
    # (a_low + w a_high) / (n_low + w n_high) = ratio
    return (ratio * n_low - a_low) / (a_high - ratio * n_high)


def amounts(g: np.ndarray, tops_eth: np.ndarray) -> tuple[list[int], list[int]]:
    tops = [int(round(t * 1e9)) * (SCALE // 10**9) for t in tops_eth]
    paid = []
    for gi, t in zip(g, tops):
        # keep 1e-9 ETH granularity; the two median rounds are exact by construction
        paid.append(int(round(t * (1.0 - gi) / (SCALE // 10**9))) * (SCALE // 10**9))
    return tops, paid


def aggregates(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20260201)
    day = parse_utc("2026-02-01 00:00:00")
    pre_start = day + 11 * 60 * MINUTE_MS + 30 * MINUTE_MS + 51_000  # 11:30:51
    ss_start = pre_start + 250 * MINUTE_MS  # 15:40:51
    ss_end = ss_start + 1000 * MINUTE_MS

    bids: list[tuple] = []
    trades: list[tuple] = []

    def add_round(t, top_who, top, second_who, paid, third_who=None, third=None):
        bids.append((t, top_who, top, t + 1_000))
        bids.append((t, second_who, paid, t + 2_000))
        if third_who:
            bids.append((t, third_who, third, t + 3_000))

    # Pre-Kairos: 250 rounds, one UTC day, median gap 0.373; 222 WM+Sel, 14 only WM, 14 only Sel.
    # A sole bidder pays the reserve, so those 28 rounds take high-gap slots where that keeps
    # them above the median; the top-bid weight is then solved on the realised amounts.
    n = 250
    g = gap_day(n, 0.373, (0.20, 0.37), (0.38, 0.60), rng)
    high = g > 0.373
    solo = set(np.flatnonzero(high)[:28].tolist())

    def pre_amounts(w):
        tops, paid = amounts(g, np.where(high, 0.01 * w, 0.01))
        return tops, [MILLI if k in solo else p for k, p in enumerate(paid)]

    lo_w, hi_w = 0.1, 50.0
    for _ in range(100):
        w = 0.5 * (lo_w + hi_w)
        tops, paid = pre_amounts(w)
        # more weight on high-gap rounds lowers paid/top
        if sum(paid) / sum(tops) > 7.4 / 13.6:
            lo_w = w
        else:
            hi_w = w
    tops, paid = pre_amounts(w)
    solo_order = sorted(solo)
    rest = [k for k in rng.permutation(n).tolist() if k not in solo]
    pre_paid, pre_top = sum(paid), sum(tops)
    for slot in range(n):
        t = pre_start + slot * MINUTE_MS
        if slot < 222:
            k = rest[slot]
            a, b = ("wintermute", "selini") if slot % 2 else ("selini", "wintermute")
            add_round(t, a, tops[k], b, paid[k])
        else:
            k = solo_order[slot - 222]
            bids.append((t, "wintermute" if slot < 236 else "selini", tops[k], t + 1_000))

    # Steady state: 1000 rounds over two UTC days, each day's median gap 0.852
    per_day = [int((day + DAY_MS - ss_start) // MINUTE_MS) + 1, 0]
    per_day[1] = 1000 - per_day[0]
    gs = [gap_day(m, 0.852, (0.60, 0.85), (0.855, 0.95), rng) for m in per_day]
    g = np.concatenate(gs)
    high = g > 0.852
    w = solve_weight(g, high, 6.0 / 36.3)
    tops_eth = np.where(high, 0.02 * w, 0.02)
    tops, paid = amounts(g, tops_eth)
    # permute within each day so daily medians stay put
    idx = np.concatenate([rng.permutation(per_day[0]), per_day[0] + rng.permutation(per_day[1])])
    slots = [ss_start + s * MINUTE_MS for s in range(1000)]
    in_session = [870 <= ((t % DAY_MS) // MINUTE_MS) < 1260 for t in slots]
    ins = [s for s in range(1000) if in_session[s]]
    outs = [s for s in range(1000) if not in_session[s]]
    # Kairos bids in 305 in-session and 628 out-of-session rounds and loses 58 and 91 of them
    no_kai = set(rng.choice(ins, len(ins) - 305, replace=False)) | set(rng.choice(outs, len(outs) - 628, replace=False))
    kai_rounds_in = [s for s in ins if s not in no_kai]
    kai_rounds_out = [s for s in outs if s not in no_kai]
    lost = set(rng.choice(kai_rounds_in, 58, replace=False)) | set(rng.choice(kai_rounds_out, 91, replace=False))
    kai_rounds = sorted(kai_rounds_in + kai_rounds_out)
    # 853 rounds with all three bidders, drawn from the Kairos rounds; the rest are Kairos + WM
    all_three = set(rng.choice(kai_rounds, 853, replace=False))
    ss_paid = ss_top = 0
    for s in range(1000):
        k = idx[s]
        t = slots[s]
        ss_paid += paid[k]
        ss_top += tops[k]
        third = max(paid[k] // 2, 1)
        if s in no_kai:
            add_round(t, "wintermute", tops[k], "selini", paid[k])
        elif s in lost:
            other = "wintermute" if s % 3 else "selini"
            add_round(t, other, tops[k], "kairos", paid[k],
                      ("selini" if other == "wintermute" else "wintermute") if s in all_three else None, third)
        else:
            add_round(t, "kairos", tops[k], "wintermute", paid[k], "selini" if s in all_three else None, third)

    write(out / "auctions.csv", "round_start_utc_ms,bidder,amount_eth,submitted_utc_ms",
          ((t, b, eth_str(a), st) for t, b, a, st in bids))

    # trades: gross PnL (x*P - y) sized so paid bids are 7.4% / 6.0% of total PnL
    # and 12.5% / 6.7% of time-boosted PnL
    def regime_trades(tag, t0, span_min, paid_units, share_all, share_tb, n_tb, n_reg):
        paid_usd = paid_units / SCALE * ETH_USD
        pnl_all = paid_usd / share_all
        pnl_tb = paid_usd / share_tb
        for j in range(n_tb + n_reg):
            tb = j < n_tb
            gross = (pnl_tb / n_tb) if tb else (pnl_all - pnl_tb) / n_reg
            t = t0 + int((j + 0.5) * span_min * MINUTE_MS / (n_tb + n_reg))
            who, c = (("wintermute", WM_C) if j % 2 else ("selini", SEL_C))
            y = round(ETH_USD - gross / 10, 6) * 10  # buy 10 WETH, pay y USDC
            trades.append((f"{tag}-{j:03d}", t, "WETH", 10, "USDC", repr(y), "0.25",
                           "Express" if tb else "Regular", who, c, 1))

    regime_trades("pre", pre_start, 250, pre_paid, 0.074, 0.125, 30, 30)
    regime_trades("ss", ss_start, 1000, ss_paid, 0.060, 0.067, 60, 10)
    # noise that the classifier must drop: unknown contract and multi-swap
    trades.append(("pre-x1", pre_start + 5_000, "WETH", 1, "USDC", 1, "0", "Regular", "wintermute", "0x1234", 1))
    trades.append(("ss-x2", ss_start + 5_000, "WETH", 1, "USDC", 1, "0", "Express", "selini", SEL_C, 3))
    trades.sort(key=lambda r: (r[1], r[0]))
    write(out / "trades.csv", "trade_id,utc_ms,buy_asset,x,sell_asset,y,fees_usd,lane,sender,contract,swap_events",
          trades)
    write(out / "payments.csv", "window_start_ms,tx_id,channel,payment_eth",
          [(ss_start + 30_000, "p1", "OnChain", "0.002"), (ss_start + 90_000, "p2", "OnChain", "0.001"),
           (ss_start + 90_000, "p3", "Subscription", "0.004")])
    prices(out / "prices.csv", pre_start - 2_000, ss_end + 10_000)
    (out / "config.toml").write_text(CONFIG.format(
        name="aggregates", start="2026-02-01 11:30:51",
        boundaries=f'[["2026-02-01 00:00:00", "Pre-Kairos"], [{ss_start}, "SteadyState"]]'))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "tests" / "fixtures")
    args = ap.parse_args()
    hand(args.out / "hand")
    aggregates(args.out / "aggregates")
    print(f"wrote fixtures under {args.out}")


if __name__ == "__main__":
    main()
