"""Simulate the regime and prediction presets and print their headline numbers.

    python scripts/run_regimes.py [--out runs] [--presets competitive noncompetitive ...]

For each preset: median relative bid gap, win shares of the focus entities,
and the auctioneer's captured share of (time-boosted) PnL.
"""

from __future__ import annotations

import argparse
import csv
import time
from pathlib import Path

from laneboost.config import load_config, preset_names
from laneboost.pipeline import run_simulate


def rows(path: Path) -> list[dict[str, str]]:
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path("runs"))
    ap.add_argument("--presets", nargs="*", default=preset_names())
    args = ap.parse_args()

    print(f"{'preset':20s} {'gap':>6s} {'WM':>6s} {'Sel':>6s} {'Kai':>6s} {'cap all':>8s} {'cap TB':>8s} {'sec':>5s}")
    for name in args.presets:
        cfg, text = load_config(name)
        t0 = time.perf_counter()
        s = run_simulate(cfg, args.out / name, "csv", text)
        dt = time.perf_counter() - t0
        gap = {r["regime"]: float(r["median_gap"]) for r in rows(s.out / "bid_gap_summary.csv")}["Overall"]
        won = {r["entity"]: float(r["share"]) for r in rows(s.out / "rounds_won.csv") if r["regime"] == "Overall"}
        cap = {r["scope"]: float(r["captured_share_paid"]) for r in rows(s.out / "surplus.csv")
               if r["period"] == "Overall"}
        print(f"{name:20s} {gap:6.3f} {won.get('wintermute', 0):6.1%} {won.get('selini', 0):6.1%} "
              f"{won.get('kairos', 0):6.1%} {cap['all']:8.4f} {cap['time-boosted']:8.4f} {dt:5.1f}"
              + ("" if s.ok else "  invariant check failed"))


if __name__ == "__main__":
    main()
