"""Command-line entry point: ``laneboost simulate|replay|calibrate|report``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, load_config, preset_names
from .csvio import SchemaError
from .prices import InsufficientDataError

log = logging.getLogger("laneboost")


def _setup_logging() -> None:
    level = os.environ.get("LANEBOOST_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="laneboost", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True, multi=False):
        sp.add_argument("--config", required=config_required, action="append" if multi else "store",
                        help=f"config file or preset name ({', '.join(preset_names())})")
        sp.add_argument("--out", required=True, type=Path, help="output directory")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--jobs", type=int, default=1, help="parallel runs or grid windows")
        sp.add_argument("--format", choices=("csv", "json"), default="csv", help="analytics table format")

    s = sub.add_parser("simulate", help="run scenarios and write trace + analytics bundles")
    common(s, multi=True)

    r = sub.add_parser("replay", help="compute analytics from ingested CSV data")
    common(r)
    r.add_argument("--auctions", required=True, type=Path, help="bid records CSV")
    r.add_argument("--trades", required=True, type=Path)
    r.add_argument("--prices", required=True, type=Path)
    r.add_argument("--payments", type=Path, help="observed resale payments CSV")

    c = sub.add_parser("calibrate", help="grid-search the volatility-indexed reserve rule")
    common(c)
    c.add_argument("--rounds", required=True, type=Path, help="bid records CSV")
    c.add_argument("--prices", required=True, type=Path)
    c.add_argument("--windows", type=_floats, help="comma-separated window lengths in seconds")
    c.add_argument("--c", dest="cs", type=_floats, help="comma-separated c values")

    rp = sub.add_parser("report", help="recompute analytics from a simulation bundle")
    common(rp, config_required=False)
    rp.add_argument("--bundle", required=True, type=Path, help="simulation bundle directory")
    return p


def _load(source: str, seed: Optional[int]):
    cfg, text = load_config(source)
    return (cfg.with_seed(seed) if seed is not None else cfg), text


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    from . import pipeline

    try:
        if args.command == "simulate":
            sources = args.config
            if len(sources) == 1:
                cfg, text = _load(sources[0], args.seed)
                ok = pipeline.run_simulate(cfg, args.out, args.format, text).ok
                print(f"wrote {args.out}")
                return 0 if ok else 3
            for src in sources:
                load_config(src)  # validate everything before any run starts
            jobs = [(src, args.seed, args.out / Path(src).stem, args.format) for src in sources]
            if args.jobs > 1:
                with ProcessPoolExecutor(max_workers=args.jobs) as ex:
                    results = list(ex.map(pipeline._simulate_job, jobs))
            else:
                results = [pipeline._simulate_job(j) for j in jobs]
            for ok, out in results:
                print(f"wrote {out}{'' if ok else ' (invariant check failed)'}")
            return 0 if all(ok for ok, _ in results) else 3
        if args.command == "replay":
            cfg, text = _load(args.config, args.seed)
            s = pipeline.run_replay(cfg, args.auctions, args.trades, args.prices, args.payments,
                                    args.out, args.format, text)
        elif args.command == "calibrate":
            cfg, _ = _load(args.config, args.seed)
            windows = [int(round(w * 1000)) for w in args.windows] if args.windows else None
            s = pipeline.run_calibrate(cfg, args.rounds, args.prices, args.out, args.jobs, windows, args.cs)
            b = s.invariants["best"]
            print(f"best window={b.window / 1000:g}s c={b.c:g} recovery={b.recovery_ratio:.4f}")
        else:
            s = pipeline.run_report(args.bundle, args.out, args.format, args.config)
        print(f"wrote {s.out}")
        return 0 if s.ok else 3
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SchemaError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except (InsufficientDataError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
