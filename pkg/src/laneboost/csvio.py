"""Frozen CSV schemas: readers that validate headers and cells, and writers.

Column lists here are the contract documented in SCHEMAS.md. Lines starting
with ``#`` are comments and skipped on read.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Optional, Sequence, TextIO

import numpy as np

from .analytics import TxRecord
from .market import Amount, TimeMs, Unit
from .prices import PriceSeries, Trade
from .resale import Channel
from .sequencer import Lane

BID_COLUMNS = ["round_start_utc_ms", "bidder", "amount_eth", "submitted_utc_ms"]
TRADE_COLUMNS = ["trade_id", "utc_ms", "buy_asset", "x", "sell_asset", "y", "fees_usd", "lane", "sender"]
TRADE_OPTIONAL = ["contract", "swap_events"]
PRICE_COLUMNS = ["utc_ms", "asset", "mid_price"]
PAYMENT_COLUMNS = ["tx_hash", "utc_ms", "payment_eth"]
RECEIPT_COLUMNS = ["window_start_ms", "tx_id", "channel", "payment_eth"]


class SchemaError(ValueError):
    def __init__(self, path: str, line: int, column: Optional[str], message: str):
        self.path, self.line, self.column = path, line, column
        col = f" column {column!r}" if column else ""
        super().__init__(f"{path}:{line}:{col} {message}")


@dataclass(frozen=True)
class Row:
    path: str
    line: int
    cells: dict[str, str]

    def error(self, column: Optional[str], msg: str) -> SchemaError:
        return SchemaError(self.path, self.line, column, msg)

    def str(self, col: str) -> str:
        v = self.cells[col]
        if v == "":
            raise self.error(col, "empty value")
        return v

    def int(self, col: str) -> int:
        v = self.str(col)
        try:
            return int(v)
        except ValueError:
            raise self.error(col, f"expected integer, got {v!r}") from None

    def float(self, col: str) -> float:
        v = self.str(col)
        try:
            x = float(v)
        except ValueError:
            raise self.error(col, f"expected number, got {v!r}") from None
        if not math.isfinite(x):
            raise self.error(col, f"non-finite value {v!r}")
        return x

    def amount(self, col: str, unit: Unit = Unit.ETH) -> Amount:
        v = self.str(col)
        try:
            a = Amount.of(v, unit)
        except ValueError:
            raise self.error(col, f"expected decimal amount, got {v!r}") from None
        if a.units < 0:
            raise self.error(col, "amount must be non-negative")
        return a


def _data_lines(fh: TextIO) -> Iterator[tuple[int, str]]:
    for no, line in enumerate(fh, start=1):
        if line.startswith("#") or not line.strip():
            continue
        yield no, line


def read_rows(path: str | Path, columns: Sequence[str], optional: Sequence[str] = ()) -> tuple[list[str], list[Row]]:
    """Read a CSV whose header is ``columns`` optionally followed by a prefix of ``optional``."""
    path = str(path)
    with open(path, newline="") as fh:
        lines = list(_data_lines(fh))
    if not lines:
        raise SchemaError(path, 1, None, f"missing header, expected {','.join(columns)}")
    numbers = [n for n, _ in lines]
    records = list(csv.reader(l for _, l in lines))
    header = [h.strip() for h in records[0]]
    n = len(columns)
    if header[:n] != list(columns):
        for i, want in enumerate(columns):
            got = header[i] if i < len(header) else None
            if got != want:
                raise SchemaError(path, numbers[0], want, f"expected header column {i + 1} to be {want!r}, got {got!r}")
    extra = header[n:]
    if extra != list(optional[: len(extra)]):
        raise SchemaError(path, numbers[0], extra[0], f"unexpected column {extra[0]!r}")
    rows = []
    for no, rec in zip(numbers[1:], records[1:]):
        if len(rec) != len(header):
            raise SchemaError(path, no, None, f"expected {len(header)} fields, got {len(rec)}")
        rows.append(Row(path, no, dict(zip(header, (c.strip() for c in rec)))))
    return header, rows


# --- typed readers -----------------------------------------------------------


@dataclass(frozen=True)
class BidRow:
    round_start: TimeMs
    bidder: str
    amount: Amount
    submitted_at: TimeMs
    line: int


def read_bids(path: str | Path) -> list[BidRow]:
    _, rows = read_rows(path, BID_COLUMNS)
    out = []
    for r in rows:
        a = r.amount("amount_eth")
        if a.units <= 0:
            raise r.error("amount_eth", "bid amount must be positive")
        out.append(BidRow(r.int("round_start_utc_ms"), r.str("bidder"), a, r.int("submitted_utc_ms"), r.line))
    return out


def read_trades(path: str | Path) -> list[tuple[Trade, Optional[TxRecord]]]:
    """Trades, with a classification record when the optional columns are present."""
    header, rows = read_rows(path, TRADE_COLUMNS, TRADE_OPTIONAL)
    has_cls = len(header) == len(TRADE_COLUMNS) + len(TRADE_OPTIONAL)
    if len(header) not in (len(TRADE_COLUMNS), len(TRADE_COLUMNS) + len(TRADE_OPTIONAL)):
        raise SchemaError(str(path), 1, "swap_events", "contract and swap_events must appear together")
    out = []
    seen: set[str] = set()
    for r in rows:
        tid = r.str("trade_id")
        if tid in seen:
            raise r.error("trade_id", f"duplicate trade id {tid!r}")
        seen.add(tid)
        try:
            lane = Lane(r.str("lane"))
        except ValueError:
            raise r.error("lane", f"expected Express or Regular, got {r.cells['lane']!r}") from None
        x, y = r.float("x"), r.float("y")
        if x < 0 or y < 0:
            raise r.error("x" if x < 0 else "y", "must be non-negative")
        t = Trade(tid, r.int("utc_ms"), r.str("buy_asset"), x, r.str("sell_asset"), y,
                  r.amount("fees_usd", Unit.USD), lane, r.str("sender"))
        rec = None
        if has_cls:
            # malformed classification cells are left to the classifier to count
            ev = r.cells["swap_events"]
            rec = TxRecord(r.cells["contract"], int(ev) if ev.lstrip("-").isdigit() else -1,
                           t.buy_asset, t.sell_asset)
        out.append((t, rec))
    return out


def read_prices(path: str | Path, resolution: int = 1000) -> dict[str, PriceSeries]:
    _, rows = read_rows(path, PRICE_COLUMNS)
    times: dict[str, list[int]] = defaultdict(list)
    prices: dict[str, list[float]] = defaultdict(list)
    for r in rows:
        asset = r.str("asset")
        p = r.float("mid_price")
        if p <= 0:
            raise r.error("mid_price", "price must be positive")
        t = r.int("utc_ms")
        ts = times[asset]
        if ts and t - ts[-1] != resolution:
            raise r.error("utc_ms", f"{asset} samples must be strictly increasing at {resolution} ms spacing")
        ts.append(t)
        prices[asset].append(p)
    out = {}
    for a in times:
        out[a] = PriceSeries(a, np.array(times[a], dtype=np.int64), np.array(prices[a]), resolution)
    return out


@dataclass(frozen=True)
class PaymentRow:
    tx_id: str
    t: TimeMs
    channel: Channel
    payment: Amount


def read_payments(path: str | Path) -> list[PaymentRow]:
    """Observed resale payments: the on-chain schema, or the receipts schema
    (whose Subscription rows are kept but never counted as observable)."""
    path = str(path)
    with open(path, newline="") as fh:
        first = next((l for _, l in _data_lines(fh)), "")
    if first.startswith(RECEIPT_COLUMNS[0]):
        _, rows = read_rows(path, RECEIPT_COLUMNS)
        out = []
        for r in rows:
            try:
                ch = Channel(r.str("channel"))
            except ValueError:
                raise r.error("channel", f"expected OnChain or Subscription, got {r.cells['channel']!r}") from None
            out.append(PaymentRow(r.str("tx_id"), r.int("window_start_ms"), ch, r.amount("payment_eth")))
        return out
    _, rows = read_rows(path, PAYMENT_COLUMNS)
    return [PaymentRow(r.str("tx_hash"), r.int("utc_ms"), Channel.ONCHAIN, r.amount("payment_eth")) for r in rows]


# --- writers -----------------------------------------------------------------


def fmt(v: Any) -> str:
    tv = type(v)
    if tv is int:
        return str(v)
    if tv is float:
        return repr(v) if v == v else "nan"
    if tv is Amount:
        return str(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    if isinstance(v, Amount):
        return str(v)
    if hasattr(v, "value") and hasattr(v, "name"):
        return str(v.value)
    return str(v)


def write_csv(fh: TextIO, columns: Sequence[str], rows: Iterable[Sequence[Any]], comment: str = "") -> None:
    if comment:
        fh.write(comment)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([v if type(v) is str else fmt(v) for v in r])


def json_value(v: Any) -> Any:
    if isinstance(v, float):
        return None if math.isnan(v) else v
    if isinstance(v, Amount):
        return str(v)
    if isinstance(v, (bool, int, str)) or v is None:
        return v
    if hasattr(v, "value") and hasattr(v, "name"):
        return v.value
    return str(v)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Bundle:
    """An output directory whose files are tracked for the manifest."""

    MANIFEST = "manifest.json"
    TIMING = "timing.json"  # wall-clock times; excluded from digests

    def __init__(self, out: str | Path):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.out / name

    def write_text(self, name: str, text: str) -> None:
        self.path(name).write_text(text)

    def write_table(self, name: str, columns: Sequence[str], rows: Iterable[Sequence[Any]],
                    comment: str = "") -> None:
        with open(self.path(name), "w", newline="") as fh:
            write_csv(fh, columns, rows, comment)

    def write_with(self, name: str, fn: Callable[[TextIO], None]) -> None:
        with open(self.path(name), "w", newline="") as fh:
            fn(fh)

    def write_json(self, name: str, obj: Any) -> None:
        self.write_text(name, json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")

    def digests(self) -> dict[str, str]:
        return {f: sha256_file(self.out / f) for f in sorted(self.files)}

    def finish(self, manifest: dict, timing: dict) -> None:
        manifest = dict(manifest, outputs=self.digests())
        (self.out / self.MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        (self.out / self.TIMING).write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")
