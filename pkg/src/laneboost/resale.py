"""Just-in-time resale of express-lane access in ~100 ms sub-auction batches."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple, Optional, TextIO

from .market import Amount, TimeMs, Unit
from .sequencer import Lane, TxEvent


class Channel(str, Enum):
    ONCHAIN = "OnChain"
    SUBSCRIPTION = "Subscription"


@dataclass(frozen=True)
class Submission:
    tx: TxEvent
    payment: Amount
    channel: Channel = Channel.ONCHAIN


@dataclass
class SubAuctionWindow:
    window_start: TimeMs
    window_length: int = 100
    submissions: list[Submission] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.window_length <= 0:
            raise ValueError("window_length must be positive")
        for s in self.submissions:
            self._check(s)

    @property
    def release(self) -> TimeMs:
        return self.window_start + self.window_length

    def _check(self, s: Submission) -> None:
        if not self.window_start <= s.tx.arrival < self.release:
            raise ValueError(f"tx {s.tx.tx_id} arrives at {s.tx.arrival}, outside "
                             f"[{self.window_start}, {self.release})")
        if s.payment.units < 0:
            raise ValueError("declared payment must be non-negative")

    def add(self, s: Submission) -> None:
        self._check(s)
        self.submissions.append(s)


class Receipt(NamedTuple):
    window_start: TimeMs
    tx_id: str
    channel: Channel
    payment: Amount


@dataclass(frozen=True)
class ClosedBatch:
    window_start: TimeMs
    release: TimeMs
    batch: tuple[TxEvent, ...]
    receipts: tuple[Receipt, ...]

    def _total(self, channel: Channel, unit: Unit) -> Amount:
        return sum((r.payment for r in self.receipts if r.channel is channel), Amount.zero(unit))

    def onchain(self, unit: Unit = Unit.ETH) -> Amount:
        return self._total(Channel.ONCHAIN, unit)

    def subscription(self, unit: Unit = Unit.ETH) -> Amount:
        return self._total(Channel.SUBSCRIPTION, unit)


def close_window(w: SubAuctionWindow) -> ClosedBatch:
    """Order the window's txs by declared payment (desc), then submission time,
    then tx id, and stamp each with ``release + resale_latency``."""
    ordered = sorted(w.submissions, key=lambda s: (-s.payment.units, s.tx.arrival, s.tx.tx_id))
    release = w.release
    batch = tuple(
        TxEvent(tx.tx_id, tx.sender, tx.arrival, Lane.EXPRESS, True, tx.resale_latency,
                release + tx.resale_latency, tx.round_index, tx.payload)
        for tx in (s.tx for s in ordered)
    )
    receipts = tuple(Receipt(w.window_start, s.tx.tx_id, s.channel, s.payment) for s in ordered)
    return ClosedBatch(w.window_start, release, batch, receipts)


@dataclass
class LedgerEntry:
    bids_paid_primary: Amount
    onchain_receipts: Amount
    subscription_receipts: Amount


@dataclass
class ResaleLedger:
    """Per-round reseller accounts keyed by the round's start time.

    Only on-chain receipts are observable; subscription receipts (per-tx
    declared amounts plus any flat fee) are tracked but never reported as
    observable revenue.
    """

    unit: Unit = Unit.ETH
    entries: dict[TimeMs, LedgerEntry] = field(default_factory=dict)

    def _entry(self, t: TimeMs) -> LedgerEntry:
        e = self.entries.get(t)
        if e is None:
            z = Amount.zero(self.unit)
            e = self.entries[t] = LedgerEntry(z, z, z)
        return e

    def record_primary(self, t: TimeMs, paid: Amount) -> None:
        e = self._entry(t)
        e.bids_paid_primary = e.bids_paid_primary + paid

    def record_receipt(self, t: TimeMs, channel: Channel, payment: Amount) -> None:
        e = self._entry(t)
        if channel is Channel.ONCHAIN:
            e.onchain_receipts = e.onchain_receipts + payment
        else:
            e.subscription_receipts = e.subscription_receipts + payment

    def record_batch(self, t: TimeMs, batch: ClosedBatch) -> None:
        for r in batch.receipts:
            self.record_receipt(t, r.channel, r.payment)

    def totals(self, over: Optional[tuple[TimeMs, TimeMs]] = None) -> LedgerEntry:
        paid = onchain = sub = 0
        for t, e in self.entries.items():
            if over is not None and not over[0] <= t < over[1]:
                continue
            paid += e.bids_paid_primary.units
            onchain += e.onchain_receipts.units
            sub += e.subscription_receipts.units
        u = self.unit
        return LedgerEntry(Amount(paid, u), Amount(onchain, u), Amount(sub, u))

    @property
    def observable_revenue(self) -> Amount:
        return self.totals().onchain_receipts


class RevenueGap(NamedTuple):
    bids_paid: Amount
    observable: Amount
    gap: Amount


def revenue_gap(ledger: ResaleLedger, over: Optional[tuple[TimeMs, TimeMs]] = None) -> RevenueGap:
    """Primary-auction spend minus observable (on-chain) resale receipts; may be negative."""
    tot = ledger.totals(over)
    return RevenueGap(tot.bids_paid_primary, tot.onchain_receipts,
                      tot.bids_paid_primary - tot.onchain_receipts)


RECEIPT_COLUMNS = ["window_start_ms", "tx_id", "channel", "payment_eth"]


def write_receipts(receipts: Iterable[Receipt], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RECEIPT_COLUMNS)
    for r in receipts:
        w.writerow([r.window_start, r.tx_id, r.channel.value, str(r.payment)])
