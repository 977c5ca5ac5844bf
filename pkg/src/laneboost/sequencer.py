"""Sequencer model: an express FCFS queue merged with a delayed regular FCFS queue."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, NamedTuple, Optional, TextIO

from .market import EntityId, TimeMs


class Lane(str, Enum):
    EXPRESS = "Express"
    REGULAR = "Regular"


class UnauthorizedExpressError(Exception):
    """Express submission from a sender that does not control the round."""

    def __init__(self, tx_id: str, sender: EntityId):
        super().__init__(f"{sender} does not control the express lane (tx {tx_id})")
        self.tx_id = tx_id
        self.sender = sender


class TxEvent(NamedTuple):
    tx_id: str
    sender: EntityId
    arrival: TimeMs
    lane: Lane = Lane.REGULAR
    via_resale: bool = False
    resale_latency: int = 0
    executed_at: Optional[TimeMs] = None
    round_index: int = -1
    payload: Optional[object] = None


@dataclass(frozen=True)
class SequencerConfig:
    regular_delay: int = 200
    express_base_latency: int = 0

    def __post_init__(self) -> None:
        if self.regular_delay <= 0:
            raise ValueError("regular_delay must be positive")
        if self.express_base_latency < 0:
            raise ValueError("express_base_latency must be non-negative")


def assign_execution(
    tx: TxEvent,
    cfg: SequencerConfig,
    controller: Optional[EntityId] = None,
    batch_release: Optional[TimeMs] = None,
) -> TimeMs:
    """Execution time for ``tx``.

    ``controller`` is whoever holds the express lane at ``tx.arrival``; when
    given, a direct express tx from anyone else raises
    :class:`UnauthorizedExpressError`. Resale txs need ``batch_release``.
    """
    if tx.lane is Lane.REGULAR:
        return tx.arrival + cfg.regular_delay
    if tx.via_resale:
        if batch_release is None:
            raise ValueError(f"resale tx {tx.tx_id} has no batch release time")
        if batch_release < tx.arrival:
            raise ValueError(f"batch released before tx {tx.tx_id} arrived")
        return batch_release + tx.resale_latency
    if controller is not None and tx.sender != controller:
        raise UnauthorizedExpressError(tx.tx_id, tx.sender)
    return tx.arrival + cfg.express_base_latency


def submit(tx: TxEvent, cfg: SequencerConfig, controller: Optional[EntityId]) -> tuple[TxEvent, bool]:
    """Assign execution, re-routing a rejected express tx to the regular lane.

    Returns the executed event and whether it was rejected from the express lane.
    """
    try:
        at = assign_execution(tx, cfg, controller=controller or "")
        return TxEvent(tx.tx_id, tx.sender, tx.arrival, tx.lane, tx.via_resale, tx.resale_latency, at,
                       tx.round_index, tx.payload), False
    except UnauthorizedExpressError:
        return TxEvent(tx.tx_id, tx.sender, tx.arrival, Lane.REGULAR, False, 0, tx.arrival + cfg.regular_delay,
                       tx.round_index, tx.payload), True


def _order_key(e: TxEvent):
    # express-first on identical execution times
    return (e.executed_at, 0 if e.lane is Lane.EXPRESS else 1, e.arrival, e.tx_id)


def merged_order(events: Iterable[TxEvent]) -> list[TxEvent]:
    evs = list(events)
    for e in evs:
        if e.executed_at is None:
            raise ValueError(f"tx {e.tx_id} has no execution time")
    return sorted(evs, key=_order_key)


def resale_guarantee_holds(batch: list[TxEvent], regulars: Iterable[TxEvent],
                           window_start: TimeMs, window_length: int) -> bool:
    """True iff every regular tx arriving in the batch's collection window is
    ordered after the whole batch by :func:`merged_order`."""
    if not batch:
        return True
    last = max(_order_key(e) for e in batch)
    lo, hi = window_start, window_start + window_length
    return all(_order_key(r) > last for r in regulars if lo <= r.arrival < hi)


TRACE_HEADER = "# ties between express and regular txs at equal executed_ms are broken express-first\n"
TRACE_COLUMNS = ["tx_id", "sender", "lane", "via_resale", "arrival_ms", "executed_ms", "round_index"]


def write_trace(events: Iterable[TxEvent], fh: TextIO) -> None:
    fh.write(TRACE_HEADER)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for e in events:
        w.writerow([e.tx_id, e.sender, e.lane.value, int(e.via_resale), e.arrival, e.executed_at, e.round_index])
