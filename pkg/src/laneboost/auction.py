"""Sealed-bid second-price auction with a reserve, settled once per round."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .market import Amount, EntityId, RoundBounds, TimeMs, Unit


@dataclass(frozen=True)
class Bid:
    bidder: EntityId
    amount: Amount
    submitted_at: TimeMs
    round_index: int

    def __post_init__(self) -> None:
        if not self.bidder:
            raise ValueError("bidder id must be non-empty")
        if self.amount.unit is not Unit.ETH:
            raise ValueError("bids are denominated in ETH")
        if self.amount.units <= 0:
            raise ValueError(f"bid amount must be positive, got {self.amount}")


@dataclass(frozen=True)
class AuctionOutcome:
    round_index: int
    reserve: Amount
    admissible_bid_count: int
    winner: Optional[EntityId] = None
    top_bid: Optional[Amount] = None
    paid: Optional[Amount] = None
    # second-highest admissible amount (latest bid per bidder); None with < 2 bidders
    second_bid: Optional[Amount] = None
    # each bidder's counted (latest admissible) bid, sorted by bidder id
    bids: tuple[tuple[EntityId, Amount], ...] = ()

    @property
    def settled(self) -> bool:
        return self.winner is not None

    @property
    def participants(self) -> tuple[EntityId, ...]:
        return tuple(b for b, _ in self.bids)

    def bid_of(self, bidder: EntityId) -> Optional[Amount]:
        for b, a in self.bids:
            if b == bidder:
                return a
        return None


def latest_admissible(bids: Iterable[Bid], bid_close: TimeMs, start: TimeMs | None = None) -> list[Bid]:
    """Each bidder's latest bid submitted strictly before ``bid_close``.

    Same-millisecond resubmissions keep the later one in input order.
    """
    latest: dict[EntityId, Bid] = {}
    for b in bids:
        if b.submitted_at >= bid_close:
            continue
        if start is not None and b.submitted_at < start:
            continue
        cur = latest.get(b.bidder)
        if cur is None or b.submitted_at >= cur.submitted_at:
            latest[b.bidder] = b
    return list(latest.values())


def _rank_key(b: Bid):
    return (-b.amount.units, b.submitted_at, b.bidder)


def settle(bids: list[Bid], reserve: Amount, round: RoundBounds, round_index: int | None = None) -> AuctionOutcome:
    """Settle one round.

    The winner is the highest admissible bid at or above ``reserve``; ties go to
    the earlier submission, then the lexicographically smaller bidder id. The
    winner pays ``max(second-highest admissible bid, reserve)``.
    """
    if round_index is None:
        idx = {b.round_index for b in bids}
        if len(idx) > 1:
            raise ValueError(f"bids span several rounds: {sorted(idx)}")
        round_index = idx.pop() if idx else -1
    elif any(b.round_index != round_index for b in bids):
        raise ValueError("bid round_index does not match the settled round")
    if reserve.unit is not Unit.ETH or reserve.units < 0:
        raise ValueError(f"invalid reserve {reserve!r}")

    ranked = sorted(latest_admissible(bids, round.bid_close, round.start), key=_rank_key)
    counted = tuple(sorted((b.bidder, b.amount) for b in ranked))
    second = ranked[1].amount if len(ranked) > 1 else None
    if not ranked or ranked[0].amount < reserve:
        top = ranked[0].amount if ranked else None
        return AuctionOutcome(round_index, reserve, len(ranked), top_bid=top,
                              second_bid=second, bids=counted)
    top = ranked[0]
    paid = max(second, reserve) if second is not None else reserve
    return AuctionOutcome(
        round_index,
        reserve,
        len(ranked),
        winner=top.bidder,
        top_bid=top.amount,
        paid=paid,
        second_bid=second,
        bids=counted,
    )
