"""Searcher and reseller behaviour: per-round valuation, bidding, lane choice."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np

from .auction import Bid
from .market import Amount, EntityId, TimeMs, Unit
from .resale import Channel
from .sequencer import Lane, TxEvent


class Role(str, Enum):
    SEARCHER = "Searcher"
    RESELLER = "Reseller"


@dataclass(frozen=True)
class Competitive:
    """Bid a shaded share of the private value."""


@dataclass(frozen=True)
class ResaleUser:
    """Source the lane from the reseller; at most a probe bid near the reserve."""

    probe_bid: Optional[Amount] = None


@dataclass(frozen=True)
class FixedBidReseller:
    bid: Amount


@dataclass(frozen=True)
class ValueTrackingReseller:
    """Bid ``(1 + markup)`` times the estimated aggregate resale demand."""

    markup: float = 0.0


Strategy = Union[Competitive, ResaleUser, FixedBidReseller, ValueTrackingReseller]


@dataclass(frozen=True)
class AgentSpec:
    id: EntityId
    role: Role
    strategy: Strategy
    value_coeff: float = 0.0  # ETH of per-round value per unit of sigma^2
    shade: float = 1.0
    noise: float = 0.0  # dispersion of the multiplicative valuation noise
    opportunity_rate: float = 0.0  # opportunities per second at reference vol
    participation: float = 1.0
    detect_prob: float = 1.0
    subscribes: bool = False
    channel: Channel = Channel.ONCHAIN
    payment_fraction: float = 0.0  # declared resale payment / expected edge
    reaction_ms: tuple[int, int] = (0, 50)

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("agent id must be non-empty")
        if not 0.0 <= self.shade <= 1.0:
            raise ValueError(f"{self.id}: shade must be in [0, 1]")
        for name in ("participation", "detect_prob", "payment_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{self.id}: {name} must be in [0, 1]")
        if self.value_coeff < 0 or self.noise < 0 or self.opportunity_rate < 0:
            raise ValueError(f"{self.id}: value_coeff, noise, opportunity_rate must be >= 0")
        lo, hi = self.reaction_ms
        if not 0 <= lo <= hi:
            raise ValueError(f"{self.id}: reaction_ms must satisfy 0 <= lo <= hi")
        s = self.strategy
        if isinstance(s, ResaleUser) and s.probe_bid is not None and s.probe_bid.units <= 0:
            raise ValueError(f"{self.id}: probe bid must be positive")
        if isinstance(s, FixedBidReseller) and s.bid.units <= 0:
            raise ValueError(f"{self.id}: fixed bid must be positive")
        if isinstance(s, ValueTrackingReseller) and s.markup <= -1:
            raise ValueError(f"{self.id}: markup must exceed -1")


@dataclass(frozen=True)
class RoundValuation:
    round_index: int
    agent: EntityId
    v: Amount
    base: float  # deterministic part k * sigma^2


def value_round(agent: AgentSpec, sigma: float, rng: Optional[np.random.Generator] = None,
                round_index: int = 0) -> RoundValuation:
    """Per-round lane value ``k * sigma^2`` plus zero-mean noise.

    Noise is multiplicative lognormal, ``exp(d*z - d^2/2)``, so the noise term
    has mean zero and ``v`` stays non-negative. Without ``rng`` it is off.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    base = agent.value_coeff * sigma * sigma
    v = base
    if rng is not None and agent.noise > 0:
        d = agent.noise
        v = base * float(np.exp(d * rng.standard_normal() - 0.5 * d * d))
    return RoundValuation(round_index, agent.id, Amount.of(v, Unit.ETH), base)


@dataclass(frozen=True)
class RoundContext:
    round_index: int
    submitted_at: TimeMs
    # reseller's estimate of what subscribers would pay for the lane this round
    resale_demand: Amount = field(default_factory=Amount.zero)


def bid_amount(agent: AgentSpec, valuation: RoundValuation, reserve: Amount,
               ctx: RoundContext) -> Optional[Amount]:
    s = agent.strategy
    if isinstance(s, Competitive):
        b = valuation.v.scale(agent.shade)
    elif isinstance(s, ResaleUser):
        b = s.probe_bid
    elif isinstance(s, FixedBidReseller):
        b = s.bid
    elif isinstance(s, ValueTrackingReseller):
        b = ctx.resale_demand.scale(1.0 + s.markup)
    else:
        raise TypeError(f"unknown strategy {s!r}")
    if b is None or b.units <= 0 or b < reserve:
        return None
    return b


def bid_decision(agent: AgentSpec, valuation: RoundValuation, reserve: Amount,
                 ctx: RoundContext) -> Optional[Bid]:
    """The agent's bid for this round, or None to abstain."""
    b = bid_amount(agent, valuation, reserve, ctx)
    if b is None:
        return None
    return Bid(agent.id, b, ctx.submitted_at, ctx.round_index)


# --- trade routing -----------------------------------------------------------


@dataclass(frozen=True)
class Opportunity:
    opp_id: str
    t: TimeMs
    expected_edge: Amount  # ETH


@dataclass(frozen=True)
class ControlState:
    controller: Optional[EntityId]
    resellers: frozenset[EntityId] = frozenset()
    resale_latency: int = 0
    round_index: int = -1


@dataclass(frozen=True)
class OrderPayload:
    opp_id: str
    payment: Optional[Amount] = None
    channel: Optional[Channel] = None


def declared_payment(agent: AgentSpec, opp: Opportunity) -> Amount:
    return opp.expected_edge.scale(agent.payment_fraction)


def route_trade(agent: AgentSpec, opp: Opportunity, control: ControlState,
                arrival: Optional[TimeMs] = None) -> TxEvent:
    """Express when the agent holds the lane, via the reseller when it holds the
    lane and the agent subscribes, otherwise regular."""
    t = opp.t if arrival is None else arrival
    tx_id = f"{opp.opp_id}:{agent.id}"
    if control.controller == agent.id:
        return TxEvent(tx_id, agent.id, t, Lane.EXPRESS, round_index=control.round_index,
                       payload=OrderPayload(opp.opp_id))
    if control.controller is not None and control.controller in control.resellers and agent.subscribes:
        return TxEvent(tx_id, agent.id, t, Lane.EXPRESS, via_resale=True,
                       resale_latency=control.resale_latency, round_index=control.round_index,
                       payload=OrderPayload(opp.opp_id, declared_payment(agent, opp), agent.channel))
    return TxEvent(tx_id, agent.id, t, Lane.REGULAR, round_index=control.round_index,
                   payload=OrderPayload(opp.opp_id))
