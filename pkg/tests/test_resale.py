import pytest
from hypothesis import given, strategies as st

from laneboost.market import Amount, Unit, eth, usd
from laneboost.resale import (
    Channel,
    ResaleLedger,
    SubAuctionWindow,
    Submission,
    close_window,
    revenue_gap,
)
from laneboost.sequencer import Lane, TxEvent


def sub(tx_id, pay, t=10, channel=Channel.ONCHAIN):
    tx = TxEvent(tx_id, "s", t, Lane.EXPRESS, via_resale=True, resale_latency=80)
    return Submission(tx, eth(pay), channel)


def test_batch_ordered_by_payment_desc():
    w = SubAuctionWindow(0, 100, [sub("a", "0.003"), sub("b", "0.001"), sub("c", "0.002")])
    cb = close_window(w)
    assert [r.payment for r in cb.receipts] == [eth("0.003"), eth("0.002"), eth("0.001")]
    assert [e.tx_id for e in cb.batch] == ["a", "c", "b"]
    assert all(e.executed_at == 180 and e.via_resale for e in cb.batch)


def test_equal_payments_by_arrival_then_id():
    w = SubAuctionWindow(0, 100, [sub("b", "0.001", 5), sub("a", "0.001", 5), sub("c", "0.001", 1)])
    assert [e.tx_id for e in close_window(w).batch] == ["c", "a", "b"]


def test_empty_window():
    cb = close_window(SubAuctionWindow(0, 100))
    assert cb.batch == () and cb.receipts == ()


def test_window_rejects_out_of_range_arrivals():
    w = SubAuctionWindow(0, 100)
    with pytest.raises(ValueError):
        w.add(sub("a", "0.001", 100))


def test_subscription_not_observable():
    w = SubAuctionWindow(0, 100, [sub("a", "0.002"), sub("b", "0.005", channel=Channel.SUBSCRIPTION)])
    led = ResaleLedger()
    led.record_batch(0, close_window(w))
    assert led.observable_revenue == eth("0.002")
    assert led.totals().subscription_receipts == eth("0.005")


def test_revenue_gap_observed_numbers():
    led = ResaleLedger(Unit.USD)
    led.record_primary(0, usd(151_302))
    led.record_receipt(0, Channel.ONCHAIN, usd(8_001))
    assert revenue_gap(led) == (usd(151_302), usd(8_001), usd(143_301))
    assert revenue_gap(ResaleLedger()).gap == Amount.zero()


def test_revenue_gap_over_interval():
    led = ResaleLedger()
    led.record_primary(0, eth(1))
    led.record_primary(100, eth(2))
    led.record_receipt(150, Channel.ONCHAIN, eth("0.5"))
    g = revenue_gap(led, (100, 200))
    assert g == (eth(2), eth("0.5"), eth("1.5"))


@given(st.lists(st.tuples(st.integers(0, 10**18), st.booleans(), st.integers(0, 5)), max_size=40))
def test_ledger_totals_equal_hand_sum(raw):
    led = ResaleLedger()
    for units, onchain, t in raw:
        led.record_receipt(t, Channel.ONCHAIN if onchain else Channel.SUBSCRIPTION, Amount(units))
    tot = led.totals()
    assert tot.onchain_receipts.units == sum(u for u, o, _ in raw if o)
    assert tot.subscription_receipts.units == sum(u for u, o, _ in raw if not o)
