"""CSV ingestion: schema errors name the file, line and column."""

import pytest

from laneboost.csvio import SchemaError, read_bids, read_payments, read_prices, read_trades


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_bids_roundtrip(tmp_path):
    p = write(tmp_path, "b.csv", "round_start_utc_ms,bidder,amount_eth,submitted_utc_ms\n"
                                 "1769904051000,wintermute,0.0012,1769904052000\n")
    (b,) = read_bids(p)
    assert b.bidder == "wintermute" and b.amount.units == 12 * 10**14 and b.line == 2


def test_wrong_header_names_column(tmp_path):
    p = write(tmp_path, "b.csv", "round_start_utc_ms,who,amount_eth,submitted_utc_ms\n")
    with pytest.raises(SchemaError) as e:
        read_bids(p)
    assert e.value.column == "bidder" and e.value.line == 1


def test_bad_cell_names_line_and_column(tmp_path):
    p = write(tmp_path, "b.csv", "round_start_utc_ms,bidder,amount_eth,submitted_utc_ms\n"
                                 "1769904051000,wintermute,0.001,1769904052000\n"
                                 "1769904051000,selini,lots,1769904052000\n")
    with pytest.raises(SchemaError) as e:
        read_bids(p)
    assert (e.value.line, e.value.column) == (3, "amount_eth")
    assert "b.csv:3" in str(e.value)


def test_ragged_row(tmp_path):
    p = write(tmp_path, "b.csv", "round_start_utc_ms,bidder,amount_eth,submitted_utc_ms\n1,2,3\n")
    with pytest.raises(SchemaError) as e:
        read_bids(p)
    assert e.value.line == 2


def test_empty_file(tmp_path):
    with pytest.raises(SchemaError):
        read_bids(write(tmp_path, "b.csv", ""))


def test_trades_with_and_without_classification(tmp_path):
    head = "trade_id,utc_ms,buy_asset,x,sell_asset,y,fees_usd,lane,sender"
    p = write(tmp_path, "t.csv", head + "\nt1,1000,WETH,1,USDC,2000,0.5,Express,wintermute\n")
    ((t, rec),) = read_trades(p)
    assert rec is None and t.fees.units > 0
    p = write(tmp_path, "t2.csv", head + ",contract,swap_events\nt1,1000,WETH,1,USDC,2000,0.5,Express,w,0xab,1\n")
    ((_, rec),) = read_trades(p)
    assert rec is not None


def test_unexpected_extra_column(tmp_path):
    head = "trade_id,utc_ms,buy_asset,x,sell_asset,y,fees_usd,lane,sender,colour"
    with pytest.raises(SchemaError) as e:
        read_trades(write(tmp_path, "t.csv", head + "\n"))
    assert e.value.column == "colour"


def test_prices_need_fixed_spacing(tmp_path):
    ok = write(tmp_path, "p.csv", "utc_ms,asset,mid_price\n0,ETH,1\n1000,ETH,2\n2000,ETH,3\n")
    assert len(read_prices(ok)["ETH"].prices) == 3
    gap = write(tmp_path, "q.csv", "utc_ms,asset,mid_price\n0,ETH,1\n3000,ETH,2\n")
    with pytest.raises(SchemaError) as e:
        read_prices(gap)
    assert e.value.line == 3


def test_payment_formats(tmp_path):
    r = write(tmp_path, "r.csv", "window_start_ms,tx_id,channel,payment_eth\n100,a,OnChain,0.001\n")
    p = write(tmp_path, "p.csv", "tx_hash,utc_ms,payment_eth\n0xab,100,0.002\n")
    assert len(read_payments(r)) == 1 and len(read_payments(p)) == 1
