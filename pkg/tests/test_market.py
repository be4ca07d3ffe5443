from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracle import brute_force_match, expected_holdings

from callmarket.gas_meter import OutOfGasError
from callmarket.market import (
    Asset,
    CallMarket,
    Fill,
    ImprovementRecipient,
    InsufficientBalanceError,
    MarketClosedError,
    MarketOpenError,
    NothingToClaimError,
    Order,
    OrderCapError,
    Phase,
    Side,
    compute_clearing_price,
    encode_call,
    fills_from_json,
    fills_to_json,
    format_price,
    load_book_csv,
    max_worst_case_trades,
    pack_payload,
    parse_price,
    random_book,
    run_book,
    sample_book,
    unpack_payload,
    worst_case_book,
    worst_case_close,
    write_book_csv,
)
from callmarket.pq import Variant

VARIANTS = list(Variant)


def as_tuples(fills):
    return [(f.buyer, f.seller, f.volume, f.bid_price, f.ask_price) for f in fills]


def holdings(market):
    out = {}
    for name in market.accounts.names():
        for asset in Asset:
            v = market.ledger.view_total(name, asset)
            if v:
                out[(name, asset.value)] = v
    return out


def test_price_parsing():
    assert parse_price("10.15") == 1015
    assert parse_price("12") == 1200
    assert parse_price("12.1") == 1210
    assert format_price(1015) == "10.15"
    with pytest.raises(ValueError):
        parse_price("1.234")


def test_payload_packing():
    addr = (1 << 160) - 1
    assert unpack_payload(pack_payload(addr, 7)) == (addr, 7)


def test_calldata_layout():
    data = encode_call("submit_bid", 1015, 3)
    assert len(data) == 4 + 64
    assert int.from_bytes(data[4:36], "big") == 1015
    assert len(encode_call("close_market")) == 4
    with pytest.raises(ValueError):
        encode_call("submit_bid", 1)
    with pytest.raises(ValueError):
        encode_call("mint")


def test_order_validation():
    with pytest.raises(ValueError):
        Order("a", Side.BID, 0, 1)
    with pytest.raises(ValueError):
        Order("a", Side.BID, 100, 0)


def test_lifecycle_errors():
    m = CallMarket()
    m.deposit("a", Asset.ETHER, 10_000)
    with pytest.raises(MarketClosedError):
        m.submit_bid("a", 100, 1)
    m.open_market()
    assert m.phase is Phase.OPEN
    with pytest.raises(MarketOpenError):
        m.open_market()
    with pytest.raises(InsufficientBalanceError):
        m.submit_bid("a", 10_001, 1)
    m.submit_bid("a", 5_000, 2)
    # collateral is locked
    with pytest.raises(InsufficientBalanceError):
        m.withdraw("a", Asset.ETHER, 1)
    m.close_market("miner")
    assert m.phase is Phase.CLOSED
    with pytest.raises(MarketClosedError):
        m.close_market("miner")
    # unmatched bid released
    assert m.claim("a", Asset.ETHER) == 10_000
    with pytest.raises(NothingToClaimError):
        m.claim("a", Asset.ETHER)


def test_failed_call_reverts_state():
    m = CallMarket()
    m.deposit("a", Asset.ETHER, 100)
    m.open_market()
    with pytest.raises(InsufficientBalanceError):
        m.submit_bid("a", 200, 1)
    assert m.ledger.view_unavailable("a", Asset.ETHER) == 0
    assert m.arena.inspect(m.address, "seq") == 0


def test_order_cap_resets_each_market():
    m = CallMarket(order_cap=2)
    m.deposit("a", Asset.ETHER, 10_000)
    m.open_market()
    m.submit_bid("a", 100, 1)
    m.submit_bid("a", 100, 1)
    with pytest.raises(OrderCapError):
        m.submit_bid("a", 100, 1)
    m.close_market("miner")
    m.open_market()
    m.submit_bid("a", 100, 1)


def test_tx_gas_limit_applies_to_calls():
    m = CallMarket()
    m.tx_gas_limit = 25_000
    with pytest.raises(OutOfGasError):
        m.deposit("a", Asset.ETHER, 1)
    assert m.ledger.view_total("a", Asset.ETHER) == 0


@pytest.mark.parametrize("variant", VARIANTS)
def test_sample_book_matches_oracle(variant):
    orders = sample_book()
    market, fills, receipt = run_book(orders, variant)
    assert as_tuples(fills) == brute_force_match(orders)
    assert sum(f.improvement for f in fills) == 1619
    assert market.state.miner_revenue == 1619
    assert market.ledger.view_total("miner", Asset.ETHER) == 1619
    assert market.audit()


def test_sample_book_fill_sequence():
    _, fills, _ = run_book(sample_book())
    assert as_tuples(fills) == [
        ("Kritee", "Alice", 1, 1300, 1000),
        ("Kritee", "Navjot", 2, 1300, 1015),
        ("Bob", "Navjot", 1, 1215, 1015),
        ("Avni", "Navjot", 1, 1200, 1015),
        ("Avni", "Mehdi", 2, 1200, 1018),
    ]
    assert compute_clearing_price(fills) == 1109


def test_sample_book_leftover_ask_is_released():
    market, _, _ = run_book(sample_book())
    assert market.ledger.view_unavailable("Mehdi", Asset.TOKEN) == 0
    assert market.ledger.view_free("Mehdi", Asset.TOKEN) == 2
    assert market.book() == ([], [])


def test_buyer_receives_improvement_when_configured():
    orders = sample_book()
    market, fills, _ = run_book(orders, improvement_recipient=ImprovementRecipient.BUYER)
    assert market.ledger.view_total("miner", Asset.ETHER) == 0
    assert market.state.miner_revenue == 0
    kritee = market.ledger.view_total("Kritee", Asset.ETHER)
    # all 39.00 committed is spent, then the gap to the asks comes back
    assert kritee == (1300 - 1000) + 2 * (1300 - 1015)
    assert market.ledger.view_total("Kritee", Asset.TOKEN) == 3


def test_no_cross_no_fills():
    orders = [Order("b", Side.BID, 900, 5), Order("s", Side.ASK, 1000, 5)]
    market, fills, _ = run_book(orders)
    assert fills == []
    assert compute_clearing_price(fills) is None
    assert market.ledger.view_free("b", Asset.ETHER) == 4500


def test_fills_json_round_trip():
    _, fills, _ = run_book(sample_book())
    assert fills_from_json(fills_to_json(fills)) == fills
    assert fills[0].to_dict()["improvement"] == 300


def test_book_csv_round_trip(tmp_path):
    p = tmp_path / "book.csv"
    write_book_csv(sample_book(), p)
    assert load_book_csv(p) == sample_book()


def test_book_view_best_first():
    m = CallMarket()
    m.deposit("a", Asset.ETHER, 100_000)
    m.open_market()
    for price in (900, 1100, 1000):
        m.submit_bid("a", price, 1)
    bids, asks = m.book()
    assert [o.price for o in bids] == [1100, 1000, 900]
    assert asks == []


def test_worst_case_book_is_all_marketable():
    orders = worst_case_book(7)
    assert len(brute_force_match(orders)) == 7
    assert min(o.price for o in orders if o.side is Side.BID) > max(o.price for o in orders if o.side is Side.ASK)


@pytest.mark.parametrize("variant", VARIANTS)
def test_worst_case_close_is_capped_and_audited(variant):
    r = worst_case_close(variant, 20)
    assert r.hits_cap()


def test_max_trades_search_is_tight():
    count, receipt = max_worst_case_trades(Variant.LINKED_LIST_CONTRACTS)
    limit = 11_741_495
    assert receipt.gas_used_pre_refund <= limit
    assert worst_case_close(Variant.LINKED_LIST_CONTRACTS, count + 1).gas_used_pre_refund > limit


def test_static_heap_grows_for_large_benchmarks():
    assert worst_case_close(Variant.HEAP_STATIC_ARRAY, 300).gas_used_effective > 0


def test_random_book_distinct_prices():
    book = random_book(80, seed=5, distinct=True)
    for side in Side:
        prices = [o.price for o in book if o.side is side]
        assert len(prices) == len(set(prices))


def test_fill_properties():
    f = Fill("b", "s", 3, 1200, 1000)
    assert (f.buyer_pays, f.seller_receives, f.improvement) == (3600, 3000, 600)


book_strategy = st.lists(
    st.tuples(st.sampled_from(["t0", "t1", "t2", "t3"]), st.sampled_from(list(Side)), st.integers(95, 105), st.integers(1, 5)),
    max_size=16,
)


@settings(max_examples=60, deadline=None)
@given(book_strategy, st.sampled_from(VARIANTS))
def test_close_matches_oracle_and_conserves(rows, variant):
    orders = [Order(t, s, p, v) for t, s, p, v in rows]
    market, fills, _ = run_book(orders, variant)
    expected = brute_force_match(orders)
    assert as_tuples(fills) == expected
    assert holdings(market) == expected_holdings(orders, expected)
    assert market.audit()
    for name in market.accounts.names():
        for asset in Asset:
            assert market.ledger.view_unavailable(name, asset) == 0
    total_ether = sum(o.price * o.volume for o in orders if o.side is Side.BID)
    total_token = sum(o.volume for o in orders if o.side is Side.ASK)
    assert sum(v for (n, a), v in holdings(market).items() if a == "ether") == total_ether
    assert sum(v for (n, a), v in holdings(market).items() if a == "token") == total_token


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 30))
def test_permutation_invariance_on_distinct_prices(seed, n):
    orders = random_book(n, seed, distinct=True)
    shuffled = list(orders)
    random.Random(seed).shuffle(shuffled)
    m1, f1, _ = run_book(orders)
    m2, f2, _ = run_book(shuffled)
    assert sorted(as_tuples(f1)) == sorted(as_tuples(f2))
    assert m1.state.miner_revenue == m2.state.miner_revenue
    assert holdings(m1) == holdings(m2)


def test_determinism():
    book = random_book(60, seed=9)
    a = run_book(book, Variant.HEAP_KEY_VALUE)
    b = run_book(book, Variant.HEAP_KEY_VALUE)
    assert a[1] == b[1]
    assert a[2] == b[2]
