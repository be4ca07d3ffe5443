from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from callmarket.gas_meter import (
    DEFAULT_SCHEDULE,
    ContractStateError,
    GasReceipt,
    GasSchedule,
    OutOfGasError,
    StorageArena,
    TransactionStateError,
    admit_to_block,
)


@pytest.fixture
def arena():
    return StorageArena()


def test_default_constants():
    s = DEFAULT_SCHEDULE
    assert s.sstore_clear_refund == 15_000
    assert s.selfdestruct_refund == 24_000
    assert s.refund_cap_fraction == Fraction(1, 2)
    assert s.block_gas_limit == 11_741_495
    assert s.gas_price == 56


def test_begin_tx_charges_base(arena):
    arena.begin_tx()
    assert arena.gas_used == 21_000
    assert arena.refund_counter == 0


def test_nested_begin_is_an_error(arena):
    arena.begin_tx()
    with pytest.raises(TransactionStateError):
        arena.begin_tx()


def test_empty_tx_costs_base(arena):
    arena.begin_tx()
    r = arena.end_tx()
    assert r.gas_used_effective == 21_000
    assert r.refund_applied == 0


def test_calldata_is_priced_per_byte(arena):
    arena.begin_tx(b"\x00\x01\x02\x00")
    assert arena.gas_used == 21_000 + 2 * 4 + 2 * 16


def test_sstore_transitions(arena):
    addr = arena.deploy()
    arena.begin_tx()
    g0 = arena.gas_used
    arena.sstore(addr, 0, 7)
    assert arena.gas_used - g0 == 20_000
    assert arena.refund_counter == 0
    arena.sstore(addr, 0, 9)
    assert arena.gas_used - g0 == 25_000
    assert arena.refund_counter == 0
    arena.sstore(addr, 0, 0)
    assert arena.gas_used - g0 == 30_000
    assert arena.refund_counter == 15_000


def test_sload_defaults_and_additivity(arena):
    addr = arena.deploy()
    arena.begin_tx()
    assert arena.sload(addr, "fresh") == 0
    arena.sstore(addr, "x", 7)
    before = arena.gas_used
    assert arena.sload(addr, "x") == 7
    assert arena.sload(addr, "x") == 7
    assert arena.gas_used - before == 2 * 800


def test_create_contract_charges(arena):
    arena.begin_tx()
    g = arena.gas_used
    a = arena.create_contract(0)
    assert arena.gas_used - g == 32_000
    g = arena.gas_used
    b = arena.create_contract(100)
    assert arena.gas_used - g == 52_000
    assert a != b


def test_selfdestruct_refund_is_flat(arena):
    arena.begin_tx()
    small = arena.create_contract(10)
    big = arena.create_contract(10)
    for i in range(100):
        arena.sstore(big, i, i + 1)
    r0 = arena.refund_counter
    arena.self_destruct(small)
    assert arena.refund_counter - r0 == 24_000
    arena.self_destruct(big)
    assert arena.refund_counter - r0 == 48_000
    with pytest.raises(ContractStateError):
        arena.self_destruct(big)
    arena.end_tx()
    assert not arena.is_alive(big)
    arena.begin_tx()
    with pytest.raises(ContractStateError):
        arena.sload(big, 0)
    with pytest.raises(ContractStateError):
        arena.sstore(big, 0, 1)


@pytest.mark.parametrize(
    "used, refund, effective",
    [(100_000, 80_000, 50_000), (100_000, 30_000, 70_000), (11_000_000, 11_000_000, 5_500_000)],
)
def test_receipt_cap_arithmetic(used, refund, effective):
    r = GasReceipt.settle(used, refund, DEFAULT_SCHEDULE)
    assert r.gas_used_effective == effective
    assert r.fee == effective * 56


def test_admission_uses_pre_refund():
    limit = DEFAULT_SCHEDULE.block_gas_limit
    assert admit_to_block(GasReceipt.settle(limit, 0, DEFAULT_SCHEDULE), limit)
    assert not admit_to_block(GasReceipt.settle(limit + 1, 0, DEFAULT_SCHEDULE), limit)
    heavy = GasReceipt.settle(11_000_000, 11_000_000, DEFAULT_SCHEDULE)
    assert heavy.gas_used_effective == 5_500_000
    assert not admit_to_block(heavy, 10_000_000)


def test_revert_restores_slots_and_contracts(arena):
    addr = arena.deploy()
    with arena.transaction():
        arena.sstore(addr, 1, 5)
    arena.begin_tx()
    arena.sstore(addr, 1, 6)
    arena.sstore(addr, 2, 3)
    node = arena.create_contract(100)
    arena.revert_tx()
    assert arena.inspect(addr, 1) == 5
    assert arena.inspect(addr, 2) == 0
    assert node not in arena.contracts


def test_context_manager_reverts_on_error(arena):
    addr = arena.deploy()
    with pytest.raises(RuntimeError):
        with arena.transaction():
            arena.sstore(addr, 0, 1)
            raise RuntimeError("boom")
    assert arena.inspect(addr, 0) == 0
    assert not arena.in_transaction


def test_gas_limit_aborts(arena):
    addr = arena.deploy()
    with pytest.raises(OutOfGasError):
        with arena.transaction(gas_limit=30_000):
            arena.sstore(addr, 0, 1)
    assert arena.inspect(addr, 0) == 0


def test_value_range_checked(arena):
    addr = arena.deploy()
    arena.begin_tx()
    with pytest.raises(ValueError):
        arena.sstore(addr, 0, 2**256)
    with pytest.raises(ValueError):
        arena.sstore(addr, 0, -1)


def test_receipt_json_round_trip():
    r = GasReceipt.settle(123_456, 50_000, DEFAULT_SCHEDULE)
    assert GasReceipt.from_json(r.to_json()) == r
    assert set(r.to_dict()) == {"gas_used_pre_refund", "refund_earned", "refund_applied", "gas_used_effective", "fee"}


def test_schedule_from_file(tmp_path):
    p = tmp_path / "sched.cfg"
    p.write_text("# cheaper reads\nsload = 200\nrefund_cap_fraction = 1/5\nblock_gas_limit = 15_000_000\n")
    s = GasSchedule.from_file(p)
    assert s.sload == 200
    assert s.refund_cap_fraction == Fraction(1, 5)
    assert s.block_gas_limit == 15_000_000
    assert s.sstore_set == 20_000
    p.write_text("bogus = 1\n")
    with pytest.raises(KeyError):
        GasSchedule.from_file(p)


def test_scaled_schedule_without_refunds():
    l2 = DEFAULT_SCHEDULE.scaled(Fraction(1, 100), refunds=False)
    assert l2.sstore_set == 200
    assert l2.sload == 8
    assert l2.refund_cap_fraction == 0
    assert l2.tx_base == DEFAULT_SCHEDULE.tx_base
    r = GasReceipt.settle(1000, 500, l2)
    assert r.refund_applied == 0


def test_schedule_validation():
    with pytest.raises(ValueError):
        GasSchedule(sload=-1)
    with pytest.raises(ValueError):
        GasSchedule(refund_cap_fraction=Fraction(3, 2))


# random operation sequences

ops = st.lists(
    st.tuples(st.sampled_from(["load", "store", "create", "destroy"]), st.integers(0, 5), st.integers(0, 3)),
    max_size=40,
)


@settings(max_examples=200, deadline=None)
@given(ops)
def test_meter_additivity_and_cap(seq):
    arena = StorageArena()
    addr = arena.deploy()
    arena.begin_tx()
    expected = 21_000
    refund = 0
    shadow: dict[int, int] = {}
    created: list[int] = []
    destroyed: set[int] = set()
    s = arena.schedule
    for op, slot, value in seq:
        if op == "load":
            assert arena.sload(addr, slot) == shadow.get(slot, 0)
            expected += s.sload
        elif op == "store":
            cur = shadow.get(slot, 0)
            before_refund = arena.refund_counter
            arena.sstore(addr, slot, value)
            if cur == 0 and value != 0:
                expected += s.sstore_set
            elif cur != 0 and value == 0:
                expected += s.sstore_clear_cost
                refund += s.sstore_clear_refund
            else:
                expected += s.sstore_update
            assert arena.refund_counter >= before_refund
            shadow[slot] = value
        elif op == "create":
            created.append(arena.create_contract(slot))
            expected += s.contract_create_base + slot * s.contract_code_deposit_per_byte
        elif op == "destroy":
            live = [c for c in created if c not in destroyed]
            if live:
                arena.self_destruct(live[0])
                destroyed.add(live[0])
                expected += s.selfdestruct_cost
                refund += s.selfdestruct_refund
        assert arena.gas_used == expected
        assert arena.refund_counter == refund
    r = arena.end_tx()
    assert r.gas_used_pre_refund == expected
    assert r.gas_used_effective == expected - min(refund, expected // 2)
    for slot, value in shadow.items():
        assert arena.inspect(addr, slot) == value
