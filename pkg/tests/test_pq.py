from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from callmarket.gas_meter import StorageArena
from callmarket.pq import (
    CSV_HEADER,
    CleanupPolicy,
    Direction,
    EmptyQueueError,
    QueueConfig,
    QueueEntry,
    QueueFullError,
    Variant,
    drain_cost_report,
    make_queue,
    random_entries,
    reference_order,
    run_benchmark,
)

VARIANTS = list(Variant)
HEAPS = [Variant.HEAP_DYNAMIC_ARRAY, Variant.HEAP_STATIC_ARRAY, Variant.HEAP_KEY_VALUE]
LISTS = [Variant.LINKED_LIST_CONTRACTS, Variant.LINKED_LIST_KEY_VALUE]


def fill(variant, priorities, direction=Direction.MAX_FIRST, policy=CleanupPolicy.CLEAN):
    arena = StorageArena()
    q = make_queue(variant, arena, direction, policy)
    receipts = []
    for i, p in enumerate(priorities):
        with arena.transaction() as tx:
            q.enqueue(QueueEntry(p, 1000 + i, i))
        receipts.append(tx.receipt)
    return arena, q, receipts


def drain(arena, q):
    out = []
    with arena.transaction() as tx:
        while not q.is_empty():
            out.append(q.dequeue())
    return out, tx.receipt


@pytest.mark.parametrize("variant", VARIANTS)
def test_max_first_order(variant):
    arena, q, _ = fill(variant, [5, 1, 9])
    out, _ = drain(arena, q)
    assert [e.priority for e in out] == [9, 5, 1]
    assert [e.payload for e in out] == [1002, 1000, 1001]


@pytest.mark.parametrize("variant", VARIANTS)
def test_min_first_and_ties(variant):
    arena, q, _ = fill(variant, [3, 1, 3, 1, 2], Direction.MIN_FIRST)
    out, _ = drain(arena, q)
    assert [(e.priority, e.sequence) for e in out] == [(1, 1), (1, 3), (2, 4), (3, 0), (3, 2)]


@pytest.mark.parametrize("variant", VARIANTS)
def test_empty_dequeue_raises(variant):
    arena = StorageArena()
    q = make_queue(variant, arena)
    with pytest.raises(EmptyQueueError):
        with arena.transaction():
            q.dequeue()
    with arena.transaction():
        assert q.peek() is None


@pytest.mark.parametrize("variant", VARIANTS)
def test_peek_and_replace_top(variant):
    arena, q, _ = fill(variant, [4, 8, 6])
    with arena.transaction():
        top = q.peek()
        assert top.priority == 8
        q.replace_top_payload(77)
        assert q.dequeue() == QueueEntry(8, 77, 1)
        assert q.peek().priority == 6


def test_static_capacity_is_enforced():
    arena = StorageArena()
    q = make_queue(Variant.HEAP_STATIC_ARRAY, arena, config=QueueConfig(static_capacity=3))
    with arena.transaction():
        for i in range(3):
            q.enqueue(QueueEntry(i, 0, i))
    with pytest.raises(QueueFullError):
        with arena.transaction():
            q.enqueue(QueueEntry(9, 0, 9))
    assert len(q) == 3


def test_entry_validation():
    with pytest.raises(ValueError):
        QueueEntry(-1, 0, 0)


@pytest.mark.parametrize("variant", VARIANTS)
def test_first_insert_is_cheapest_shape(variant):
    _, _, receipts = fill(variant, [10])
    assert receipts[0].gas_used_effective < 150_000


def test_node_contract_insert_dominates_key_value_list():
    entries = random_entries(50, seed=0)
    llc = run_benchmark(Variant.LINKED_LIST_CONTRACTS, entries=entries)
    llkv = run_benchmark(Variant.LINKED_LIST_KEY_VALUE, entries=entries)
    for a, b in zip(llc.insert_receipts, llkv.insert_receipts):
        assert a.gas_used_effective > b.gas_used_effective


@pytest.mark.parametrize("variant", LISTS)
def test_list_insert_cost_grows_with_traversal(variant):
    # head-first traversal: each new lowest bid walks the whole list
    _, _, descending = fill(variant, list(range(40, 0, -1)))
    costs = [r.gas_used_effective for r in descending]
    assert all(b > a for a, b in zip(costs[1:], costs[2:]))
    # new best bids land at the head for a flat cost
    _, _, ascending = fill(variant, list(range(1, 41)))
    flat = [r.gas_used_effective for r in ascending[1:]]
    assert max(flat) - min(flat) <= 800 * 2


@pytest.mark.parametrize("variant", LISTS)
def test_list_drain_hits_refund_cap(variant):
    r = drain_cost_report(variant, CleanupPolicy.CLEAN, 50, seed=0)
    assert r.hits_cap()
    assert r.refund_applied == r.gas_used_pre_refund // 2


@pytest.mark.parametrize("variant", HEAPS)
def test_heap_drain_refunds_one_slot_per_entry(variant):
    r = drain_cost_report(variant, CleanupPolicy.CLEAN, 50, seed=0)
    per_entry = 2 if variant is Variant.HEAP_KEY_VALUE else 1
    # plus the size slot returning to zero
    assert r.refund_earned == (50 * per_entry + 1) * 15_000


def test_drain_ranking_lists_before_heaps():
    effective = {v: drain_cost_report(v, n=50, seed=0).gas_used_effective for v in VARIANTS}
    assert effective[Variant.LINKED_LIST_CONTRACTS] < effective[Variant.LINKED_LIST_KEY_VALUE]
    assert max(effective[v] for v in LISTS) < min(effective[v] for v in HEAPS)
    assert effective[Variant.HEAP_STATIC_ARRAY] < effective[Variant.HEAP_DYNAMIC_ARRAY]


def test_cleanup_directions():
    llc_clean = drain_cost_report(Variant.LINKED_LIST_CONTRACTS, CleanupPolicy.CLEAN)
    llc_leave = drain_cost_report(Variant.LINKED_LIST_CONTRACTS, CleanupPolicy.LEAVE)
    kv_clean = drain_cost_report(Variant.LINKED_LIST_KEY_VALUE, CleanupPolicy.CLEAN)
    kv_leave = drain_cost_report(Variant.LINKED_LIST_KEY_VALUE, CleanupPolicy.LEAVE)
    assert llc_clean.gas_used_effective < llc_leave.gas_used_effective
    assert kv_leave.gas_used_effective < kv_clean.gas_used_effective


@pytest.mark.parametrize("variant", VARIANTS)
def test_zero_drain_costs_base_plus_one_read(variant):
    assert drain_cost_report(variant, n=0).gas_used_effective == 21_000 + 800


@pytest.mark.parametrize("variant", VARIANTS)
def test_leave_policy_keeps_order(variant):
    clean = run_benchmark(variant, CleanupPolicy.CLEAN, 30, seed=3)
    leave = run_benchmark(variant, CleanupPolicy.LEAVE, 30, seed=3)
    assert clean.drained == leave.drained


def test_fill_heavier_drain_lighter_for_lists():
    entries = random_entries(30, seed=1)
    runs = {v: run_benchmark(v, entries=entries) for v in VARIANTS}
    fill_cost = {v: sum(r.gas_used_effective for r in runs[v].insert_receipts) for v in VARIANTS}
    drain_cost = {v: runs[v].drain_receipt.gas_used_effective for v in VARIANTS}
    for lst in LISTS:
        for heap in HEAPS:
            assert fill_cost[lst] > fill_cost[heap]
            assert drain_cost[lst] < drain_cost[heap]


def test_csv_row_shape():
    res = run_benchmark(Variant.HEAP_DYNAMIC_ARRAY, n=5)
    row = res.csv_row()
    assert len(row) == len(CSV_HEADER)
    assert row[:3] == ("heap_dynamic_array", "clean", 5)


@pytest.mark.parametrize("variant", [Variant.LINKED_LIST_CONTRACTS])
def test_node_contracts_die_on_clean(variant):
    arena, q, _ = fill(variant, [3, 2, 1])
    nodes = list(q._nodes())
    drain(arena, q)
    assert not any(arena.is_alive(n) for n in nodes)


def test_leave_policy_leaves_data():
    arena, q, _ = fill(Variant.LINKED_LIST_KEY_VALUE, [3, 2, 1], policy=CleanupPolicy.LEAVE)
    drain(arena, q)
    # priority and payload words stay behind; only links and head/tail move
    for key in (1, 2, 3):
        assert arena.inspect(q.address, (key, "p")) != 0
        assert arena.inspect(q.address, (key, "v")) != 0


ops = st.lists(st.one_of(st.integers(0, 20), st.none()), max_size=60)


@settings(max_examples=60, deadline=None)
@given(ops, st.sampled_from(list(Direction)), st.sampled_from(list(CleanupPolicy)))
def test_all_variants_agree_with_reference(seq, direction, policy):
    arena = StorageArena()
    queues = [make_queue(v, arena, direction, policy) for v in VARIANTS]
    model: list[QueueEntry] = []
    for i, op in enumerate(seq):
        with arena.transaction():
            if op is None:
                if not model:
                    continue
                want = reference_order(model, direction)[0]
                model.remove(want)
                for q in queues:
                    assert q.dequeue() == want
            else:
                e = QueueEntry(op, i, i)
                model.append(e)
                for q in queues:
                    q.enqueue(e)
        for q in queues:
            assert q.structure_ok()
            assert sorted(q.snapshot(), key=lambda e: e.sequence) == sorted(model, key=lambda e: e.sequence)
