"""Five storage-backed priority queues with identical semantics.

Every backend keeps its state in slots of a :class:`StorageArena` contract and
pays for each access, so the variants can be compared by gas alone:

* ``HeapDynamicArray``  binary heap in a dynamic array; every element access
  also reads the array length (bounds check).
* ``HeapStaticArray``   binary heap in a fixed-capacity array with a size slot.
* ``HeapKeyValue``      binary heap of keys; entries live in a key/value region.
* ``LinkedListContracts`` sorted singly linked list, one node contract per entry.
* ``LinkedListKeyValue``  sorted doubly linked list kept in a key/value region
  with stored head and tail keys.

Sorting happens on enqueue. Ties on priority dequeue in sequence order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator

from .gas_meter import StorageArena

PRIORITY_BITS = 128
_SEQ_MASK = (1 << PRIORITY_BITS) - 1


class QueueError(Exception):
    pass


class EmptyQueueError(QueueError, IndexError):
    pass


class QueueFullError(QueueError):
    pass


class Variant(str, enum.Enum):
    HEAP_DYNAMIC_ARRAY = "heap_dynamic_array"
    HEAP_STATIC_ARRAY = "heap_static_array"
    HEAP_KEY_VALUE = "heap_key_value"
    LINKED_LIST_CONTRACTS = "linked_list_contracts"
    LINKED_LIST_KEY_VALUE = "linked_list_key_value"

    @property
    def label(self) -> str:
        return _LABELS[self]


_LABELS = {
    Variant.HEAP_DYNAMIC_ARRAY: "Heap with Dynamic Array",
    Variant.HEAP_STATIC_ARRAY: "Heap with Static Array",
    Variant.HEAP_KEY_VALUE: "Heap with Mapping",
    Variant.LINKED_LIST_CONTRACTS: "Linked List",
    Variant.LINKED_LIST_KEY_VALUE: "Linked List with Mapping",
}


class Direction(str, enum.Enum):
    MAX_FIRST = "max_first"  # bids
    MIN_FIRST = "min_first"  # asks


class CleanupPolicy(str, enum.Enum):
    CLEAN = "clean"
    LEAVE = "leave"


@dataclass(frozen=True, order=False)
class QueueEntry:
    priority: int
    payload: int
    sequence: int

    def __post_init__(self) -> None:
        if not 0 <= self.priority <= _SEQ_MASK:
            raise ValueError("priority must be a non-negative 128-bit integer")
        if not 0 <= self.sequence <= _SEQ_MASK:
            raise ValueError("sequence must be a non-negative 128-bit integer")

    def packed(self) -> int:
        return (self.priority << PRIORITY_BITS) | self.sequence


def unpack(word: int) -> tuple[int, int]:
    return word >> PRIORITY_BITS, word & _SEQ_MASK


def rank_key(direction: Direction, priority: int, sequence: int) -> tuple[int, int]:
    """Sort key: smaller dequeues first."""
    if direction is Direction.MAX_FIRST:
        return (-priority, sequence)
    return (priority, sequence)


def reference_order(entries: list[QueueEntry], direction: Direction) -> list[QueueEntry]:
    """Unmetered dequeue order, used as an oracle."""
    return sorted(entries, key=lambda e: rank_key(direction, e.priority, e.sequence))


class PriorityQueue:
    """Common surface of the five backends.

    A queue owns one contract in ``arena``; all metered methods must be called
    inside an open transaction on that arena.
    """

    variant: Variant

    def __init__(
        self,
        arena: StorageArena,
        direction: Direction = Direction.MAX_FIRST,
        cleanup_policy: CleanupPolicy = CleanupPolicy.CLEAN,
    ) -> None:
        self.arena = arena
        self.direction = Direction(direction)
        self.cleanup_policy = CleanupPolicy(cleanup_policy)
        self.address = arena.deploy()

    @property
    def clean(self) -> bool:
        return self.cleanup_policy is CleanupPolicy.CLEAN

    def _beats(self, a: tuple[int, int], b: tuple[int, int]) -> bool:
        """True when (priority, sequence) ``a`` dequeues before ``b``."""
        if a[0] == b[0]:
            return a[1] < b[1]
        return (a[0] > b[0]) if self.direction is Direction.MAX_FIRST else (a[0] < b[0])

    # metered interface; implemented per backend
    def enqueue(self, entry: QueueEntry) -> None:
        raise NotImplementedError

    def dequeue(self) -> QueueEntry:
        raise NotImplementedError

    def peek(self) -> QueueEntry | None:
        raise NotImplementedError

    def replace_top_payload(self, payload: int) -> None:
        raise NotImplementedError

    def is_empty(self) -> bool:
        raise NotImplementedError

    def discard_all(self) -> list[QueueEntry]:
        """Remove every entry, honouring the cleanup policy, and return them."""
        if self.clean:
            out = []
            while not self.is_empty():
                out.append(self.dequeue())
            return out
        return self._abandon()

    def _abandon(self) -> list[QueueEntry]:
        raise NotImplementedError

    # unmetered audit hooks
    def snapshot(self) -> list[QueueEntry]:
        """Entries in storage order, read without charging gas."""
        raise NotImplementedError

    def structure_ok(self) -> bool:
        raise NotImplementedError

    def __len__(self) -> int:
        return len(self.snapshot())


# --------------------------------------------------------------------------- heaps


class _ArrayHeap(PriorityQueue):
    """Heap whose array stores whole entries (packed word + payload word)."""

    bounds_checked = False
    _SIZE = "len"

    def _size(self) -> int:
        return self.arena.sload(self.address, self._SIZE)

    def _access(self) -> None:
        if self.bounds_checked:
            self.arena.sload(self.address, self._SIZE)

    def _read_packed(self, i: int) -> tuple[int, int]:
        self._access()
        return unpack(self.arena.sload(self.address, ("a", i, 0)))

    def _read_payload(self, i: int) -> int:
        self._access()
        return self.arena.sload(self.address, ("a", i, 1))

    def _write(self, i: int, packed: int, payload: int) -> None:
        self._access()
        self.arena.sstore(self.address, ("a", i, 0), packed)
        self.arena.sstore(self.address, ("a", i, 1), payload)

    def _clear(self, i: int) -> None:
        self._write(i, 0, 0)

    def _check_capacity(self, size: int) -> None:
        pass

    def enqueue(self, entry: QueueEntry) -> None:
        size = self._size()
        self._check_capacity(size)
        self.arena.sstore(self.address, self._SIZE, size + 1)
        key = (entry.priority, entry.sequence)
        hole = size
        while hole > 0:
            parent = (hole - 1) // 2
            parent_key = self._read_packed(parent)
            if not self._beats(key, parent_key):
                break
            self._write(hole, (parent_key[0] << PRIORITY_BITS) | parent_key[1], self._read_payload(parent))
            hole = parent
        self._write(hole, entry.packed(), entry.payload)

    def dequeue(self) -> QueueEntry:
        size = self._size()
        if size == 0:
            raise EmptyQueueError("dequeue from an empty queue")
        top_p, top_s = self._read_packed(0)
        top = QueueEntry(top_p, self._read_payload(0), top_s)
        last = size - 1
        carried = self._read_packed(last)
        carried_payload = self._read_payload(last)
        if self.clean:
            self._clear(last)
        self.arena.sstore(self.address, self._SIZE, last)
        if last > 0:
            self._sift_down(carried, carried_payload, last)
        return top

    def _sift_down(self, carried: tuple[int, int], carried_payload: int, size: int) -> None:
        hole = 0
        while True:
            child = 2 * hole + 1
            if child >= size:
                break
            best = child
            best_key = self._read_packed(child)
            if child + 1 < size:
                right_key = self._read_packed(child + 1)
                if self._beats(right_key, best_key):
                    best, best_key = child + 1, right_key
            if not self._beats(best_key, carried):
                break
            self._write(hole, (best_key[0] << PRIORITY_BITS) | best_key[1], self._read_payload(best))
            hole = best
        self._write(hole, (carried[0] << PRIORITY_BITS) | carried[1], carried_payload)

    def peek(self) -> QueueEntry | None:
        if self._size() == 0:
            return None
        p, s = self._read_packed(0)
        return QueueEntry(p, self._read_payload(0), s)

    def replace_top_payload(self, payload: int) -> None:
        self._access()
        self.arena.sstore(self.address, ("a", 0, 1), payload)

    def is_empty(self) -> bool:
        return self._size() == 0

    def _abandon(self) -> list[QueueEntry]:
        size = self._size()
        out = []
        for i in range(size):
            p, s = self._read_packed(i)
            out.append(QueueEntry(p, self._read_payload(i), s))
        if size:
            self.arena.sstore(self.address, self._SIZE, 0)
        return out

    def snapshot(self) -> list[QueueEntry]:
        peek = self.arena.inspect
        size = peek(self.address, self._SIZE)
        out = []
        for i in range(size):
            p, s = unpack(peek(self.address, ("a", i, 0)))
            out.append(QueueEntry(p, peek(self.address, ("a", i, 1)), s))
        return out

    def structure_ok(self) -> bool:
        return _heap_ordered([(e.priority, e.sequence) for e in self.snapshot()], self._beats)


class HeapDynamicArray(_ArrayHeap):
    variant = Variant.HEAP_DYNAMIC_ARRAY
    bounds_checked = True


class HeapStaticArray(_ArrayHeap):
    variant = Variant.HEAP_STATIC_ARRAY
    _SIZE = "size"

    def __init__(self, arena, direction=Direction.MAX_FIRST, cleanup_policy=CleanupPolicy.CLEAN, capacity: int = 256):
        super().__init__(arena, direction, cleanup_policy)
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity

    def _check_capacity(self, size: int) -> None:
        if size >= self.capacity:
            raise QueueFullError(f"static heap is full ({self.capacity} entries)")


class HeapKeyValue(PriorityQueue):
    """Heap of keys in a dynamic array; the entries sit in a key/value region.

    The key of an entry is its sequence number plus one, so key 0 never occurs.
    """

    variant = Variant.HEAP_KEY_VALUE

    def _size(self) -> int:
        return self.arena.sload(self.address, "len")

    def _key_at(self, i: int) -> int:
        self.arena.sload(self.address, "len")
        return self.arena.sload(self.address, ("k", i))

    def _set_key(self, i: int, key: int) -> None:
        self.arena.sload(self.address, "len")
        self.arena.sstore(self.address, ("k", i), key)

    def _rank_of(self, key: int) -> tuple[int, int]:
        return unpack(self.arena.sload(self.address, ("e", key, 0)))

    def enqueue(self, entry: QueueEntry) -> None:
        key = entry.sequence + 1
        self.arena.sstore(self.address, ("e", key, 0), entry.packed())
        self.arena.sstore(self.address, ("e", key, 1), entry.payload)
        size = self._size()
        self.arena.sstore(self.address, "len", size + 1)
        rank = (entry.priority, entry.sequence)
        hole = size
        while hole > 0:
            parent = (hole - 1) // 2
            parent_key = self._key_at(parent)
            if not self._beats(rank, self._rank_of(parent_key)):
                break
            self._set_key(hole, parent_key)
            hole = parent
        self._set_key(hole, key)

    def dequeue(self) -> QueueEntry:
        size = self._size()
        if size == 0:
            raise EmptyQueueError("dequeue from an empty queue")
        top_key = self._key_at(0)
        p, s = self._rank_of(top_key)
        top = QueueEntry(p, self.arena.sload(self.address, ("e", top_key, 1)), s)
        last = size - 1
        carried_key = self._key_at(last)
        carried = self._rank_of(carried_key)
        if self.clean:
            self.arena.sstore(self.address, ("e", top_key, 0), 0)
            self.arena.sstore(self.address, ("e", top_key, 1), 0)
            self._set_key(last, 0)
        self.arena.sstore(self.address, "len", last)
        if last > 0:
            hole = 0
            while True:
                child = 2 * hole + 1
                if child >= last:
                    break
                best_key = self._key_at(child)
                best_rank = self._rank_of(best_key)
                best = child
                if child + 1 < last:
                    right_key = self._key_at(child + 1)
                    right_rank = self._rank_of(right_key)
                    if self._beats(right_rank, best_rank):
                        best, best_key, best_rank = child + 1, right_key, right_rank
                if not self._beats(best_rank, carried):
                    break
                self._set_key(hole, best_key)
                hole = best
            self._set_key(hole, carried_key)
        return top

    def peek(self) -> QueueEntry | None:
        if self._size() == 0:
            return None
        key = self._key_at(0)
        p, s = self._rank_of(key)
        return QueueEntry(p, self.arena.sload(self.address, ("e", key, 1)), s)

    def replace_top_payload(self, payload: int) -> None:
        key = self._key_at(0)
        self.arena.sstore(self.address, ("e", key, 1), payload)

    def is_empty(self) -> bool:
        return self._size() == 0

    def _abandon(self) -> list[QueueEntry]:
        size = self._size()
        out = []
        for i in range(size):
            key = self._key_at(i)
            p, s = self._rank_of(key)
            out.append(QueueEntry(p, self.arena.sload(self.address, ("e", key, 1)), s))
        if size:
            self.arena.sstore(self.address, "len", 0)
        return out

    def snapshot(self) -> list[QueueEntry]:
        peek = self.arena.inspect
        out = []
        for i in range(peek(self.address, "len")):
            key = peek(self.address, ("k", i))
            p, s = unpack(peek(self.address, ("e", key, 0)))
            out.append(QueueEntry(p, peek(self.address, ("e", key, 1)), s))
        return out

    def structure_ok(self) -> bool:
        return _heap_ordered([(e.priority, e.sequence) for e in self.snapshot()], self._beats)


def _heap_ordered(keys: list[tuple[int, int]], beats) -> bool:
    return all(not beats(keys[i], keys[(i - 1) // 2]) for i in range(1, len(keys)))


# ---------------------------------------------------------------------- linked lists


class LinkedListContracts(PriorityQueue):
    """Sorted singly linked list; each node is its own three-slot contract.

    Node slots: 0 = packed priority/sequence, 1 = payload, 2 = next node address.
    """

    variant = Variant.LINKED_LIST_CONTRACTS

    def __init__(self, arena, direction=Direction.MAX_FIRST, cleanup_policy=CleanupPolicy.CLEAN, node_code_size: int = 100):
        super().__init__(arena, direction, cleanup_policy)
        self.node_code_size = node_code_size

    def enqueue(self, entry: QueueEntry) -> None:
        arena = self.arena
        rank = (entry.priority, entry.sequence)
        prev = 0
        cur = arena.sload(self.address, "head")
        while cur:
            if self._beats(rank, unpack(arena.sload(cur, 0))):
                break
            prev, cur = cur, arena.sload(cur, 2)
        node = arena.create_contract(self.node_code_size)
        arena.sstore(node, 0, entry.packed())
        arena.sstore(node, 1, entry.payload)
        arena.sstore(node, 2, cur)
        if prev:
            arena.sstore(prev, 2, node)
        else:
            arena.sstore(self.address, "head", node)

    def dequeue(self) -> QueueEntry:
        arena = self.arena
        head = arena.sload(self.address, "head")
        if not head:
            raise EmptyQueueError("dequeue from an empty queue")
        p, s = unpack(arena.sload(head, 0))
        entry = QueueEntry(p, arena.sload(head, 1), s)
        arena.sstore(self.address, "head", arena.sload(head, 2))
        if self.clean:
            arena.self_destruct(head)
        return entry

    def peek(self) -> QueueEntry | None:
        head = self.arena.sload(self.address, "head")
        if not head:
            return None
        p, s = unpack(self.arena.sload(head, 0))
        return QueueEntry(p, self.arena.sload(head, 1), s)

    def replace_top_payload(self, payload: int) -> None:
        head = self.arena.sload(self.address, "head")
        self.arena.sstore(head, 1, payload)

    def is_empty(self) -> bool:
        return self.arena.sload(self.address, "head") == 0

    def _abandon(self) -> list[QueueEntry]:
        arena = self.arena
        out = []
        cur = arena.sload(self.address, "head")
        first = cur
        while cur:
            p, s = unpack(arena.sload(cur, 0))
            out.append(QueueEntry(p, arena.sload(cur, 1), s))
            cur = arena.sload(cur, 2)
        if first:
            arena.sstore(self.address, "head", 0)
        return out

    def _nodes(self) -> Iterator[int]:
        cur = self.arena.inspect(self.address, "head")
        while cur:
            yield cur
            cur = self.arena.inspect(cur, 2)

    def snapshot(self) -> list[QueueEntry]:
        out = []
        for node in self._nodes():
            p, s = unpack(self.arena.inspect(node, 0))
            out.append(QueueEntry(p, self.arena.inspect(node, 1), s))
        return out

    def structure_ok(self) -> bool:
        keys = [(e.priority, e.sequence) for e in self.snapshot()]
        return all(not self._beats(b, a) for a, b in zip(keys, keys[1:]))


class LinkedListKeyValue(PriorityQueue):
    """Sorted doubly linked list in a key/value region with head and tail keys.

    Record fields per key: ``p`` packed priority/sequence, ``v`` payload,
    ``n`` next key, ``b`` previous key. Keys are sequence + 1.
    """

    variant = Variant.LINKED_LIST_KEY_VALUE

    def _field(self, key: int, name: str) -> int:
        return self.arena.sload(self.address, (key, name))

    def _set(self, key: int, name: str, value: int) -> None:
        self.arena.sstore(self.address, (key, name), value)

    def enqueue(self, entry: QueueEntry) -> None:
        key = entry.sequence + 1
        rank = (entry.priority, entry.sequence)
        prev = 0
        cur = self.arena.sload(self.address, "head")
        while cur:
            if self._beats(rank, unpack(self._field(cur, "p"))):
                break
            prev, cur = cur, self._field(cur, "n")
        self._set(key, "p", entry.packed())
        self._set(key, "v", entry.payload)
        self._set(key, "n", cur)
        self._set(key, "b", prev)
        if prev:
            self._set(prev, "n", key)
        else:
            self.arena.sstore(self.address, "head", key)
        if cur:
            self._set(cur, "b", key)
        else:
            self.arena.sstore(self.address, "tail", key)

    def dequeue(self) -> QueueEntry:
        head = self.arena.sload(self.address, "head")
        if not head:
            raise EmptyQueueError("dequeue from an empty queue")
        p, s = unpack(self._field(head, "p"))
        entry = QueueEntry(p, self._field(head, "v"), s)
        nxt = self._field(head, "n")
        self.arena.sstore(self.address, "head", nxt)
        if nxt:
            self._set(nxt, "b", 0)
        else:
            self.arena.sstore(self.address, "tail", 0)
        if self.clean:
            for name in ("p", "v", "n", "b"):
                self._set(head, name, 0)
        return entry

    def peek(self) -> QueueEntry | None:
        head = self.arena.sload(self.address, "head")
        if not head:
            return None
        p, s = unpack(self._field(head, "p"))
        return QueueEntry(p, self._field(head, "v"), s)

    def replace_top_payload(self, payload: int) -> None:
        head = self.arena.sload(self.address, "head")
        self._set(head, "v", payload)

    def is_empty(self) -> bool:
        return self.arena.sload(self.address, "head") == 0

    def _abandon(self) -> list[QueueEntry]:
        out = []
        cur = self.arena.sload(self.address, "head")
        first = cur
        while cur:
            p, s = unpack(self._field(cur, "p"))
            out.append(QueueEntry(p, self._field(cur, "v"), s))
            cur = self._field(cur, "n")
        if first:
            self.arena.sstore(self.address, "head", 0)
            self.arena.sstore(self.address, "tail", 0)
        return out

    def snapshot(self) -> list[QueueEntry]:
        peek = self.arena.inspect
        out = []
        cur = peek(self.address, "head")
        while cur:
            p, s = unpack(peek(self.address, (cur, "p")))
            out.append(QueueEntry(p, peek(self.address, (cur, "v")), s))
            cur = peek(self.address, (cur, "n"))
        return out

    def structure_ok(self) -> bool:
        peek = self.arena.inspect
        keys = [(e.priority, e.sequence) for e in self.snapshot()]
        if any(self._beats(b, a) for a, b in zip(keys, keys[1:])):
            return False
        # back links mirror forward links
        prev = 0
        cur = peek(self.address, "head")
        while cur:
            if peek(self.address, (cur, "b")) != prev:
                return False
            prev, cur = cur, peek(self.address, (cur, "n"))
        return peek(self.address, "tail") == prev


BACKENDS: dict[Variant, type[PriorityQueue]] = {
    Variant.HEAP_DYNAMIC_ARRAY: HeapDynamicArray,
    Variant.HEAP_STATIC_ARRAY: HeapStaticArray,
    Variant.HEAP_KEY_VALUE: HeapKeyValue,
    Variant.LINKED_LIST_CONTRACTS: LinkedListContracts,
    Variant.LINKED_LIST_KEY_VALUE: LinkedListKeyValue,
}


@dataclass(frozen=True)
class QueueConfig:
    static_capacity: int = 256
    node_code_size: int = 100


def make_queue(
    variant: Variant | str,
    arena: StorageArena,
    direction: Direction | str = Direction.MAX_FIRST,
    cleanup_policy: CleanupPolicy | str = CleanupPolicy.CLEAN,
    config: QueueConfig = QueueConfig(),
) -> PriorityQueue:
    variant = Variant(variant)
    cls = BACKENDS[variant]
    if cls is HeapStaticArray:
        return cls(arena, Direction(direction), CleanupPolicy(cleanup_policy), capacity=config.static_capacity)
    if cls is LinkedListContracts:
        return cls(arena, Direction(direction), CleanupPolicy(cleanup_policy), node_code_size=config.node_code_size)
    return cls(arena, Direction(direction), CleanupPolicy(cleanup_policy))


# ------------------------------------------------------------------- benchmarks

BENCH_PRIORITY_LIMIT = 2**32
CSV_HEADER = ("variant", "policy", "n", "gas_used_pre_refund", "refund_earned", "refund_applied", "effective")


def random_entries(n: int, seed: int = 0, payload: int = 0) -> list[QueueEntry]:
    """``n`` random integer priorities with a constant payload (zero by default)."""
    import random

    rng = random.Random(seed)
    return [QueueEntry(rng.randrange(1, BENCH_PRIORITY_LIMIT), payload, i) for i in range(n)]


@dataclass(frozen=True)
class BenchResult:
    variant: Variant
    policy: CleanupPolicy
    n: int
    insert_receipts: tuple  # one GasReceipt per enqueue transaction
    drain_receipt: object  # GasReceipt of the single drain transaction
    drained: tuple  # entries in dequeue order

    def csv_row(self) -> tuple:
        r = self.drain_receipt
        return (
            self.variant.value,
            self.policy.value,
            self.n,
            r.gas_used_pre_refund,
            r.refund_earned,
            r.refund_applied,
            r.gas_used_effective,
        )


def run_benchmark(
    variant: Variant | str,
    cleanup_policy: CleanupPolicy | str = CleanupPolicy.CLEAN,
    n: int = 50,
    seed: int = 0,
    schedule=None,
    direction: Direction | str = Direction.MAX_FIRST,
    config: QueueConfig = QueueConfig(),
    entries: list[QueueEntry] | None = None,
) -> BenchResult:
    """Fresh arena; enqueue each entry in its own transaction, then drain in one."""
    arena = StorageArena() if schedule is None else StorageArena(schedule)
    queue = make_queue(variant, arena, direction, cleanup_policy, config)
    if entries is None:
        entries = random_entries(n, seed)
    inserts = []
    for entry in entries:
        with arena.transaction() as tx:
            queue.enqueue(entry)
        inserts.append(tx.receipt)
    with arena.transaction() as tx:
        out = []
        while not queue.is_empty():
            out.append(queue.dequeue())
    return BenchResult(queue.variant, queue.cleanup_policy, len(entries), tuple(inserts), tx.receipt, tuple(out))


def drain_cost_report(
    variant: Variant | str,
    cleanup_policy: CleanupPolicy | str = CleanupPolicy.CLEAN,
    n: int = 50,
    seed: int = 0,
    schedule=None,
    config: QueueConfig = QueueConfig(),
):
    """Receipt of draining ``n`` random entries in one transaction."""
    return run_benchmark(variant, cleanup_policy, n, seed, schedule, config=config).drain_receipt
