"""On-chain call market: ledger, order submission and batch close.

All market state lives in metered storage. Every public mutating method of
:class:`CallMarket` runs as one transaction on the market's arena and returns
its :class:`GasReceipt`, so callers get the same numbers a contract call
would report.

Prices are integers at ``PRICE_SCALE`` (two decimals); an ether amount is
``price * volume`` in those same hundredths.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .gas_meter import GasReceipt, GasSchedule, StorageArena
from .pq import CleanupPolicy, Direction, PriorityQueue, QueueConfig, QueueEntry, Variant, make_queue

PRICE_SCALE = 100
DEFAULT_ORDER_CAP = 100
VOLUME_BITS = 96
_VOLUME_MASK = (1 << VOLUME_BITS) - 1


class MarketError(Exception):
    pass


class MarketClosedError(MarketError):
    pass


class MarketOpenError(MarketError):
    pass


class OrderCapError(MarketError):
    pass


class InsufficientBalanceError(MarketError):
    pass


class NothingToClaimError(MarketError):
    pass


class Side(str, enum.Enum):
    BID = "bid"
    ASK = "ask"


class Asset(str, enum.Enum):
    ETHER = "ether"
    TOKEN = "token"


class Phase(enum.IntEnum):
    CLOSED = 0
    OPEN = 1


class ImprovementRecipient(str, enum.Enum):
    MINER = "miner"
    BUYER = "buyer"


def parse_price(text: str | int | float) -> int:
    """``"10.15"`` -> 1015. Rejects more than two decimals."""
    s = str(text).strip()
    whole, _, frac = s.partition(".")
    if len(frac) > 2:
        raise ValueError(f"price {s!r} has more than two decimals")
    return int(whole or "0") * PRICE_SCALE + int(frac.ljust(2, "0") or "0")


def format_price(value: int) -> str:
    sign = "-" if value < 0 else ""
    whole, frac = divmod(abs(value), PRICE_SCALE)
    return f"{sign}{whole}.{frac:02d}"


# -------------------------------------------------------------------- calldata

_CALLS = {
    "deposit": ("asset", "amount"),
    "withdraw": ("asset", "amount"),
    "open_market": (),
    "submit_bid": ("price", "volume"),
    "submit_ask": ("price", "volume"),
    "close_market": (),
    "claim": ("asset",),
}


def selector(operation: str) -> bytes:
    if operation not in _CALLS:
        raise ValueError(f"unknown market operation {operation!r}")
    return hashlib.sha3_256(operation.encode()).digest()[:4]


def encode_call(operation: str, *args: int) -> bytes:
    """4-byte selector followed by one big-endian 32-byte word per argument."""
    params = _CALLS.get(operation)
    if params is None:
        raise ValueError(f"unknown market operation {operation!r}")
    if len(args) != len(params):
        raise ValueError(f"{operation} takes {len(params)} arguments, got {len(args)}")
    words = b"".join(int(a).to_bytes(32, "big") for a in args)
    return selector(operation) + words


_ASSET_CODE = {Asset.ETHER: 0, Asset.TOKEN: 1}


# ---------------------------------------------------------------------- types


@dataclass(frozen=True)
class Order:
    trader: str
    side: Side
    price: int
    volume: int
    sequence: int = -1

    def __post_init__(self) -> None:
        object.__setattr__(self, "side", Side(self.side))
        if self.price <= 0:
            raise ValueError("order price must be positive")
        if not 0 < self.volume <= _VOLUME_MASK:
            raise ValueError("order volume must be positive and fit in 96 bits")

    @property
    def collateral(self) -> tuple[Asset, int]:
        if self.side is Side.BID:
            return Asset.ETHER, self.price * self.volume
        return Asset.TOKEN, self.volume


@dataclass(frozen=True)
class Fill:
    buyer: str
    seller: str
    volume: int
    bid_price: int
    ask_price: int

    @property
    def buyer_pays(self) -> int:
        return self.volume * self.bid_price

    @property
    def seller_receives(self) -> int:
        return self.volume * self.ask_price

    @property
    def improvement(self) -> int:
        return self.buyer_pays - self.seller_receives

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(buyer_pays=self.buyer_pays, seller_receives=self.seller_receives, improvement=self.improvement)
        return d


def fills_to_json(fills: Iterable[Fill]) -> str:
    return json.dumps([f.to_dict() for f in fills], indent=2, sort_keys=True)


def fills_from_json(text: str) -> list[Fill]:
    return [Fill(d["buyer"], d["seller"], d["volume"], d["bid_price"], d["ask_price"]) for d in json.loads(text)]


def compute_clearing_price(fills: list[Fill]) -> int | None:
    """Midpoint of the last executed fill, off-chain analytics only.

    Rounds half up to the price grid. Never used for settlement.
    """
    if not fills:
        return None
    last = fills[-1]
    return (last.bid_price + last.ask_price + 1) // 2


# ---------------------------------------------------------------------- ledger


class BalanceLedger:
    """``totalBalance`` / ``unavailableBalance`` mappings in metered storage."""

    def __init__(self, arena: StorageArena, address: int, accounts: AccountBook) -> None:
        self.arena = arena
        self.address = address
        self.accounts = accounts

    def _slot(self, kind: str, account: str, asset: Asset) -> tuple:
        # str-valued enum: plain "ether"/"token" hash to the same key
        return (kind, self.accounts.address_of(account), _ASSET_CODE[asset])

    def total(self, account: str, asset: Asset) -> int:
        return self.arena.sload(self.address, self._slot("total", account, asset))

    def unavailable(self, account: str, asset: Asset) -> int:
        return self.arena.sload(self.address, self._slot("unavail", account, asset))

    def set_total(self, account: str, asset: Asset, value: int) -> None:
        self.arena.sstore(self.address, self._slot("total", account, asset), value)

    def set_unavailable(self, account: str, asset: Asset, value: int) -> None:
        self.arena.sstore(self.address, self._slot("unavail", account, asset), value)

    def free(self, account: str, asset: Asset) -> int:
        return self.total(account, asset) - self.unavailable(account, asset)

    def add_total(self, account: str, asset: Asset, delta: int) -> None:
        value = self.total(account, asset) + delta
        if value < 0:
            raise InsufficientBalanceError(f"{account} would hold a negative {Asset(asset).value} balance")
        self.set_total(account, asset, value)

    def add_unavailable(self, account: str, asset: Asset, delta: int) -> None:
        value = self.unavailable(account, asset) + delta
        if value < 0:
            raise MarketError("unavailable balance would go negative")
        self.set_unavailable(account, asset, value)

    # unmetered views
    def view_total(self, account: str, asset: Asset) -> int:
        return self.arena.inspect(self.address, self._slot("total", account, asset))

    def view_unavailable(self, account: str, asset: Asset) -> int:
        return self.arena.inspect(self.address, self._slot("unavail", account, asset))

    def view_free(self, account: str, asset: Asset) -> int:
        return self.view_total(account, asset) - self.view_unavailable(account, asset)

    def invariant_ok(self) -> bool:
        return all(
            self.view_unavailable(a, asset) <= self.view_total(a, asset)
            for a in self.accounts.names()
            for asset in Asset
        )


class AccountBook:
    """Maps account names to 160-bit addresses (off-chain bookkeeping)."""

    def __init__(self) -> None:
        self._by_name: dict[str, int] = {}
        self._by_address: dict[int, str] = {}

    def address_of(self, name: str) -> int:
        addr = self._by_name.get(name)
        if addr is None:
            digest = hashlib.sha3_256(name.encode()).digest()
            addr = int.from_bytes(digest[:20], "big") or 1
            while addr in self._by_address:
                addr = (addr + 1) % (1 << 160) or 1
            self._by_name[name] = addr
            self._by_address[addr] = name
        return addr

    def name_of(self, address: int) -> str:
        return self._by_address[address]

    def names(self) -> list[str]:
        return list(self._by_name)


# ---------------------------------------------------------------------- market


def pack_payload(address: int, volume: int) -> int:
    return (address << VOLUME_BITS) | volume


def unpack_payload(payload: int) -> tuple[int, int]:
    return payload >> VOLUME_BITS, payload & _VOLUME_MASK


@dataclass
class MarketState:
    bid_queue: PriorityQueue
    ask_queue: PriorityQueue
    order_cap: int | None = DEFAULT_ORDER_CAP
    miner_revenue: int = 0
    fills: list[Fill] = field(default_factory=list)
    orders: dict[int, Order] = field(default_factory=dict)  # by sequence, off-chain log


class CallMarket:
    """A single call market instance bound to one arena.

    ``order_cap=None`` removes the per-call cap (used by capacity benchmarks).
    ``improvement_recipient`` selects who receives bid/ask price differences.
    """

    def __init__(
        self,
        variant: Variant | str = Variant.HEAP_DYNAMIC_ARRAY,
        *,
        cleanup_policy: CleanupPolicy | str = CleanupPolicy.CLEAN,
        order_cap: int | None = DEFAULT_ORDER_CAP,
        schedule: GasSchedule | None = None,
        arena: StorageArena | None = None,
        improvement_recipient: ImprovementRecipient | str = ImprovementRecipient.MINER,
        queue_config: QueueConfig = QueueConfig(),
    ) -> None:
        if arena is None:
            arena = StorageArena() if schedule is None else StorageArena(schedule)
        self.arena = arena
        self.address = arena.deploy()
        self.accounts = AccountBook()
        self.ledger = BalanceLedger(arena, self.address, self.accounts)
        self.improvement_recipient = ImprovementRecipient(improvement_recipient)
        self.state = MarketState(
            bid_queue=make_queue(variant, arena, Direction.MAX_FIRST, cleanup_policy, queue_config),
            ask_queue=make_queue(variant, arena, Direction.MIN_FIRST, cleanup_policy, queue_config),
            order_cap=order_cap,
        )
        self.last_receipt: GasReceipt | None = None
        self.tx_gas_limit: int | None = None  # applied to every call when set

    # -- helpers ---------------------------------------------------------------

    def _run(self, calldata: bytes, fn, *args):
        with self.arena.transaction(calldata, self.tx_gas_limit) as tx:
            result = fn(*args)
        self.last_receipt = tx.receipt
        return result, tx.receipt

    @property
    def phase(self) -> Phase:
        return Phase(self.arena.inspect(self.address, "phase"))

    @property
    def variant(self) -> Variant:
        return self.state.bid_queue.variant

    # -- ledger calls ------------------------------------------------------------

    def deposit(self, account: str, asset: Asset | str, amount: int) -> GasReceipt:
        asset = Asset(asset)
        if amount <= 0:
            raise ValueError("deposit amount must be positive")

        def body():
            self.ledger.add_total(account, asset, amount)

        return self._run(encode_call("deposit", _ASSET_CODE[asset], amount), body)[1]

    def withdraw(self, account: str, asset: Asset | str, amount: int) -> GasReceipt:
        asset = Asset(asset)
        if amount <= 0:
            raise ValueError("withdraw amount must be positive")

        def body():
            if self.ledger.free(account, asset) < amount:
                raise InsufficientBalanceError(f"{account} has less than {amount} free {asset.value}")
            self.ledger.add_total(account, asset, -amount)

        return self._run(encode_call("withdraw", _ASSET_CODE[asset], amount), body)[1]

    def claim(self, account: str, asset: Asset | str) -> int:
        """Transfer the whole free balance out; returns the amount."""
        asset = Asset(asset)

        def body():
            free = self.ledger.free(account, asset)
            if free <= 0:
                raise NothingToClaimError(f"{account} has no free {asset.value} to claim")
            self.ledger.add_total(account, asset, -free)
            return free

        return self._run(encode_call("claim", _ASSET_CODE[asset]), body)[0]

    # -- market lifecycle ----------------------------------------------------------

    def open_market(self) -> GasReceipt:
        def body():
            if self.arena.sload(self.address, "phase") == Phase.OPEN:
                raise MarketOpenError("market is already open")
            self.arena.sstore(self.address, "phase", Phase.OPEN)
            if self.arena.sload(self.address, "accepted"):
                self.arena.sstore(self.address, "accepted", 0)

        return self._run(encode_call("open_market"), body)[1]

    def submit(self, order: Order) -> GasReceipt:
        op = "submit_bid" if order.side is Side.BID else "submit_ask"
        return self._run(encode_call(op, order.price, order.volume), self._submit, order)[1]

    def submit_bid(self, trader: str, price: int, volume: int) -> GasReceipt:
        return self.submit(Order(trader, Side.BID, price, volume))

    def submit_ask(self, trader: str, price: int, volume: int) -> GasReceipt:
        return self.submit(Order(trader, Side.ASK, price, volume))

    def _submit(self, order: Order) -> Order:
        arena = self.arena
        if arena.sload(self.address, "phase") != Phase.OPEN:
            raise MarketClosedError("market is closed")
        accepted = arena.sload(self.address, "accepted")
        cap = self.state.order_cap
        if cap is not None and accepted >= cap:
            raise OrderCapError(f"order cap of {cap} reached")
        asset, amount = order.collateral
        if self.ledger.free(order.trader, asset) < amount:
            raise InsufficientBalanceError(f"{order.trader} lacks {amount} free {asset.value}")
        self.ledger.add_unavailable(order.trader, asset, amount)
        seq = arena.sload(self.address, "seq")
        arena.sstore(self.address, "seq", seq + 1)
        arena.sstore(self.address, "accepted", accepted + 1)
        payload = pack_payload(self.accounts.address_of(order.trader), order.volume)
        queue = self.state.bid_queue if order.side is Side.BID else self.state.ask_queue
        queue.enqueue(QueueEntry(order.price, payload, seq))
        placed = Order(order.trader, order.side, order.price, order.volume, seq)
        self.state.orders[seq] = placed
        return placed

    def close_market(self, miner: str) -> tuple[list[Fill], GasReceipt]:
        fills, receipt = self._run(encode_call("close_market"), self._close, miner)
        self.state.fills.extend(fills)
        self.state.miner_revenue += sum(f.improvement for f in fills) if self.improvement_recipient is ImprovementRecipient.MINER else 0
        return fills, receipt

    def _close(self, miner: str) -> list[Fill]:
        arena, ledger = self.arena, self.ledger
        bids, asks = self.state.bid_queue, self.state.ask_queue
        if arena.sload(self.address, "phase") != Phase.OPEN:
            raise MarketClosedError("market is not open")
        fills: list[Fill] = []
        while True:
            bid = bids.peek()
            if bid is None:
                break
            ask = asks.peek()
            if ask is None or bid.priority < ask.priority:
                break
            buyer_addr, bid_vol = unpack_payload(bid.payload)
            seller_addr, ask_vol = unpack_payload(ask.payload)
            buyer = self.accounts.name_of(buyer_addr)
            seller = self.accounts.name_of(seller_addr)
            vol = min(bid_vol, ask_vol)
            fill = Fill(buyer, seller, vol, bid.priority, ask.priority)
            self._settle(fill, miner)
            fills.append(fill)
            if bid_vol == vol:
                bids.dequeue()
            else:
                bids.replace_top_payload(pack_payload(buyer_addr, bid_vol - vol))
            if ask_vol == vol:
                asks.dequeue()
            else:
                asks.replace_top_payload(pack_payload(seller_addr, ask_vol - vol))
        # nothing left can cross: drop both books and free their collateral
        for entry in bids.discard_all():
            addr, vol = unpack_payload(entry.payload)
            ledger.add_unavailable(self.accounts.name_of(addr), Asset.ETHER, -entry.priority * vol)
        for entry in asks.discard_all():
            addr, vol = unpack_payload(entry.payload)
            ledger.add_unavailable(self.accounts.name_of(addr), Asset.TOKEN, -vol)
        arena.sstore(self.address, "phase", Phase.CLOSED)
        return fills

    def _settle(self, fill: Fill, miner: str) -> None:
        ledger = self.ledger
        pays = fill.buyer_pays
        # buyer: committed ether leaves, tokens arrive
        ledger.add_total(fill.buyer, Asset.ETHER, -pays)
        ledger.add_unavailable(fill.buyer, Asset.ETHER, -pays)
        # seller: committed tokens leave, ether at the ask price arrives
        ledger.add_total(fill.seller, Asset.TOKEN, -fill.volume)
        ledger.add_unavailable(fill.seller, Asset.TOKEN, -fill.volume)
        ledger.add_total(fill.buyer, Asset.TOKEN, fill.volume)
        ledger.add_total(fill.seller, Asset.ETHER, fill.seller_receives)
        if fill.improvement:
            recipient = miner if self.improvement_recipient is ImprovementRecipient.MINER else fill.buyer
            ledger.add_total(recipient, Asset.ETHER, fill.improvement)

    # -- views ---------------------------------------------------------------------

    def book(self) -> tuple[list[Order], list[Order]]:
        """Resting bids and asks, best first (unmetered)."""
        out = []
        for queue, side in ((self.state.bid_queue, Side.BID), (self.state.ask_queue, Side.ASK)):
            entries = sorted(queue.snapshot(), key=lambda e: (-e.priority if side is Side.BID else e.priority, e.sequence))
            orders = []
            for e in entries:
                addr, vol = unpack_payload(e.payload)
                orders.append(Order(self.accounts.name_of(addr), side, e.priority, vol, e.sequence))
            out.append(orders)
        return out[0], out[1]

    def audit(self) -> bool:
        return (
            self.ledger.invariant_ok()
            and self.state.bid_queue.structure_ok()
            and self.state.ask_queue.structure_ok()
        )


# ----------------------------------------------------------------- book helpers


def load_book_csv(path: str | Path) -> list[Order]:
    """Rows of ``trader, side, price, volume``; a header row is optional."""
    orders = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            if row[0].strip().lower() == "trader":
                continue
            trader, side, price, volume = (c.strip() for c in row[:4])
            orders.append(Order(trader, Side(side.lower()), parse_price(price), int(volume)))
    return orders


def write_book_csv(orders: Iterable[Order], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trader", "side", "price", "volume"])
        for o in orders:
            w.writerow([o.trader, o.side.value, format_price(o.price), o.volume])


def sample_book() -> list[Order]:
    """Six-order example book with two-decimal prices."""
    rows = [
        ("Mehdi", Side.ASK, "10.18", 4),
        ("Avni", Side.BID, "12", 3),
        ("Kritee", Side.BID, "13", 3),
        ("Bob", Side.BID, "12.15", 1),
        ("Navjot", Side.ASK, "10.15", 4),
        ("Alice", Side.ASK, "10", 1),
    ]
    return [Order(t, s, parse_price(p), v) for t, s, p, v in rows]


def worst_case_book(pairs: int, volume: int = 1, base_price: int = 10 * PRICE_SCALE) -> list[Order]:
    """``pairs`` bids and asks, every one marketable against every other.

    Each order has its own trader, so every fill touches fresh balance slots.
    Bids sit above every ask; prices are distinct within each side.
    """
    orders = []
    for i in range(pairs):
        orders.append(Order(f"seller{i}", Side.ASK, base_price + i, volume))
        orders.append(Order(f"buyer{i}", Side.BID, base_price + pairs + 1 + i, volume))
    return orders


def fund_exactly(market: CallMarket, orders: Iterable[Order]) -> None:
    """Deposit exactly the collateral each order needs, one deposit per trader/asset."""
    need: dict[tuple[str, Asset], int] = {}
    for o in orders:
        asset, amount = o.collateral
        need[(o.trader, asset)] = need.get((o.trader, asset), 0) + amount
    for (trader, asset), amount in need.items():
        market.deposit(trader, asset, amount)


def run_book(
    orders: list[Order],
    variant: Variant | str = Variant.HEAP_DYNAMIC_ARRAY,
    *,
    miner: str = "miner",
    order_cap: int | None = None,
    **kwargs,
) -> tuple[CallMarket, list[Fill], GasReceipt]:
    """Fund, open, submit every order, close. Returns the market for inspection."""
    market = CallMarket(variant, order_cap=order_cap, **kwargs)
    fund_exactly(market, orders)
    market.open_market()
    for o in orders:
        market.submit(o)
    fills, receipt = market.close_market(miner)
    return market, fills, receipt


def iter_submission_receipts(market: CallMarket, orders: Iterable[Order]) -> Iterator[GasReceipt]:
    for o in orders:
        yield market.submit(o)


# ------------------------------------------------------------------ benchmarks


def worst_case_close(variant: Variant | str, pairs: int, schedule: GasSchedule | None = None) -> GasReceipt:
    """Close receipt for a fully marketable book of ``pairs`` bid/ask pairs."""
    config = QueueConfig(static_capacity=max(QueueConfig().static_capacity, pairs))
    market, _, receipt = run_book(worst_case_book(pairs), variant, schedule=schedule, queue_config=config)
    if not market.audit():
        raise AssertionError("market audit failed after worst-case close")
    return receipt


def max_worst_case_trades(variant: Variant | str, schedule: GasSchedule | None = None, upper: int = 1024) -> tuple[int, GasReceipt]:
    """Largest pair count whose close fits one block on pre-refund gas."""
    limit = (schedule or GasSchedule()).block_gas_limit

    def fits(n: int) -> bool:
        return worst_case_close(variant, n, schedule).gas_used_pre_refund <= limit

    lo, hi = 0, 1
    while hi <= upper and fits(hi):
        lo, hi = hi, hi * 2
    hi = min(hi, upper + 1)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if fits(mid):
            lo = mid
        else:
            hi = mid
    return lo, worst_case_close(variant, lo, schedule)


def random_book(n: int, seed: int = 0, *, distinct: bool = False, center: int = 10 * PRICE_SCALE, spread: int = 200) -> list[Order]:
    """``n`` orders with prices around ``center``; one trader per order."""
    import random

    rng = random.Random(seed)
    orders = []
    used: dict[Side, set[int]] = {Side.BID: set(), Side.ASK: set()}
    for i in range(n):
        side = rng.choice((Side.BID, Side.ASK))
        if distinct:
            price = None
            while price is None or price in used[side]:
                price = center - spread + rng.randrange(0, 2 * spread + 1 + n)
            used[side].add(price)
        else:
            price = center - spread + rng.randrange(0, 2 * spread + 1)
        orders.append(Order(f"trader{i}", side, max(1, price), 1 + rng.randrange(0, 9)))
    return orders


def average_submission_gas(variant: Variant | str, n: int = 200, seed: int = 0, schedule: GasSchedule | None = None) -> float:
    """Mean effective gas over ``n`` submissions into one open market."""
    orders = random_book(n, seed)
    market = CallMarket(variant, order_cap=None, schedule=schedule)
    fund_exactly(market, orders)
    market.open_market()
    receipts = [market.submit(o) for o in orders]
    return sum(r.gas_used_effective for r in receipts) / len(receipts)
