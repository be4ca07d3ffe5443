"""Optimistic-rollup cost model for the call market.

Traders send market calls to an L1 inbox, where they are only recorded as
calldata. Validators then execute the same market code on L2 against a cheap
gas schedule. L1 pays for bytes, L2 pays for computation, which is the split
reported by :func:`savings_report`.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction

from .gas_meter import DEFAULT_SCHEDULE, GasSchedule
from .market import (
    _CALLS,
    Asset,
    CallMarket,
    Order,
    Side,
    encode_call,
    fund_exactly,
    selector,
    worst_case_book,
)
from .pq import Variant

__all__ = [
    "encode_call",
    "decode_call",
    "InboxMessage",
    "Inbox",
    "Batch",
    "Sequencer",
    "L2Receipt",
    "L2Chain",
    "Bridge",
    "BridgeError",
    "l2_schedule",
    "inbox_submit",
    "calibrate_overhead",
    "savings_report",
    "cost_split_rows",
    "cost_split_csv",
]

# envelope field widths in bytes
ENVELOPE_FIELDS = (
    ("kind", 1),
    ("l1_origin", 20),
    ("sender", 20),
    ("destination", 20),
    ("nonce", 8),
    ("gas_limit", 8),
    ("gas_price", 8),
    ("value", 14),
)
ENVELOPE_SIZE = sum(n for _, n in ENVELOPE_FIELDS)  # 99
MESSAGE_KIND_CALL = 3
REFERENCE_CLOSE_L1_GAS = 6_569  # calibration target for the close message
DEFAULT_L2_FACTOR = Fraction(1, 100)
DEFAULT_CHALLENGE_BLOCKS = 240  # one hour of 15 s blocks
DEFAULT_SENDER = 0x5A0B54D5DC17E0AADC383D2DB43B0A0D3E029C4C
DEFAULT_DESTINATION = 0x0AA5449A9F7FA34A81CE1DC720563938A27E8B03
DEFAULT_L2_GAS_LIMIT = 100_000_000
DEFAULT_L2_GAS_PRICE = 1


class BridgeError(Exception):
    pass


_BY_SELECTOR = {selector(op): op for op in _CALLS}


def decode_call(payload: bytes) -> tuple[str, tuple[int, ...]]:
    op = _BY_SELECTOR.get(payload[:4])
    if op is None:
        raise ValueError("unknown selector")
    body = payload[4:]
    if len(body) != 32 * len(_CALLS[op]):
        raise ValueError(f"bad argument length for {op}")
    args = tuple(int.from_bytes(body[i : i + 32], "big") for i in range(0, len(body), 32))
    return op, args


def l2_schedule(factor: Fraction = DEFAULT_L2_FACTOR, base: GasSchedule = DEFAULT_SCHEDULE) -> GasSchedule:
    """Storage and lifecycle costs scaled by ``factor``; refunds never apply."""
    return base.scaled(factor, refunds=False)


# ---------------------------------------------------------------------- inbox


@dataclass(frozen=True)
class InboxMessage:
    payload: bytes
    sender: int = DEFAULT_SENDER
    destination: int = DEFAULT_DESTINATION
    nonce: int = 0
    gas_limit: int = DEFAULT_L2_GAS_LIMIT
    gas_price: int = DEFAULT_L2_GAS_PRICE
    value: int = 0
    kind: int = MESSAGE_KIND_CALL
    l1_origin: int | None = None  # defaults to sender

    def encode(self) -> bytes:
        values = {
            "kind": self.kind,
            "l1_origin": self.sender if self.l1_origin is None else self.l1_origin,
            "sender": self.sender,
            "destination": self.destination,
            "nonce": self.nonce,
            "gas_limit": self.gas_limit,
            "gas_price": self.gas_price,
            "value": self.value,
        }
        head = b"".join(int(values[name]).to_bytes(width, "big") for name, width in ENVELOPE_FIELDS)
        return head + self.payload

    @property
    def zero_bytes(self) -> int:
        return self.encode().count(0)

    @property
    def nonzero_bytes(self) -> int:
        data = self.encode()
        return len(data) - data.count(0)

    def __len__(self) -> int:
        return ENVELOPE_SIZE + len(self.payload)


def message_calldata_cost(message: InboxMessage, schedule: GasSchedule = DEFAULT_SCHEDULE) -> int:
    return schedule.calldata_cost(message.encode())


def calibrate_overhead(target: int = REFERENCE_CLOSE_L1_GAS, schedule: GasSchedule = DEFAULT_SCHEDULE) -> int:
    """Overhead making the canonical close message cost exactly ``target``."""
    reference = InboxMessage(encode_call("close_market"))
    overhead = target - message_calldata_cost(reference, schedule)
    if overhead < 0:
        raise ValueError("target is below the message's calldata cost")
    return overhead


def inbox_submit(message: InboxMessage, overhead: int | None = None, schedule: GasSchedule = DEFAULT_SCHEDULE) -> int:
    """L1 gas to record ``message``: a pure function of its bytes."""
    if overhead is None:
        overhead = calibrate_overhead(schedule=schedule)
    return overhead + message_calldata_cost(message, schedule)


@dataclass
class Inbox:
    overhead: int | None = None
    schedule: GasSchedule = DEFAULT_SCHEDULE
    messages: list[InboxMessage] = field(default_factory=list)
    l1_gas: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.overhead is None:
            self.overhead = calibrate_overhead(schedule=self.schedule)

    def submit(self, message: InboxMessage) -> int:
        cost = inbox_submit(message, self.overhead, self.schedule)
        self.messages.append(message)
        self.l1_gas.append(cost)
        return cost


@dataclass
class Batch:
    messages: list[InboxMessage]
    batch_overhead: int = 0

    def l1_cost(self, overhead: int | None = None, schedule: GasSchedule = DEFAULT_SCHEDULE) -> int:
        if overhead is None:
            overhead = calibrate_overhead(schedule=schedule)
        return self.batch_overhead + sum(inbox_submit(m, overhead, schedule) for m in self.messages)

    def per_message(self, overhead: int | None = None, schedule: GasSchedule = DEFAULT_SCHEDULE) -> Fraction:
        if not self.messages:
            return Fraction(0)
        return Fraction(self.l1_cost(overhead, schedule), len(self.messages))


class Sequencer:
    """Collects pending messages and posts them as one batch, in arrival order.

    Its ordering privilege equals a miner's; adversarial orderings are studied
    with :mod:`callmarket.chain_sim` using ``sequencer_policy``.
    """

    def __init__(self, batch_overhead: int = 0) -> None:
        self.pending: list[InboxMessage] = []
        self.batch_overhead = batch_overhead

    def receive(self, message: InboxMessage) -> None:
        self.pending.append(message)

    def flush(self, inbox: Inbox) -> Batch:
        batch = Batch(list(self.pending), self.batch_overhead)
        for m in batch.messages:
            inbox.submit(m)
        self.pending.clear()
        return batch


# ------------------------------------------------------------------------- L2


@dataclass(frozen=True)
class L2Receipt:
    op: str
    arbgas: int
    l1_share: int
    result: object = None


class L2Chain:
    """Executes inbox messages in order against a market on the L2 schedule."""

    def __init__(
        self,
        variant: Variant | str = Variant.HEAP_DYNAMIC_ARRAY,
        schedule: GasSchedule | None = None,
        overhead: int | None = None,
        order_cap: int | None = None,
    ) -> None:
        self.schedule = schedule or l2_schedule()
        self.market = CallMarket(variant, schedule=self.schedule, order_cap=order_cap)
        self.inbox = Inbox(overhead)
        self._names: dict[int, str] = {}

    def account(self, name: str) -> int:
        addr = self.market.accounts.address_of(name)
        self._names[addr] = name
        return addr

    def message(self, name: str, op: str, *args: int, nonce: int = 0) -> InboxMessage:
        return InboxMessage(encode_call(op, *args), sender=self.account(name), nonce=nonce)

    def execute_l2(self, message: InboxMessage, miner: str = "validator") -> L2Receipt:
        """Record ``message`` on L1, then run it on L2."""
        l1 = self.inbox.submit(message)
        op, args = decode_call(message.payload)
        trader = self._names.get(message.sender)
        if trader is None and op != "close_market" and op != "open_market":
            raise ValueError("unknown sender; register it with account()")
        m = self.market
        result: object = None
        if op == "deposit":
            receipt = m.deposit(trader, _asset(args[0]), args[1])
        elif op == "withdraw":
            receipt = m.withdraw(trader, _asset(args[0]), args[1])
        elif op == "claim":
            result = m.claim(trader, _asset(args[0]))
            receipt = m.last_receipt
        elif op == "open_market":
            receipt = m.open_market()
        elif op in ("submit_bid", "submit_ask"):
            side = Side.BID if op == "submit_bid" else Side.ASK
            receipt = m.submit(Order(trader, side, args[0], args[1]))
        else:  # close_market
            result, receipt = m.close_market(miner)
        return L2Receipt(op, receipt.gas_used_pre_refund, l1, result)


def _asset(code: int) -> Asset:
    return (Asset.ETHER, Asset.TOKEN)[code]


# ---------------------------------------------------------------------- bridge


@dataclass
class PendingWithdrawal:
    account: str
    asset: Asset
    amount: int
    final_block: int


class Bridge:
    """Moves balances between L1 and L2; withdrawals wait out the challenge period."""

    def __init__(self, challenge_blocks: int = DEFAULT_CHALLENGE_BLOCKS) -> None:
        self.challenge_blocks = challenge_blocks
        self.l1: dict[tuple[str, Asset], int] = {}
        self.l2: dict[tuple[str, Asset], int] = {}
        self.pending: list[PendingWithdrawal] = []
        self.block = 0

    def fund_l1(self, account: str, asset: Asset | str, amount: int) -> None:
        key = (account, Asset(asset))
        self.l1[key] = self.l1.get(key, 0) + amount

    def l1_balance(self, account: str, asset: Asset | str) -> int:
        return self.l1.get((account, Asset(asset)), 0)

    def l2_balance(self, account: str, asset: Asset | str) -> int:
        return self.l2.get((account, Asset(asset)), 0)

    def bridge_deposit(self, account: str, asset: Asset | str, amount: int) -> None:
        key = (account, Asset(asset))
        if amount <= 0:
            raise BridgeError("amount must be positive")
        if self.l1.get(key, 0) < amount:
            raise BridgeError("insufficient L1 balance")
        self.l1[key] -= amount
        self.l2[key] = self.l2.get(key, 0) + amount

    def bridge_withdraw(self, account: str, asset: Asset | str, amount: int) -> PendingWithdrawal:
        key = (account, Asset(asset))
        if amount <= 0:
            raise BridgeError("amount must be positive")
        if self.l2.get(key, 0) < amount:
            raise BridgeError("insufficient L2 balance")
        self.l2[key] -= amount
        w = PendingWithdrawal(account, Asset(asset), amount, self.block + self.challenge_blocks)
        self.pending.append(w)
        return w

    def advance(self, blocks: int = 1) -> list[PendingWithdrawal]:
        """Move time forward; returns withdrawals finalized on L1."""
        self.block += blocks
        done = [w for w in self.pending if w.final_block <= self.block]
        self.pending = [w for w in self.pending if w.final_block > self.block]
        for w in done:
            self.fund_l1(w.account, w.asset, w.amount)
        return done

    def pending_amount(self, account: str, asset: Asset | str) -> int:
        return sum(w.amount for w in self.pending if w.account == account and w.asset is Asset(asset))


# --------------------------------------------------------------------- reports


@dataclass(frozen=True)
class SavingsRow:
    n_pairs: int
    l1_direct: int
    l1_rollup: int
    arbgas: int

    @property
    def savings(self) -> Fraction:
        return 1 - Fraction(self.l1_rollup, self.l1_direct)


def _close_on(schedule: GasSchedule, variant, n_pairs: int):
    market = CallMarket(variant, schedule=schedule, order_cap=None)
    orders = worst_case_book(n_pairs)
    fund_exactly(market, orders)
    market.open_market()
    for o in orders:
        market.submit(o)
    return market.close_market("miner")


def direct_close_gas(n_pairs: int, variant: Variant | str = Variant.HEAP_DYNAMIC_ARRAY, schedule: GasSchedule = DEFAULT_SCHEDULE) -> int:
    """Effective L1 gas of closing a worst-case book directly on L1 (no block limit applied)."""
    return _close_on(schedule, variant, n_pairs)[1].gas_used_effective


def savings_report(n_pairs: int, backend: Variant | str = Variant.HEAP_DYNAMIC_ARRAY, l2: GasSchedule | None = None) -> SavingsRow:
    direct = direct_close_gas(n_pairs, backend)
    chain = L2Chain(backend, schedule=l2)
    orders = worst_case_book(n_pairs)
    need: dict[tuple[str, Asset], int] = {}
    for o in orders:
        asset, amount = o.collateral
        need[(o.trader, asset)] = need.get((o.trader, asset), 0) + amount
    for (trader, asset), amount in need.items():
        chain.execute_l2(chain.message(trader, "deposit", 0 if asset is Asset.ETHER else 1, amount))
    chain.execute_l2(chain.message("operator", "open_market"))
    for o in orders:
        op = "submit_bid" if o.side is Side.BID else "submit_ask"
        chain.execute_l2(chain.message(o.trader, op, o.price, o.volume))
    close = chain.execute_l2(chain.message("operator", "close_market"))
    return SavingsRow(n_pairs, direct, close.l1_share, close.arbgas)


def cost_split_rows(pairs: list[int], backend: Variant | str = Variant.HEAP_DYNAMIC_ARRAY) -> list[SavingsRow]:
    return [savings_report(n, backend) for n in pairs]


def cost_split_csv(rows: list[SavingsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n_pairs", "l1_direct", "l1_rollup", "arbgas", "savings"])
    for r in rows:
        w.writerow([r.n_pairs, r.l1_direct, r.l1_rollup, r.arbgas, f"{float(r.savings):.6f}"])
    return buf.getvalue()
