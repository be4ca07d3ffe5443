"""Metered EVM-style storage arena.

Only the costs that dominate an on-chain order book are modelled: storage
reads and writes, contract creation and destruction, calldata and the
transaction base charge. Everything else an EVM would charge (memory, stack,
arithmetic, call overhead) is deliberately left out.

Typical use::

    arena = StorageArena()
    with arena.transaction() as tx:
        addr = arena.create_contract(code_size=100)
        arena.sstore(addr, 0, 7)
    tx.receipt.gas_used_effective
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Hashable, Iterator

WORD_LIMIT = 2**256

Slot = Hashable
DEFAULT_CAP = Fraction(1, 2)


class GasError(Exception):
    """Base class for arena errors."""


class TransactionStateError(GasError):
    """Raised on begin/end calls that do not respect the transaction protocol."""


class ContractStateError(GasError):
    """Raised when touching a contract that is unknown or already destroyed."""


class OutOfGasError(GasError):
    """Raised when a transaction's pre-refund gas would exceed its gas limit."""


@dataclass(frozen=True)
class GasSchedule:
    """Every chargeable or refundable constant used by the arena.

    Defaults are Istanbul-era mainnet values with the refund figures and the
    block gas limit observed in mid 2020.
    """

    sstore_set: int = 20_000
    sstore_update: int = 5_000
    sstore_clear_cost: int = 5_000
    sstore_clear_refund: int = 15_000
    selfdestruct_cost: int = 5_000
    selfdestruct_refund: int = 24_000
    sload: int = 800
    contract_create_base: int = 32_000
    contract_code_deposit_per_byte: int = 200
    tx_base: int = 21_000
    calldata_nonzero_byte: int = 16
    calldata_zero_byte: int = 4
    refund_cap_fraction: Fraction = Fraction(1, 2)
    block_gas_limit: int = 11_741_495
    gas_price: int = 56  # Gwei

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "refund_cap_fraction":
                value = Fraction(value)
                object.__setattr__(self, f.name, value)
                if not 0 <= value <= 1:
                    raise ValueError("refund_cap_fraction must lie in [0, 1]")
            elif not isinstance(value, int) or value < 0:
                raise ValueError(f"{f.name} must be a non-negative integer, got {value!r}")

    def scaled(self, factor: Fraction, *, refunds: bool = True) -> GasSchedule:
        """Return a copy with every storage/lifecycle charge multiplied by ``factor``.

        Calldata pricing and the block limit are left alone. With
        ``refunds=False`` the refund cap is set to zero so no refund is ever
        applied.
        """
        factor = Fraction(factor)
        storage = (
            "sstore_set",
            "sstore_update",
            "sstore_clear_cost",
            "sstore_clear_refund",
            "selfdestruct_cost",
            "selfdestruct_refund",
            "sload",
            "contract_create_base",
            "contract_code_deposit_per_byte",
        )
        changes: dict[str, object] = {name: int(getattr(self, name) * factor) for name in storage}
        if not refunds:
            changes["refund_cap_fraction"] = Fraction(0)
        return replace(self, **changes)

    def calldata_cost(self, payload: bytes) -> int:
        zeros = payload.count(0)
        return zeros * self.calldata_zero_byte + (len(payload) - zeros) * self.calldata_nonzero_byte

    def fee_gwei(self, gas: int) -> int:
        return gas * self.gas_price

    @classmethod
    def from_mapping(cls, values: dict[str, str | int]) -> GasSchedule:
        known = {f.name: f for f in fields(cls)}
        kwargs: dict[str, object] = {}
        for key, raw in values.items():
            if key not in known:
                raise KeyError(f"unknown gas schedule key {key!r}")
            if key == "refund_cap_fraction":
                kwargs[key] = Fraction(str(raw))
            else:
                kwargs[key] = int(str(raw).replace("_", ""))
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> GasSchedule:
        """Load a schedule from a flat ``key = value`` file; missing keys keep defaults."""
        return cls.from_mapping(read_flat_config(path))


DEFAULT_SCHEDULE = GasSchedule()


def read_flat_config(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` file. ``#`` starts a comment."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        values[key.strip()] = value.strip()
    return values


@dataclass(frozen=True)
class GasReceipt:
    gas_used_pre_refund: int
    refund_earned: int
    refund_applied: int
    gas_used_effective: int
    fee: int  # Gwei

    @classmethod
    def settle(cls, gas_used: int, refund_earned: int, schedule: GasSchedule) -> GasReceipt:
        cap = int(gas_used * schedule.refund_cap_fraction)  # floor; both operands non-negative
        applied = min(refund_earned, cap)
        effective = gas_used - applied
        return cls(gas_used, refund_earned, applied, effective, schedule.fee_gwei(effective))

    def hits_cap(self, fraction: Fraction = DEFAULT_CAP) -> bool:
        """True when the applied refund is exactly the cap (earned >= cap)."""
        return self.refund_applied == int(self.gas_used_pre_refund * Fraction(fraction))

    def to_dict(self) -> dict[str, int]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> GasReceipt:
        return cls(**json.loads(text))


def admit_to_block(receipt: GasReceipt, remaining_block_gas: int) -> bool:
    """A block admits a transaction on its pre-refund gas, never the refunded amount."""
    return receipt.gas_used_pre_refund <= remaining_block_gas


@dataclass
class Contract:
    address: int
    code_size: int
    alive: bool = True
    storage: dict[Slot, int] = field(default_factory=dict)


_MISSING = object()


@dataclass
class _OpenTx:
    gas_used: int
    gas_limit: int | None = None
    refund_counter: int = 0
    journal: dict[tuple[int, Slot], object] = field(default_factory=dict)
    created: list[int] = field(default_factory=list)
    destroyed: list[int] = field(default_factory=list)


class StorageArena:
    """Contracts and their storage slots, charged per the active schedule.

    One transaction may be open at a time. Writes are applied eagerly and
    journalled so :meth:`revert_tx` can roll them back; :meth:`end_tx`
    commits, removing the storage of contracts destroyed in the transaction.
    """

    def __init__(self, schedule: GasSchedule = DEFAULT_SCHEDULE) -> None:
        self.schedule = schedule
        self.contracts: dict[int, Contract] = {}
        self._next_address = 0x1000
        self._tx: _OpenTx | None = None

    # -- transaction protocol -------------------------------------------------

    @property
    def in_transaction(self) -> bool:
        return self._tx is not None

    @property
    def gas_used(self) -> int:
        return self._require_tx().gas_used

    @property
    def refund_counter(self) -> int:
        return self._require_tx().refund_counter

    def begin_tx(self, calldata: bytes = b"", gas_limit: int | None = None) -> None:
        """Open a transaction. ``gas_limit`` caps pre-refund gas (None = unlimited)."""
        if self._tx is not None:
            raise TransactionStateError("a transaction is already open on this arena")
        intrinsic = self.schedule.tx_base + self.schedule.calldata_cost(calldata)
        self._tx = _OpenTx(gas_used=intrinsic, gas_limit=gas_limit)
        if gas_limit is not None and intrinsic > gas_limit:
            self._tx = None
            raise OutOfGasError(f"intrinsic gas {intrinsic} exceeds limit {gas_limit}")

    def end_tx(self) -> GasReceipt:
        tx = self._require_tx()
        for address in tx.destroyed:
            contract = self.contracts[address]
            contract.alive = False
            contract.storage.clear()
        self._tx = None
        return GasReceipt.settle(tx.gas_used, tx.refund_counter, self.schedule)

    def revert_tx(self) -> None:
        """Undo every state change made since :meth:`begin_tx`; gas is discarded."""
        tx = self._require_tx()
        for (address, slot), old in tx.journal.items():
            contract = self.contracts.get(address)
            if contract is None:
                continue
            if old is _MISSING:
                contract.storage.pop(slot, None)
            else:
                contract.storage[slot] = old  # type: ignore[assignment]
        for address in tx.created:
            self.contracts.pop(address, None)
        self._tx = None

    @contextmanager
    def transaction(self, calldata: bytes = b"", gas_limit: int | None = None) -> Iterator[TxHandle]:
        """Open a transaction, commit on normal exit, revert on exception."""
        handle = TxHandle()
        self.begin_tx(calldata, gas_limit)
        try:
            yield handle
        except BaseException:
            self.revert_tx()
            raise
        handle.receipt = self.end_tx()

    # -- metered operations ---------------------------------------------------

    def charge(self, amount: int) -> int:
        if amount < 0:
            raise ValueError("charge must be non-negative")
        tx = self._require_tx()
        tx.gas_used += amount
        if tx.gas_limit is not None and tx.gas_used > tx.gas_limit:
            raise OutOfGasError(f"out of gas: {tx.gas_used} > {tx.gas_limit}")
        return amount

    # sload/sstore inline the checks of _require_tx, _live and charge: they
    # dominate every simulation's runtime.

    def sload(self, address: int, slot: Slot) -> int:
        tx = self._tx
        if tx is None:
            raise TransactionStateError("no transaction open")
        contract = self.contracts.get(address)
        if contract is None or not contract.alive:
            raise ContractStateError(f"no live contract at {address:#x}")
        tx.gas_used += self.schedule.sload
        if tx.gas_limit is not None and tx.gas_used > tx.gas_limit:
            raise OutOfGasError(f"out of gas: {tx.gas_used} > {tx.gas_limit}")
        return contract.storage.get(slot, 0)

    def sstore(self, address: int, slot: Slot, value: int) -> int:
        tx = self._tx
        if tx is None:
            raise TransactionStateError("no transaction open")
        if not 0 <= value < WORD_LIMIT:
            raise ValueError("storage values are unsigned 256-bit words")
        contract = self.contracts.get(address)
        if contract is None or not contract.alive:
            raise ContractStateError(f"no live contract at {address:#x}")
        storage = contract.storage
        current = storage.get(slot, 0)
        sched = self.schedule
        if current == 0 and value != 0:
            cost = sched.sstore_set
        elif current != 0 and value == 0:
            cost = sched.sstore_clear_cost
            tx.refund_counter += sched.sstore_clear_refund
        else:
            cost = sched.sstore_update
        key = (address, slot)
        if key not in tx.journal:
            tx.journal[key] = storage.get(slot, _MISSING)
        if value == 0:
            storage.pop(slot, None)
        else:
            storage[slot] = value
        tx.gas_used += cost
        if tx.gas_limit is not None and tx.gas_used > tx.gas_limit:
            raise OutOfGasError(f"out of gas: {tx.gas_used} > {tx.gas_limit}")
        return cost

    def create_contract(self, code_size: int = 0) -> int:
        tx = self._require_tx()
        if code_size < 0:
            raise ValueError("code_size must be non-negative")
        address = self._next_address
        self._next_address += 1
        self.contracts[address] = Contract(address, code_size)
        tx.created.append(address)
        sched = self.schedule
        self.charge(sched.contract_create_base + code_size * sched.contract_code_deposit_per_byte)
        return address

    def self_destruct(self, address: int) -> int:
        tx = self._require_tx()
        self._live(address)
        if address in tx.destroyed:
            raise ContractStateError(f"contract {address:#x} already self-destructed")
        tx.destroyed.append(address)
        tx.refund_counter += self.schedule.selfdestruct_refund
        return self.charge(self.schedule.selfdestruct_cost)

    def deploy(self, code_size: int = 0) -> int:
        """Register a contract outside any transaction. Deployment is not metered."""
        address = self._next_address
        self._next_address += 1
        self.contracts[address] = Contract(address, code_size)
        return address

    # -- unmetered inspection ---------------------------------------------------

    def inspect(self, address: int, slot: Slot) -> int:
        """Read a slot without charging gas (audit hook, never used by contract logic)."""
        contract = self.contracts.get(address)
        if contract is None or not contract.alive:
            raise ContractStateError(f"no live contract at {address:#x}")
        return contract.storage.get(slot, 0)

    def is_alive(self, address: int) -> bool:
        contract = self.contracts.get(address)
        return contract is not None and contract.alive

    def live_slot_count(self) -> int:
        return sum(len(c.storage) for c in self.contracts.values() if c.alive)

    # -- helpers ---------------------------------------------------------------

    def _require_tx(self) -> _OpenTx:
        if self._tx is None:
            raise TransactionStateError("no transaction open")
        return self._tx

    def _live(self, address: int) -> Contract:
        contract = self.contracts.get(address)
        if contract is None or not contract.alive:
            raise ContractStateError(f"no live contract at {address:#x}")
        return contract


@dataclass
class TxHandle:
    receipt: GasReceipt | None = None
