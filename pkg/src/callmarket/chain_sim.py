"""Deterministic single-chain simulator for front-running experiments.

A scenario is a declarative description (actors, balances, transactions,
miner policy, venue, block count). :func:`run_scenario` executes it twice:
once as described (the attack run) and once with an honest FIFO miner and
without the attacker's pure attack tooling (the baseline run). The attacker's
gain is the difference between the two runs, valued at the scenario's
reference price.

Two venues exist: the call market from :mod:`callmarket.market`, driven
through its metered arena, and :class:`ContinuousBook`, a minimal
price-time-priority continuous double auction with cancellations.
"""

from __future__ import annotations

import copy
import csv
import enum
import io
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .gas_meter import DEFAULT_SCHEDULE, GasReceipt, GasSchedule, OutOfGasError, admit_to_block
from .market import (
    Asset,
    CallMarket,
    ImprovementRecipient,
    MarketError,
    Order,
    Side,
    parse_price,
)
from .pq import Variant


class ScenarioError(Exception):
    pass


class PolicyKind(str, enum.Enum):
    FEE_PRIORITY = "fee_priority"
    FIFO = "fifo"
    ADVERSARIAL = "adversarial"


class Venue(str, enum.Enum):
    CALL_MARKET = "call_market"
    CONTINUOUS_BOOK = "continuous_book"
    # call market that hands price improvements back to buyers
    CALL_MARKET_TRADER_IMPROVEMENT = "call_market_trader_improvement"


class Verdict(str, enum.Enum):
    MITIGATED = "mitigated"
    PARTIAL = "partial"
    VULNERABLE = "vulnerable"

    @property
    def symbol(self) -> str:
        return {"mitigated": "●", "partial": "◐", "vulnerable": "○"}[self.value]


HONEST_GAS_BID = 50  # Gwei
ORDER_GAS_LIMIT = 1_000_000
CB_ORDER_GAS = 150_000  # flat cost charged by the continuous baseline


# ----------------------------------------------------------------- transactions


@dataclass
class SimTransaction:
    """One mempool transaction.

    ``call`` is ``{"op": ..., **args}`` with op one of bid, ask, cancel, spam.
    ``role`` is honest, victim, attacker (trading orders of the attacker) or
    tool (pure attack resources such as flood spam).
    """

    tx_id: str
    sender: str
    call: dict[str, Any]
    gas_bid: int = HONEST_GAS_BID
    nonce: int = 0
    arrival: int = 0
    gas_limit: int = ORDER_GAS_LIMIT
    role: str = "honest"
    index: int = 0  # position in scenario order, breaks arrival ties

    def planned_receipt(self, schedule: GasSchedule) -> GasReceipt:
        return GasReceipt.settle(self.gas_limit, 0, schedule)


@dataclass
class MinerPolicy:
    kind: PolicyKind = PolicyKind.FEE_PRIORITY
    adversary: str | None = None
    insert_before: dict[str, str] = field(default_factory=dict)  # attacker tx -> victim tx
    censor: dict[str, int] = field(default_factory=dict)  # tx -> first block it may enter
    role: str = "miner"

    def __post_init__(self) -> None:
        self.kind = PolicyKind(self.kind)


def sequencer_policy(**kwargs) -> MinerPolicy:
    """A rollup sequencer orders transactions with a miner's privileges."""
    return MinerPolicy(role="sequencer", **kwargs)


def _base_key(tx: SimTransaction, kind: PolicyKind) -> tuple:
    if kind is PolicyKind.FIFO:
        return (tx.arrival, tx.index)
    return (-tx.gas_bid, tx.arrival, tx.index)


def build_block(
    mempool: list[SimTransaction],
    policy: MinerPolicy,
    gas_limit: int,
    *,
    block_number: int = 0,
    next_nonce: dict[str, int] | None = None,
    schedule: GasSchedule = DEFAULT_SCHEDULE,
) -> list[SimTransaction]:
    """Choose and order transactions for one block.

    Admission is on pre-refund gas (each transaction's declared limit).
    Per-sender nonces are respected; skipped transactions stay in the mempool.
    """
    next_nonce = dict(next_nonce or {})
    kind = policy.kind
    attached = set(policy.insert_before) if kind is PolicyKind.ADVERSARIAL else set()
    candidates = [
        tx
        for tx in mempool
        if tx.arrival <= block_number
        and tx.tx_id not in attached
        and not (kind is PolicyKind.ADVERSARIAL and policy.censor.get(tx.tx_id, 0) > block_number)
    ]
    base_kind = PolicyKind.FIFO if kind is PolicyKind.FIFO else PolicyKind.FEE_PRIORITY
    candidates.sort(key=lambda t: _base_key(t, base_kind))

    # expand attacker insertions in front of their victims
    by_id = {tx.tx_id: tx for tx in mempool}
    fronts: dict[str, list[SimTransaction]] = {}
    if kind is PolicyKind.ADVERSARIAL:
        for atk, victim in policy.insert_before.items():
            if atk in by_id:
                fronts.setdefault(victim, []).append(by_id[atk])
        for group in fronts.values():
            group.sort(key=lambda t: (t.nonce, t.index))

    ordered: list[SimTransaction] = []
    for tx in candidates:
        ordered.extend(fronts.get(tx.tx_id, []))
        ordered.append(tx)

    block: list[SimTransaction] = []
    remaining = gas_limit
    chosen: set[str] = set()
    progress = True
    while progress:
        progress = False
        for tx in ordered:
            if tx.tx_id in chosen:
                continue
            if tx.nonce != next_nonce.get(tx.sender, 0):
                continue
            if not admit_to_block(tx.planned_receipt(schedule), remaining):
                continue
            block.append(tx)
            chosen.add(tx.tx_id)
            remaining -= tx.gas_limit
            next_nonce[tx.sender] = tx.nonce + 1
            progress = True
            break  # restart so nonce-unblocked txs keep their priority slot
    return block


# ------------------------------------------------------------- continuous book


@dataclass
class RestingOrder:
    order_id: str
    trader: str
    side: Side
    price: int
    volume: int
    time: int


class ContinuousBook:
    """Price-time-priority continuous double auction with cancellations.

    Marketable orders execute immediately at the resting order's price; any
    remainder rests. Settlement uses a plain in-memory ledger with the same
    units as the call market (ether in price hundredths, integer tokens).
    """

    def __init__(self) -> None:
        self.bids: list[RestingOrder] = []
        self.asks: list[RestingOrder] = []
        self.balances: dict[tuple[str, Asset], int] = {}
        self.locked: dict[tuple[str, Asset], int] = {}
        self.fills: list[tuple[int, Any]] = []  # (block, Fill)
        self._clock = 0

    def deposit(self, trader: str, asset: Asset, amount: int) -> None:
        key = (trader, Asset(asset))
        self.balances[key] = self.balances.get(key, 0) + amount

    def balance(self, trader: str, asset: Asset) -> int:
        return self.balances.get((trader, Asset(asset)), 0)

    def free(self, trader: str, asset: Asset) -> int:
        key = (trader, Asset(asset))
        return self.balances.get(key, 0) - self.locked.get(key, 0)

    def _move(self, trader: str, asset: Asset, delta: int) -> None:
        key = (trader, asset)
        self.balances[key] = self.balances.get(key, 0) + delta

    def _lock(self, trader: str, asset: Asset, delta: int) -> None:
        key = (trader, asset)
        self.locked[key] = self.locked.get(key, 0) + delta

    def place(self, order_id: str, trader: str, side: Side, price: int, volume: int, block: int = 0):
        from .market import Fill

        side = Side(side)
        if price <= 0 or volume <= 0:
            raise MarketError("price and volume must be positive")
        need_asset = Asset.ETHER if side is Side.BID else Asset.TOKEN
        need = price * volume if side is Side.BID else volume
        if self.free(trader, need_asset) < need:
            raise MarketError(f"{trader} lacks free {need_asset.value}")
        book = self.asks if side is Side.BID else self.bids
        fills = []
        while volume and book:
            best = book[0]
            crosses = price >= best.price if side is Side.BID else price <= best.price
            if not crosses:
                break
            qty = min(volume, best.volume)
            if side is Side.BID:
                fill = Fill(trader, best.trader, qty, best.price, best.price)
            else:
                fill = Fill(best.trader, trader, qty, best.price, best.price)
            self._settle(fill, resting_side=best.side)
            fills.append(fill)
            self.fills.append((block, fill))
            volume -= qty
            best.volume -= qty
            if best.volume == 0:
                book.pop(0)
        if volume:
            self._clock += 1
            rest = RestingOrder(order_id, trader, side, price, volume, self._clock)
            self._lock(trader, need_asset, price * volume if side is Side.BID else volume)
            mine = self.bids if side is Side.BID else self.asks
            mine.append(rest)
            if side is Side.BID:
                mine.sort(key=lambda o: (-o.price, o.time))
            else:
                mine.sort(key=lambda o: (o.price, o.time))
        return fills

    def _settle(self, fill, resting_side: Side) -> None:
        price = fill.ask_price  # same as bid price: resting price
        cost = price * fill.volume
        self._move(fill.buyer, Asset.ETHER, -cost)
        self._move(fill.buyer, Asset.TOKEN, fill.volume)
        self._move(fill.seller, Asset.TOKEN, -fill.volume)
        self._move(fill.seller, Asset.ETHER, cost)
        if resting_side is Side.BID:
            self._lock(fill.buyer, Asset.ETHER, -cost)
        else:
            self._lock(fill.seller, Asset.TOKEN, -fill.volume)

    def cancel(self, order_id: str, trader: str) -> bool:
        for book in (self.bids, self.asks):
            for i, o in enumerate(book):
                if o.order_id == order_id:
                    if o.trader != trader:
                        raise MarketError("only the owner may cancel")
                    book.pop(i)
                    if o.side is Side.BID:
                        self._lock(trader, Asset.ETHER, -o.price * o.volume)
                    else:
                        self._lock(trader, Asset.TOKEN, -o.volume)
                    return True
        return False


# ---------------------------------------------------------------------- venues


class _CallMarketVenue:
    """Drives a CallMarket through blocks; calls close every ``blocks_per_call``."""

    supports_cancel = False

    def __init__(self, scenario: dict, recipient: ImprovementRecipient, schedule: GasSchedule) -> None:
        self.market = CallMarket(
            scenario.get("backend", Variant.HEAP_DYNAMIC_ARRAY),
            order_cap=scenario.get("order_cap"),
            schedule=schedule,
            improvement_recipient=recipient,
        )
        self.recipient = recipient
        self.blocks_per_call = int(scenario.get("blocks_per_call", scenario["blocks"]))
        for trader, assets in scenario.get("balances", {}).items():
            for asset, amount in assets.items():
                if amount:
                    self.market.deposit(trader, Asset(asset), amount)
        self.market.open_market()
        self.fills: list[tuple[int, Any]] = []
        self.miner_income: dict[str, int] = {}

    def begin_block(self, block: int, miner: str) -> None:
        if block > 0 and block % self.blocks_per_call == 0:
            self._close(block - 1, miner)
            self.market.open_market()

    def _close(self, block: int, miner: str) -> None:
        fills, _ = self.market.close_market(miner)
        for f in fills:
            self.fills.append((block, f))
            if self.recipient is ImprovementRecipient.MINER and f.improvement:
                self.miner_income[miner] = self.miner_income.get(miner, 0) + f.improvement

    def finish(self, last_block: int, miner: str) -> None:
        self._close(last_block, miner)

    def apply(self, tx: SimTransaction, block: int) -> int:
        """Execute; returns pre-refund gas. Raises MarketError on failure."""
        op = tx.call["op"]
        self.market.tx_gas_limit = tx.gas_limit
        try:
            if op in ("bid", "ask"):
                order = Order(tx.sender, Side(op), int(tx.call["price"]), int(tx.call["volume"]))
                receipt = self.market.submit(order)
            elif op == "cancel":
                raise MarketError("call market has no cancellations")
            else:
                raise ScenarioError(f"unknown op {op!r}")
        finally:
            self.market.tx_gas_limit = None
        return receipt.gas_used_pre_refund

    def holdings(self, trader: str) -> tuple[int, int]:
        led = self.market.ledger
        return led.view_total(trader, Asset.ETHER), led.view_total(trader, Asset.TOKEN)


class _ContinuousVenue:
    supports_cancel = True

    def __init__(self, scenario: dict, schedule: GasSchedule) -> None:
        self.book = ContinuousBook()
        for trader, assets in scenario.get("balances", {}).items():
            for asset, amount in assets.items():
                if amount:
                    self.book.deposit(trader, Asset(asset), amount)
        self.miner_income: dict[str, int] = {}

    @property
    def fills(self):
        return self.book.fills

    def begin_block(self, block: int, miner: str) -> None:
        pass

    def finish(self, last_block: int, miner: str) -> None:
        pass

    def apply(self, tx: SimTransaction, block: int) -> int:
        op = tx.call["op"]
        if op in ("bid", "ask"):
            self.book.place(tx.tx_id, tx.sender, Side(op), int(tx.call["price"]), int(tx.call["volume"]), block)
        elif op == "cancel":
            if not self.book.cancel(tx.call["target"], tx.sender):
                raise MarketError("nothing to cancel")
        else:
            raise ScenarioError(f"unknown op {op!r}")
        return CB_ORDER_GAS

    def holdings(self, trader: str) -> tuple[int, int]:
        return self.book.balance(trader, Asset.ETHER), self.book.balance(trader, Asset.TOKEN)


def _make_venue(venue: Venue, scenario: dict, schedule: GasSchedule):
    if venue is Venue.CONTINUOUS_BOOK:
        return _ContinuousVenue(scenario, schedule)
    recipient = ImprovementRecipient.BUYER if venue is Venue.CALL_MARKET_TRADER_IMPROVEMENT else ImprovementRecipient.MINER
    return _CallMarketVenue(scenario, recipient, schedule)


# ----------------------------------------------------------------------- chain


@dataclass
class BlockRecord:
    number: int
    miner: str
    tx_ids: list[str]
    gas_used: int
    failed: list[str]


@dataclass
class RunResult:
    blocks: list[BlockRecord]
    fills: list[tuple[int, Any]]
    fees_paid: dict[str, int]  # Gwei, by sender, excluding fees paid to oneself
    miner_income: dict[str, int]  # market currency from price improvements
    holdings: dict[str, tuple[int, int]]
    pending: list[str]


class Chain:
    """Runs a list of transactions through ``n_blocks`` blocks on one venue."""

    def __init__(self, venue, policy: MinerPolicy, miner: str, schedule: GasSchedule = DEFAULT_SCHEDULE) -> None:
        self.venue = venue
        self.policy = policy
        self.miner = miner
        self.schedule = schedule

    def run(self, txs: list[SimTransaction], n_blocks: int, traders: list[str]) -> RunResult:
        mempool = list(txs)
        next_nonce: dict[str, int] = {}
        blocks: list[BlockRecord] = []
        fees: dict[str, int] = {}
        limit = self.schedule.block_gas_limit
        for number in range(n_blocks):
            self.venue.begin_block(number, self.miner)
            chosen = build_block(
                mempool, self.policy, limit, block_number=number, next_nonce=next_nonce, schedule=self.schedule
            )
            used = 0
            failed = []
            for tx in chosen:
                mempool.remove(tx)
                next_nonce[tx.sender] = tx.nonce + 1
                gas = self._execute(tx, number)
                if gas is None:
                    failed.append(tx.tx_id)
                    gas = tx.gas_limit if tx.call["op"] == "spam" else min(tx.gas_limit, self.schedule.tx_base)
                used += gas
                if tx.sender != self.miner:
                    fees[tx.sender] = fees.get(tx.sender, 0) + gas * tx.gas_bid
            assert used <= limit, "block exceeded its gas limit"
            blocks.append(BlockRecord(number, self.miner, [t.tx_id for t in chosen], used, failed))
        self.venue.finish(n_blocks - 1, self.miner)
        holdings = {t: self.venue.holdings(t) for t in traders}
        return RunResult(blocks, list(self.venue.fills), fees, dict(self.venue.miner_income), holdings, [t.tx_id for t in mempool])

    def _execute(self, tx: SimTransaction, block: int) -> int | None:
        if tx.call["op"] == "spam":
            return tx.gas_limit  # burns its whole allowance
        try:
            return self.venue.apply(tx, block)
        except (MarketError, OutOfGasError):
            return None


# ------------------------------------------------------------------- scenarios


@dataclass
class ScenarioReport:
    name: str
    row: int
    venue: str
    attacker: str
    attacker_profit: int  # market currency (price hundredths)
    disrupted_volume: int
    attack_cost_gwei: int
    miner_revenue: int
    verdict: Verdict
    fills: list[dict]
    baseline_fills: list[dict]
    note: str = ""
    baseline_miner_revenue: int = 0  # what honest ordering pays the miner

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "row": self.row,
            "venue": self.venue,
            "attacker": self.attacker,
            "attacker_profit": self.attacker_profit,
            "disrupted_volume": self.disrupted_volume,
            "attack_cost_gwei": self.attack_cost_gwei,
            "miner_revenue": self.miner_revenue,
            "baseline_miner_revenue": self.baseline_miner_revenue,
            "verdict": self.verdict.value,
            "fills": self.fills,
            "baseline_fills": self.baseline_fills,
            "note": self.note,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def verdict_for(gain: int, cost: int) -> Verdict:
    if gain <= 0:
        return Verdict.MITIGATED
    return Verdict.PARTIAL if cost > 0 else Verdict.VULNERABLE


def _transactions(scenario: dict) -> list[SimTransaction]:
    txs = []
    nonces: dict[str, int] = {}
    for i, raw in enumerate(scenario["transactions"]):
        raw = dict(raw)
        count = int(raw.pop("count", 1))
        for c in range(count):
            sender = raw["sender"]
            call = {k: v for k, v in raw.items() if k not in ("id", "sender", "arrival", "gas_bid", "role", "gas_limit")}
            if "price" in call:
                call["price"] = parse_price(call["price"]) if isinstance(call["price"], str) else int(call["price"])
            tx_id = raw["id"] if count == 1 else f"{raw['id']}.{c}"
            role = raw.get("role", "honest")
            if call["op"] == "spam":
                gas_limit = int(raw.get("gas_limit", scenario.get("block_gas_limit", DEFAULT_SCHEDULE.block_gas_limit)))
                gas_bid = int(raw.get("gas_bid", DEFAULT_SCHEDULE.gas_price))
                arrival = int(raw.get("arrival", 0)) + c
            else:
                gas_limit = int(raw.get("gas_limit", ORDER_GAS_LIMIT))
                gas_bid = int(raw.get("gas_bid", HONEST_GAS_BID))
                arrival = int(raw.get("arrival", 0))
            nonce = nonces.get(sender, 0)
            nonces[sender] = nonce + 1
            txs.append(SimTransaction(tx_id, sender, call, gas_bid, nonce, arrival, gas_limit, role, len(txs)))
    return txs


def _renumber(txs: list[SimTransaction]) -> list[SimTransaction]:
    """Reassign nonces per sender in scenario order after filtering."""
    nonces: dict[str, int] = {}
    out = []
    for tx in txs:
        tx = copy.copy(tx)
        tx.nonce = nonces.get(tx.sender, 0)
        nonces[tx.sender] = tx.nonce + 1
        out.append(tx)
    return out


def _take(result: RunResult, scenario: dict, attacker: str) -> int:
    ref = parse_price(scenario["reference_price"]) if isinstance(scenario["reference_price"], str) else int(scenario["reference_price"])
    start = scenario.get("balances", {}).get(attacker, {})
    ether, tokens = result.holdings.get(attacker, (0, 0))
    d_ether = ether - int(start.get("ether", 0))
    d_tokens = tokens - int(start.get("token", 0))
    # price improvements routed to a mining attacker already sit in its ledger balance
    return d_ether + d_tokens * ref


def _volume_until(result: RunResult, last_block: int) -> int:
    return sum(f.volume for block, f in result.fills if block <= last_block)


def _traders(scenario: dict) -> list[str]:
    names = set(scenario.get("balances", {}))
    names.update(t["sender"] for t in scenario["transactions"])
    return sorted(names)


def execute(scenario: dict, *, baseline: bool, schedule: GasSchedule = DEFAULT_SCHEDULE) -> RunResult:
    """Run one side of a scenario. The baseline drops tool transactions and mines FIFO honestly."""
    venue = _make_venue(Venue(scenario["venue"]), scenario, schedule)
    txs = _transactions(scenario)
    attacker = scenario.get("attacker")
    miner = attacker if scenario.get("attacker_is_miner") else scenario.get("miner", "miner0")
    if baseline:
        txs = _renumber([t for t in txs if t.role != "tool"])
        policy = MinerPolicy(PolicyKind.FIFO)
    else:
        p = scenario.get("policy", {})
        policy = MinerPolicy(
            PolicyKind(p.get("kind", PolicyKind.FEE_PRIORITY)),
            adversary=attacker,
            insert_before=dict(p.get("insert_before", {})),
            censor={k: int(v) for k, v in p.get("censor", {}).items()},
            role=p.get("role", "miner"),
        )
    return Chain(venue, policy, miner, schedule).run(txs, int(scenario["blocks"]), _traders(scenario))


def evaluate(scenario: dict, schedule: GasSchedule = DEFAULT_SCHEDULE) -> ScenarioReport:
    venue = Venue(scenario["venue"])
    if scenario.get("requires_cancel") and venue is not Venue.CONTINUOUS_BOOK:
        return ScenarioReport(
            scenario["name"], int(scenario["row"]), venue.value, scenario.get("attacker", ""), 0, 0, 0, 0,
            Verdict.MITIGATED, [], [], note="not applicable: no cancellations in a call market",
        )
    attacker = scenario["attacker"]
    attack = execute(scenario, baseline=False, schedule=schedule)
    base = execute(scenario, baseline=True, schedule=schedule)
    profit = _take(attack, scenario, attacker) - _take(base, scenario, attacker)
    cost = attack.fees_paid.get(attacker, 0) - base.fees_paid.get(attacker, 0)
    disrupted = 0
    if scenario.get("objective") == "disruption":
        window = int(scenario["window_end"])
        disrupted = _volume_until(base, window) - _volume_until(attack, window)
        gain = disrupted
    else:
        gain = profit
    return ScenarioReport(
        scenario["name"],
        int(scenario["row"]),
        venue.value,
        attacker,
        profit,
        disrupted,
        cost,
        sum(attack.miner_income.values()),
        verdict_for(gain, cost),
        [_fill_dict(b, f) for b, f in attack.fills],
        [_fill_dict(b, f) for b, f in base.fills],
        baseline_miner_revenue=sum(base.miner_income.values()),
    )


def _fill_dict(block: int, fill) -> dict:
    d = fill.to_dict()
    d["block"] = block
    return d


# --------------------------------------------------------- built-in scenarios

ROWS = {
    1: "insertion",
    2: "displacement",
    3: "suppression",
    4: "hybrid",
    5: "suspend_market",
    6: "spoofing",
    7: "cancellation_griefing",
}
ROW_TITLES = {
    1: "Insertion: attacker maker order placed ahead of a victim taker",
    2: "Displacement: attacker taker races a victim taker",
    3: "Suppression: better competing maker order withheld",
    4: "Hybrid: insert, suppress and resell to capture the price improvement",
    5: "Suspend market: flood blocks to stop trading",
    6: "Spoofing: bait order cancelled ahead of the taker",
    7: "Cancellation griefing: victim cancel raced by a taker",
}
KNOWN_SCENARIOS = tuple(ROWS.values())
BULK = 10**9  # ether buffer for traders in templates


def _jitter(seed: int) -> tuple[int, int, random.Random]:
    rng = random.Random(seed)
    return 900 + rng.randrange(0, 600), 1 + rng.randrange(0, 5), rng


def _background(rng: random.Random, base: int, count: int = 3) -> tuple[dict, list[dict]]:
    """Bystander orders far from every scenario price, so they never cross."""
    balances, txs = {}, []
    for i in range(count):
        name = f"bystander{i}"
        vol = 1 + rng.randrange(0, 3)
        if i % 2 == 0:
            price = base - 300 - i
            balances[name] = {"ether": price * vol}
            txs.append({"id": f"bg{i}", "sender": name, "op": "bid", "price": price, "volume": vol, "arrival": 0})
        else:
            price = base + 500 + i
            balances[name] = {"token": vol}
            txs.append({"id": f"bg{i}", "sender": name, "op": "ask", "price": price, "volume": vol, "arrival": 0})
    return balances, txs


def scenario_config(name: str, venue: Venue | str, seed: int = 0, k_blocks: int | None = None) -> dict:
    """Declarative description of a built-in scenario for one venue."""
    if name not in KNOWN_SCENARIOS:
        raise ScenarioError(f"unknown scenario {name!r}; known: {', '.join(KNOWN_SCENARIOS)}")
    venue = Venue(venue)
    cb = venue is Venue.CONTINUOUS_BOOK
    b, v, rng = _jitter(seed)
    bg_bal, bg_txs = _background(rng, b)
    row = {n: r for r, n in ROWS.items()}[name]
    sc: dict[str, Any] = {"name": name, "row": row, "venue": venue.value, "attacker": "mallory", "seed": seed}

    if name == "insertion":
        sc.update(attacker_is_miner=True, reference_price=b, blocks=3, blocks_per_call=3)
        sc["balances"] = {
            "carol": {"token": v}, "dave": {"token": v}, "erin": {"token": v},
            "alice": {"ether": BULK}, "mallory": {"token": v},
        }
        sc["transactions"] = [
            {"id": "c1", "sender": "carol", "op": "ask", "price": b, "volume": v, "arrival": 0},
            {"id": "d1", "sender": "dave", "op": "ask", "price": b + 50, "volume": v, "arrival": 0},
            {"id": "alice1", "sender": "alice", "op": "bid", "price": b + 200, "volume": 3 * v, "arrival": 1, "role": "victim"},
            {"id": "e1", "sender": "erin", "op": "ask", "price": b + 80, "volume": v, "arrival": 1},
            {"id": "m1", "sender": "mallory", "op": "ask", "price": b + 200, "volume": v, "arrival": 1, "role": "attacker"},
        ]
        sc["policy"] = {"kind": "adversarial", "insert_before": {"m1": "alice1"}}

    elif name == "displacement":
        sc.update(attacker_is_miner=True, reference_price=b + 100, blocks=3, blocks_per_call=3)
        sc["balances"] = {"carol": {"token": v}, "bob": {"ether": BULK}, "mallory": {"ether": BULK}}
        sc["transactions"] = [
            {"id": "c1", "sender": "carol", "op": "ask", "price": b, "volume": v, "arrival": 0},
            {"id": "bob1", "sender": "bob", "op": "bid", "price": b + 50, "volume": v, "arrival": 1, "role": "victim"},
            {"id": "m1", "sender": "mallory", "op": "bid", "price": b + 40, "volume": v, "arrival": 1, "role": "attacker"},
        ]
        sc["policy"] = {"kind": "adversarial", "insert_before": {"m1": "bob1"}}

    elif name == "suppression":
        k = 2 if k_blocks is None else k_blocks
        calls = 3
        sc.update(attacker_is_miner=False, reference_price=b, k_blocks=k)
        sc["balances"] = {"mallory": {"token": v}, "alice": {"token": v}, "bob": {"ether": BULK}}
        bob = {"id": "bob1", "sender": "bob", "op": "bid", "price": b + 100, "volume": v}
        if cb:
            # Bob is a taker who arrives after Alice
            bob["arrival"] = 2
            sc.update(blocks=k + 4, blocks_per_call=k + 4)
        else:
            # every call-market trader is a maker; Bob is already in the book
            bob["arrival"] = 0
            sc.update(blocks=calls + k + 2, blocks_per_call=calls)
        sc["transactions"] = [
            {"id": "m1", "sender": "mallory", "op": "ask", "price": b + 50, "volume": v, "arrival": 0, "role": "attacker"},
            bob,
            {"id": "alice1", "sender": "alice", "op": "ask", "price": b + 20, "volume": v, "arrival": 1, "role": "victim"},
        ]
        if k:
            sc["transactions"].append(
                {"id": "flood", "sender": "mallory", "op": "spam", "arrival": 1, "count": k, "role": "tool"}
            )
        sc["policy"] = {"kind": "fee_priority"}

    elif name == "hybrid":
        sc.update(attacker_is_miner=True, reference_price=b)
        sc["balances"] = {"alice": {"token": v}, "bob": {"ether": BULK}, "mallory": {"ether": BULK}}
        if cb:
            sc.update(blocks=3, blocks_per_call=3)
            sc["transactions"] = [
                {"id": "alice1", "sender": "alice", "op": "ask", "price": b, "volume": v, "arrival": 0},
                {"id": "bob1", "sender": "bob", "op": "bid", "price": b + 200, "volume": v, "arrival": 1, "role": "victim"},
                {"id": "m1", "sender": "mallory", "op": "bid", "price": b, "volume": v, "arrival": 1, "role": "attacker"},
                {"id": "m2", "sender": "mallory", "op": "ask", "price": b + 200, "volume": v, "arrival": 1, "role": "attacker"},
            ]
            sc["policy"] = {"kind": "adversarial", "insert_before": {"m1": "bob1", "m2": "bob1"}}
        else:
            per_call = 2
            sc.update(blocks=2 * per_call, blocks_per_call=per_call)
            sc["transactions"] = [
                {"id": "alice1", "sender": "alice", "op": "ask", "price": b, "volume": v, "arrival": 0},
                {"id": "bob1", "sender": "bob", "op": "bid", "price": b + 200, "volume": v, "arrival": 0, "role": "victim"},
                {"id": "m1", "sender": "mallory", "op": "bid", "price": b, "volume": v, "arrival": 1, "role": "attacker"},
                {"id": "m2", "sender": "mallory", "op": "ask", "price": b + 200, "volume": v, "arrival": per_call, "role": "attacker"},
            ]
            # Bob's bid is held back until the next call opens
            sc["policy"] = {"kind": "adversarial", "censor": {"bob1": per_call}}

    elif name == "suspend_market":
        k = 3 if k_blocks is None else k_blocks
        sc.update(attacker_is_miner=False, reference_price=b, objective="disruption", window_end=k, k_blocks=k)
        sc["balances"] = {"carol": {"token": v}, "bob": {"ether": BULK}}
        if cb:
            sc.update(blocks=k + 3, blocks_per_call=k + 3)
        else:
            sc.update(blocks=2 * k + 2, blocks_per_call=k)
        sc["transactions"] = [
            {"id": "c1", "sender": "carol", "op": "ask", "price": b, "volume": v, "arrival": 0},
            {"id": "bob1", "sender": "bob", "op": "bid", "price": b + 10, "volume": v, "arrival": 1, "role": "victim"},
        ]
        if k:
            sc["transactions"].append(
                {"id": "flood", "sender": "mallory", "op": "spam", "arrival": 1, "count": k, "role": "tool"}
            )
        sc["policy"] = {"kind": "fee_priority"}

    elif name == "spoofing":
        sc.update(attacker_is_miner=True, reference_price=b, blocks=3, blocks_per_call=3, requires_cancel=True)
        sc["balances"] = {"mallory": {"token": 2 * v}, "alice": {"ether": BULK}}
        sc["transactions"] = [
            {"id": "bait", "sender": "mallory", "op": "ask", "price": b, "volume": v, "arrival": 0, "role": "attacker"},
            {"id": "m2", "sender": "mallory", "op": "ask", "price": b + 50, "volume": v, "arrival": 0, "role": "attacker"},
            {"id": "alice1", "sender": "alice", "op": "bid", "price": b + 50, "volume": v, "arrival": 1, "role": "victim"},
            {"id": "mcancel", "sender": "mallory", "op": "cancel", "target": "bait", "arrival": 1, "role": "attacker"},
        ]
        sc["policy"] = {"kind": "adversarial", "insert_before": {"mcancel": "alice1"}}

    elif name == "cancellation_griefing":
        sc.update(attacker_is_miner=True, reference_price=b + 100, blocks=3, blocks_per_call=3, requires_cancel=True)
        sc["balances"] = {"alice": {"token": v}, "mallory": {"ether": BULK}}
        sc["transactions"] = [
            {"id": "alice1", "sender": "alice", "op": "ask", "price": b, "volume": v, "arrival": 0},
            {"id": "acancel", "sender": "alice", "op": "cancel", "target": "alice1", "arrival": 1, "role": "victim"},
            {"id": "m1", "sender": "mallory", "op": "bid", "price": b, "volume": v, "arrival": 1, "role": "attacker"},
        ]
        sc["policy"] = {"kind": "adversarial", "insert_before": {"m1": "acancel"}}

    sc["balances"].update(bg_bal)
    sc["transactions"] = bg_txs + sc["transactions"]
    return sc


def run_scenario(
    name: str,
    venue: Venue | str,
    policy: MinerPolicy | None = None,
    *,
    seed: int = 0,
    k_blocks: int | None = None,
    schedule: GasSchedule = DEFAULT_SCHEDULE,
) -> ScenarioReport:
    """Run a built-in scenario. ``policy`` overrides the template's attack policy."""
    sc = scenario_config(name, venue, seed, k_blocks)
    if policy is not None:
        sc["policy"] = {
            "kind": policy.kind.value,
            "insert_before": dict(policy.insert_before),
            "censor": dict(policy.censor),
            "role": policy.role,
        }
    return evaluate(sc, schedule)


def suppression_scenario(k_blocks: int, venue: Venue | str = Venue.CALL_MARKET, *, seed: int = 0, schedule: GasSchedule = DEFAULT_SCHEDULE) -> ScenarioReport:
    report = evaluate(scenario_config("suppression", venue, seed, k_blocks), schedule)
    return report


def suppression_cost(k_blocks: int, schedule: GasSchedule = DEFAULT_SCHEDULE) -> int:
    """Gwei spent filling ``k_blocks`` whole blocks at the schedule's gas price."""
    return k_blocks * schedule.block_gas_limit * schedule.gas_price


def load_scenario(path: str | Path) -> dict:
    sc = json.loads(Path(path).read_text())
    for key in ("name", "row", "venue", "blocks", "transactions", "reference_price"):
        if key not in sc:
            raise ScenarioError(f"scenario file lacks {key!r}")
    return sc


VERDICT_VENUES = (Venue.CONTINUOUS_BOOK, Venue.CALL_MARKET)


def verdict_matrix(seed: int = 0, venues=VERDICT_VENUES, schedule: GasSchedule = DEFAULT_SCHEDULE) -> list[dict]:
    rows = []
    for row, name in ROWS.items():
        entry: dict[str, Any] = {"row": row, "attack": ROW_TITLES[row], "scenario": name}
        for venue in venues:
            entry[Venue(venue).value] = run_scenario(name, venue, seed=seed, schedule=schedule).verdict
        rows.append(entry)
    return rows


def verdict_matrix_csv(rows: list[dict], venues=VERDICT_VENUES) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Attack Example", *[_VENUE_HEADERS[Venue(v)] for v in venues]])
    for r in rows:
        w.writerow([r["attack"], *[f"{r[Venue(v).value].symbol} {r[Venue(v).value].value}" for v in venues]])
    return buf.getvalue()


_VENUE_HEADERS = {
    Venue.CONTINUOUS_BOOK: "On-chain Continuous Market",
    Venue.CALL_MARKET: "On-chain Call Market",
    Venue.CALL_MARKET_TRADER_IMPROVEMENT: "On-chain Call Market w/ Price Improvement",
}


# -------------------------------------------------------------- permutation audit


def _fill_key(f, with_traders: bool) -> tuple:
    base = (f.bid_price, f.ask_price, f.volume)
    return (*base, f.buyer, f.seller) if with_traders else base


def permutation_audit(
    book: list[Order],
    trials: int = 100,
    seed: int = 0,
    variant: Variant | str = Variant.HEAP_DYNAMIC_ARRAY,
) -> bool:
    """True iff shuffling submission order never changes the outcome.

    With distinct prices per side the full fill list (traders included) must
    match. With price ties only the value-level fill multiset must match.
    """
    from .market import run_book

    if not book:
        return True
    bids = [o.price for o in book if o.side is Side.BID]
    asks = [o.price for o in book if o.side is Side.ASK]
    distinct = len(set(bids)) == len(bids) and len(set(asks)) == len(asks)
    rng = random.Random(seed)

    def outcome(orders):
        market, fills, _ = run_book(orders, variant)
        keys = sorted(_fill_key(f, distinct) for f in fills)
        return keys, market.state.miner_revenue

    reference = outcome(book)
    for _ in range(trials):
        shuffled = list(book)
        rng.shuffle(shuffled)
        if outcome(shuffled) != reference:
            return False
    return True
