"""Gas-metered call market and the tooling used to evaluate it."""

from .gas_meter import DEFAULT_SCHEDULE, GasReceipt, GasSchedule, StorageArena, admit_to_block
from .market import CallMarket, Fill, Order, Side
from .pq import CleanupPolicy, Direction, QueueEntry, Variant, make_queue

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_SCHEDULE",
    "GasReceipt",
    "GasSchedule",
    "StorageArena",
    "admit_to_block",
    "CallMarket",
    "Fill",
    "Order",
    "Side",
    "CleanupPolicy",
    "Direction",
    "QueueEntry",
    "Variant",
    "make_queue",
]
