"""Chain-reading publisher with per-subscriber caches and ack-based delivery.

One reader walks the chain once per tick no matter how many subscribers
there are. Each transaction is tested against every subscription's Bloom
filter and appended to the matching caches. A cache entry leaves only
when the subscriber acknowledges a batch that covers its block, so a
crash between poll and ack loses nothing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from ..ledger.chain import BROADCAST, Block, Chain, Transaction
from .bloom import BloomFilter, build_filter

log = logging.getLogger(__name__)


class PubSubError(Exception):
    pass


class ReorgError(PubSubError):
    """The chain changed below blocks this publisher already read."""


@dataclass
class Subscription:
    subscriber_id: bytes
    identities: frozenset[bytes]
    start_block: int = 0
    include_broadcast: bool = False
    fp_rate: float = 0.001
    filter: BloomFilter = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.identities = frozenset(self.identities)
        keys = set(self.identities)
        if self.include_broadcast:
            keys.add(BROADCAST)
        self.filter = build_filter(sorted(keys), self.fp_rate)

    def wants(self, tx: Transaction) -> bool:
        """Exact (false-positive free) interest test."""
        if self.include_broadcast and tx.recipient == BROADCAST:
            return True
        return tx.sender in self.identities or tx.recipient in self.identities


@dataclass(frozen=True)
class DeliveryBatch:
    batch_id: int
    transactions: tuple[Transaction, ...]
    through_block: int


def filter_block(block: Block, bloom: BloomFilter) -> list[Transaction]:
    return [t for t in block.transactions if t.sender in bloom or t.recipient in bloom]


def exact_match(subscription: Subscription, batch: DeliveryBatch | Iterable[Transaction]) -> list[Transaction]:
    txs = batch.transactions if isinstance(batch, DeliveryBatch) else batch
    return [t for t in txs if subscription.wants(t)]


@dataclass
class _SubscriberState:
    subscription: Subscription
    acked_block: int
    cache: list[tuple[int, Transaction]] = field(default_factory=list)
    batches: dict[int, int] = field(default_factory=dict)
    stale: bool = False


class Publisher:
    def __init__(
        self,
        chain_source: Callable[[], Chain],
        *,
        high_water: int = 10_000,
        shared_recovery: bool = False,
    ) -> None:
        self.chain_source = chain_source
        self.high_water = high_water
        self.shared_recovery = shared_recovery
        self.cursor = 0
        self._last_hash: bytes | None = None
        self._subs: dict[int, _SubscriberState] = {}
        self._next_handle = 0
        self._next_batch = 0
        self.block_reads = 0
        self.recovery_reads = 0

    @property
    def subscriber_count(self) -> int:
        return len(self._subs)

    def _chain(self) -> Chain:
        chain = self.chain_source()
        if self.cursor:
            if len(chain) < self.cursor or chain[self.cursor - 1].block_hash != self._last_hash:
                raise ReorgError(f"chain reorganized below block {self.cursor - 1}")
        return chain

    def _append(self, st: _SubscriberState, block: Block) -> None:
        for tx in filter_block(block, st.subscription.filter):
            st.cache.append((block.index, tx))
        if len(st.cache) > self.high_water:
            log.warning("subscriber cache above high water (%d entries)", len(st.cache))

    def join(self, subscription: Subscription) -> int:
        chain = self._chain()
        if subscription.start_block > len(chain):
            raise PubSubError(
                f"start block {subscription.start_block} is beyond tip + 1 ({len(chain)})"
            )
        handle = self._next_handle
        self._next_handle += 1
        st = _SubscriberState(subscription, acked_block=subscription.start_block - 1)
        self._subs[handle] = st
        # history the live reader has already passed
        for block in chain.blocks[subscription.start_block:self.cursor]:
            self.recovery_reads += 1
            self._append(st, block)
        return handle

    def leave(self, handle: int) -> None:
        self._subs.pop(handle, None)

    def publish_tick(self) -> int:
        """Read newly appended blocks once and fan them out. Returns blocks read."""
        chain = self._chain()
        new = chain.blocks[self.cursor:]
        for block in new:
            self.block_reads += 1
            for st in self._subs.values():
                if block.index >= st.subscription.start_block:
                    self._append(st, block)
        if new:
            self.cursor = len(chain)
            self._last_hash = chain.tip.block_hash
        return len(new)

    def _state(self, handle: int) -> _SubscriberState:
        try:
            return self._subs[handle]
        except KeyError:
            raise PubSubError(f"unknown subscriber handle {handle}") from None

    def poll(self, handle: int) -> DeliveryBatch:
        st = self._state(handle)
        if st.stale:
            # never hand out (and later ack) an empty post-crash cache
            self.recover(handle)
        batch_id = self._next_batch
        self._next_batch += 1
        through = self.cursor - 1
        st.batches[batch_id] = through
        return DeliveryBatch(batch_id, tuple(tx for _, tx in st.cache), through)

    def ack(self, handle: int, batch_id: int) -> None:
        st = self._state(handle)
        if batch_id not in st.batches:
            raise PubSubError(f"batch {batch_id} was not issued to subscriber {handle}")
        through = st.batches[batch_id]
        st.cache = [(i, tx) for i, tx in st.cache if i > through]
        st.acked_block = max(st.acked_block, through)
        st.batches = {b: t for b, t in st.batches.items() if b > batch_id}

    def acked_block(self, handle: int) -> int:
        return self._state(handle).acked_block

    def cache_size(self, handle: int) -> int:
        return len(self._state(handle).cache)

    def crash(self) -> None:
        """Lose every cache; acknowledgment cursors survive."""
        for st in self._subs.values():
            st.cache.clear()
            st.batches.clear()
            st.stale = True

    def recover(self, handle: int) -> None:
        """Rebuild one cache by re-reading from the last acknowledged block."""
        st = self._state(handle)
        chain = self._chain()
        st.cache.clear()
        st.stale = False
        for block in chain.blocks[st.acked_block + 1:self.cursor]:
            self.recovery_reads += 1
            self._append(st, block)

    def recover_all(self, handles: Sequence[int] | None = None) -> None:
        handles = list(self._subs) if handles is None else list(handles)
        if not self.shared_recovery:
            for h in handles:
                self.recover(h)
            return
        # one pass from the oldest acknowledged position forward
        states = [self._state(h) for h in handles]
        if not states:
            return
        chain = self._chain()
        for st in states:
            st.cache.clear()
            st.stale = False
        oldest = min(st.acked_block for st in states) + 1
        for block in chain.blocks[oldest:self.cursor]:
            self.recovery_reads += 1
            for st in states:
                if block.index > st.acked_block:
                    self._append(st, block)


class Subscriber:
    """Client side of one subscription: poll, exact-match, acknowledge."""

    def __init__(self, publisher: Publisher, subscription: Subscription) -> None:
        self.publisher = publisher
        self.subscription = subscription
        self.handle = publisher.join(subscription)
        self.delivered: list[Transaction] = []
        self.crashes = 0

    def fetch(self, *, crash_before_ack: bool = False) -> list[Transaction]:
        batch = self.publisher.poll(self.handle)
        if crash_before_ack:
            self.crashes += 1
            return []
        txs = exact_match(self.subscription, batch)
        self.publisher.ack(self.handle, batch.batch_id)
        self.delivered.extend(txs)
        return txs

    def reattach(self) -> None:
        self.publisher.recover(self.handle)
