"""Seeded, single-threaded simulation of a small mining network.

Nodes form a full mesh. Every broadcast is scheduled onto a priority queue
with a seeded random delay (and optional drop), so a run is a pure
function of its seed and inputs. Block announcements carry the sender's
whole chain snapshot; receivers adopt it under the longest-chain rule.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import random
from dataclasses import dataclass, field

from .chain import (
    DEFAULT_MAX_TXS,
    Chain,
    LedgerError,
    Transaction,
    mine,
    resolve,
)

log = logging.getLogger(__name__)


class Clock:
    """Per-run monotone logical clock."""

    def __init__(self) -> None:
        self.now = 0

    def tick(self) -> int:
        self.now += 1
        return self.now


@dataclass
class Node:
    node_id: int
    miner: bool = True
    chain: Chain = field(default_factory=Chain)
    seen: dict[bytes, Transaction] = field(default_factory=dict)
    rejected: int = 0

    def pending(self) -> list[Transaction]:
        """Seen but not yet on this node's chain, oldest first."""
        on_chain = self.chain.tx_ids()
        return [t for tid, t in self.seen.items() if tid not in on_chain]

    def accept_tx(self, tx: Transaction) -> bool:
        if tx.tx_id in self.seen:
            return False
        if not tx.verify():
            self.rejected += 1
            return False
        self.seen[tx.tx_id] = tx
        return True

    def accept_chain(self, candidate: Chain, difficulty: int) -> bool:
        adopted = resolve(self.chain, candidate, difficulty)
        if adopted is self.chain:
            return False
        # transactions first seen inside a block still count as seen
        for _, tx in adopted.transactions():
            self.seen.setdefault(tx.tx_id, tx)
        self.chain = adopted
        return True


class NetworkSim:
    def __init__(
        self,
        nodes: int = 3,
        *,
        miners: int | None = None,
        seed: int = 0,
        difficulty: int = 8,
        delay: tuple[int, int] = (1, 5),
        drop_rate: float = 0.0,
        max_txs: int = DEFAULT_MAX_TXS,
        clock: Clock | None = None,
    ) -> None:
        if nodes < 1:
            raise ValueError("need at least one node")
        miners = nodes if miners is None else miners
        self.nodes = [Node(i, miner=i < miners) for i in range(nodes)]
        self.rng = random.Random(seed)
        self.difficulty = difficulty
        self.delay = delay
        self.drop_rate = drop_rate
        self.max_txs = max_txs
        self.clock = clock or Clock()
        self._queue: list = []
        self._seq = itertools.count()
        self.time = 0
        self.delivered = 0
        self.dropped = 0
        self.blocks_mined = 0

    # -- messaging --------------------------------------------------------

    def _schedule(self, src: int, kind: str, item) -> None:
        for node in self.nodes:
            if node.node_id == src:
                continue
            if self.drop_rate and self.rng.random() < self.drop_rate:
                self.dropped += 1
                continue
            at = self.time + self.rng.randint(*self.delay)
            heapq.heappush(self._queue, (at, next(self._seq), node.node_id, kind, item))

    def submit(self, node_id: int, tx: Transaction) -> bool:
        """Ingress at ``node_id``; invalid signatures are not propagated."""
        node = self.nodes[node_id]
        if not tx.verify():
            node.rejected += 1
            raise LedgerError("transaction signature invalid")
        if node.accept_tx(tx):
            self._schedule(node_id, "tx", tx)
            return True
        return False

    def step(self) -> bool:
        if not self._queue:
            return False
        at, _, dst, kind, item = heapq.heappop(self._queue)
        self.time = max(self.time, at)
        node = self.nodes[dst]
        self.delivered += 1
        if kind == "tx":
            node.accept_tx(item)
        elif node.accept_chain(item, self.difficulty):
            # relay so that partially dropped announcements still spread
            self._schedule(dst, "chain", node.chain)
        return True

    def drain(self) -> int:
        n = 0
        while self.step():
            n += 1
        return n

    # -- mining -----------------------------------------------------------

    def mine_on(self, node_id: int, *, allow_empty: bool = False) -> bool:
        node = self.nodes[node_id]
        pending = node.pending()
        if not pending and not allow_empty:
            return False
        block = mine(pending, node.chain.tip, self.difficulty,
                     allow_empty=allow_empty, max_txs=self.max_txs)
        node.chain = node.chain.append(block)
        self.blocks_mined += 1
        self._schedule(node_id, "chain", node.chain)
        return True

    def mine_round(self, race: int = 1) -> int:
        """Let up to ``race`` miners with work mine before anything is delivered."""
        ready = [n.node_id for n in self.nodes if n.miner and n.pending()]
        if not ready:
            return 0
        chosen = self.rng.sample(ready, min(race, len(ready)))
        return sum(self.mine_on(i) for i in chosen)

    def converged(self) -> bool:
        first = self.nodes[0].chain
        return all(n.chain == first for n in self.nodes[1:])

    def quiescent(self) -> bool:
        return not self._queue and self.converged() and not any(n.pending() for n in self.nodes)

    def run_until_quiescent(self, race: int = 1, max_rounds: int = 10_000) -> None:
        """Deliver and mine until every node holds the same chain and no
        transaction is pending.

        ``race > 1`` lets several miners work on the same tip, which forks
        the chain until a longer branch wins. When chains differ but nobody
        has work left, one empty block is mined to break the tie.
        """
        miners = [n.node_id for n in self.nodes if n.miner]
        if not miners:
            raise LedgerError("network has no miners")
        for _ in range(max_rounds):
            self.drain()
            if self.quiescent():
                return
            if not self.mine_round(race):
                if self.converged():
                    return  # nothing pending anywhere
                longest = max(self.nodes, key=lambda n: (len(n.chain), -n.node_id))
                winner = longest.node_id if longest.miner else self.rng.choice(miners)
                log.debug("tie-break block on node %d", winner)
                self.mine_on(winner, allow_empty=True)
                race = 1
        raise LedgerError("network did not reach quiescence")
