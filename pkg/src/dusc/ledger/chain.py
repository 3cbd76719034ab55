"""Transactions, blocks and hash-linked chains with proof-of-work."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

from .. import crypto
from .. import encoding as enc
from ..crypto import KeyPair

BROADCAST = b"*"
DEFAULT_MAX_TXS = 64


class LedgerError(Exception):
    pass


class InvalidBlock(LedgerError):
    def __init__(self, check: str, index: int | None = None) -> None:
        where = f" at block {index}" if index is not None else ""
        super().__init__(f"{check}{where}")
        self.check = check
        self.index = index


@dataclass(frozen=True)
class Transaction:
    sender: bytes
    recipient: bytes
    payload: bytes
    logical_time: int
    signature: bytes

    def body(self) -> bytes:
        return enc.record(
            b"dusc/tx", self.sender, self.recipient, self.payload, enc.u64(self.logical_time)
        )

    @cached_property
    def tx_id(self) -> bytes:
        return crypto.digest(self.body())

    def verify(self) -> bool:
        return crypto.verify(self.body(), self.signature, self.sender)

    @property
    def is_broadcast(self) -> bool:
        return self.recipient == BROADCAST

    def encode(self) -> bytes:
        return enc.record(
            self.sender, self.recipient, self.payload, enc.u64(self.logical_time), self.signature
        )

    @classmethod
    def decode(cls, data: bytes) -> "Transaction":
        sender, recipient, payload, t, sig = enc.fields(data, 5)
        return cls(sender, recipient, payload, enc.read_u64(t), sig)


def make_transaction(sender: KeyPair, recipient: bytes, payload: bytes, logical_time: int) -> Transaction:
    unsigned = Transaction(sender.public, recipient, payload, logical_time, b"")
    return Transaction(
        sender.public, recipient, payload, logical_time, crypto.signature(unsigned.body(), sender)
    )


def _hash_prefix(index: int, prev_hash: bytes, tx_ids: Iterable[bytes]) -> bytes:
    # the nonce is always the last field, so mining can reuse this prefix
    return enc.record(b"dusc/block", enc.u64(index), prev_hash, enc.sequence(tx_ids))


def block_hash(index: int, prev_hash: bytes, tx_ids: Sequence[bytes], nonce: int) -> bytes:
    prefix = _hash_prefix(index, prev_hash, tx_ids)
    return hashlib.sha256(prefix + enc.record(enc.u64(nonce))).digest()


def leading_zero_bits(h: bytes) -> int:
    n = int.from_bytes(h, "big")
    return len(h) * 8 - n.bit_length()


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: bytes
    transactions: tuple[Transaction, ...]
    nonce: int
    block_hash: bytes

    def compute_hash(self) -> bytes:
        return block_hash(self.index, self.prev_hash, [t.tx_id for t in self.transactions], self.nonce)

    def encode(self) -> bytes:
        return enc.record(
            enc.u64(self.index),
            self.prev_hash,
            enc.sequence(t.encode() for t in self.transactions),
            enc.u64(self.nonce),
            self.block_hash,
        )

    @classmethod
    def decode(cls, data: bytes) -> "Block":
        index, prev, txs, nonce, h = enc.fields(data, 5)
        return cls(
            enc.read_u64(index),
            prev,
            tuple(Transaction.decode(t) for t in enc.read_sequence(txs)),
            enc.read_u64(nonce),
            h,
        )


_GENESIS = Block(0, crypto.ZERO_DIGEST, (), 0, block_hash(0, crypto.ZERO_DIGEST, [], 0))


def genesis() -> Block:
    return _GENESIS


@dataclass(frozen=True)
class Chain:
    """Immutable snapshot of a block sequence starting at genesis."""

    blocks: tuple[Block, ...] = (_GENESIS,)

    def __len__(self) -> int:
        return len(self.blocks)

    def __getitem__(self, i):
        return self.blocks[i]

    def __iter__(self):
        return iter(self.blocks)

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    def append(self, block: Block) -> "Chain":
        return Chain(self.blocks + (block,))

    def tx_ids(self) -> set[bytes]:
        return {t.tx_id for b in self.blocks for t in b.transactions}

    def transactions(self) -> list[tuple[int, Transaction]]:
        return [(b.index, t) for b in self.blocks for t in b.transactions]


def mine(
    pending: Sequence[Transaction],
    prev: Block,
    difficulty: int,
    *,
    allow_empty: bool = False,
    max_txs: int = DEFAULT_MAX_TXS,
) -> Block:
    """Find the first nonce whose block hash has ``difficulty`` leading zero bits.

    Takes the oldest ``max_txs`` pending transactions.
    """
    if not pending and not allow_empty:
        raise LedgerError("nothing to mine and empty blocks are disabled")
    txs = tuple(pending[:max_txs])
    index = prev.index + 1
    base = hashlib.sha256(_hash_prefix(index, prev.block_hash, [t.tx_id for t in txs]))
    nonce = 0
    while True:
        h = base.copy()
        h.update(enc.record(enc.u64(nonce)))
        digest = h.digest()
        if leading_zero_bits(digest) >= difficulty:
            return Block(index, prev.block_hash, txs, nonce, digest)
        nonce += 1


def validate_block(block: Block, prev: Block, difficulty: int) -> None:
    """Raise :class:`InvalidBlock` naming the first failed check."""
    i = block.index
    if block.index != prev.index + 1:
        raise InvalidBlock("index", i)
    if block.prev_hash != prev.block_hash:
        raise InvalidBlock("prev-hash", i)
    seen = set()
    for tx in block.transactions:
        if not tx.verify():
            raise InvalidBlock("tx-signature", i)
        if tx.tx_id in seen:
            raise InvalidBlock("duplicate-tx", i)
        seen.add(tx.tx_id)
    if block.compute_hash() != block.block_hash:
        raise InvalidBlock("block-hash", i)
    if leading_zero_bits(block.block_hash) < difficulty:
        raise InvalidBlock("difficulty", i)


def validate_chain(chain: Chain | Sequence[Block], difficulty: int, *, start: int = 1) -> None:
    blocks = chain.blocks if isinstance(chain, Chain) else tuple(chain)
    if not blocks or blocks[0] != _GENESIS:
        raise InvalidBlock("genesis", 0)
    seen: set[bytes] = set()
    for b in blocks[1:start]:
        seen.update(t.tx_id for t in b.transactions)
    for k in range(max(start, 1), len(blocks)):
        validate_block(blocks[k], blocks[k - 1], difficulty)
        ids = {t.tx_id for t in blocks[k].transactions}
        if ids & seen:
            raise InvalidBlock("duplicate-tx", k)
        seen |= ids


def is_valid_chain(chain: Chain, difficulty: int) -> bool:
    try:
        validate_chain(chain, difficulty)
    except InvalidBlock:
        return False
    return True


def resolve(local: Chain, candidate: Chain, difficulty: int) -> Chain:
    """Longest valid chain wins; on equal length the local chain is kept."""
    if len(candidate) <= len(local):
        return local
    # blocks shared with the (already valid) local chain need no re-check
    common = 0
    for a, b in zip(local.blocks, candidate.blocks):
        if a is not b and a != b:
            break
        common += 1
    if common == 0:
        return local
    try:
        validate_chain(candidate, difficulty, start=common)
    except InvalidBlock:
        return local
    return candidate


def retrieve(chain: Chain, from_index: int, to_index: int | None = None) -> list[Block]:
    if from_index < 0:
        raise ValueError("from_index must be non-negative")
    return list(chain.blocks[from_index:to_index])
