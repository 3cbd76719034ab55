"""Plain Bloom filter sized from capacity and target false-positive rate."""

from __future__ import annotations

import hashlib
import math
import struct
from typing import Iterable

_LN2 = math.log(2)
_WORDS = struct.Struct("<Q")


def optimal_bits(n: int, p: float) -> int:
    return math.ceil(-n * math.log(p) / (_LN2 * _LN2))


def optimal_hashes(m: int, n: int) -> int:
    return max(1, math.ceil(m / n * _LN2))


class BloomFilter:
    """Set membership with no false negatives.

    The k bit positions are independent 64-bit words cut from one
    SHAKE-128 output over the key. (Double hashing is cheaper but its
    positions correlate noticeably when m is only a few thousand bits.)
    """

    def __init__(self, capacity: int, target_fp_rate: float = 0.001) -> None:
        if capacity < 1:
            raise ValueError("capacity must be positive")
        if not 0 < target_fp_rate < 1:
            raise ValueError("target_fp_rate must lie in (0, 1)")
        self.capacity = capacity
        self.target_fp_rate = target_fp_rate
        self.size = optimal_bits(capacity, target_fp_rate)
        self.hash_count = optimal_hashes(self.size, capacity)
        self.bits = bytearray((self.size + 7) // 8)
        self.inserted_count = 0

    def _positions(self, key: bytes) -> list[int]:
        d = hashlib.shake_128(key).digest(8 * self.hash_count)
        m = self.size
        return [w % m for (w,) in _WORDS.iter_unpack(d)]

    def add(self, key: bytes) -> None:
        bits = self.bits
        for pos in self._positions(key):
            bits[pos >> 3] |= 1 << (pos & 7)
        self.inserted_count += 1

    def update(self, keys: Iterable[bytes]) -> None:
        for k in keys:
            self.add(k)

    def __contains__(self, key: bytes) -> bool:
        bits = self.bits
        m = self.size
        for (w,) in _WORDS.iter_unpack(hashlib.shake_128(key).digest(8 * self.hash_count)):
            pos = w % m
            if not bits[pos >> 3] & (1 << (pos & 7)):
                return False
        return True

    def __repr__(self) -> str:
        return (
            f"BloomFilter(m={self.size}, k={self.hash_count}, "
            f"n={self.inserted_count}/{self.capacity}, p={self.target_fp_rate})"
        )


def build_filter(identities: Iterable[bytes], target_fp_rate: float = 0.001) -> BloomFilter:
    keys = list(dict.fromkeys(identities))
    if not keys:
        raise ValueError("a filter over no identities matches nothing")
    bloom = BloomFilter(len(keys), target_fp_rate)
    bloom.update(keys)
    return bloom
