"""Chain persistence as a length-prefixed binary log.

    file  := MAGIC (8 bytes, b"DUSCCHN1") entry*
    entry := length (4 bytes, big-endian) block_record

Blocks are written in index order starting with genesis. A truncated
trailing entry is an error, not silently dropped.
"""

from __future__ import annotations

import struct
from pathlib import Path

from ..encoding import DecodeError
from .chain import Block, Chain, validate_chain

MAGIC = b"DUSCCHN1"
_LEN = struct.Struct(">I")


class ChainFileError(ValueError):
    pass


def dump_chain(chain: Chain) -> bytes:
    out = bytearray(MAGIC)
    for block in chain.blocks:
        raw = block.encode()
        out += _LEN.pack(len(raw)) + raw
    return bytes(out)


def parse_chain(data: bytes) -> Chain:
    if not data.startswith(MAGIC):
        raise ChainFileError("not a dusc chain log")
    pos = len(MAGIC)
    blocks = []
    while pos < len(data):
        if len(data) - pos < 4:
            raise ChainFileError("truncated entry header")
        (n,) = _LEN.unpack_from(data, pos)
        pos += 4
        if len(data) - pos < n:
            raise ChainFileError("truncated block entry")
        try:
            blocks.append(Block.decode(data[pos:pos + n]))
        except DecodeError as exc:
            raise ChainFileError(f"block entry {len(blocks)}: {exc}") from exc
        pos += n
    return Chain(tuple(blocks))


def save_chain(chain: Chain, path: str | Path) -> None:
    Path(path).write_bytes(dump_chain(chain))


def load_chain(path: str | Path, difficulty: int | None = None) -> Chain:
    """Read a chain log; validate it when ``difficulty`` is given."""
    chain = parse_chain(Path(path).read_bytes())
    if difficulty is not None:
        validate_chain(chain, difficulty)
    return chain
