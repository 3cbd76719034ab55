"""Canonical length-prefixed encoding shared by every signed structure.

A *record* is the concatenation of its fields, each written as a 4-byte
big-endian length followed by the field bytes. Decoding must consume the
input exactly; anything else is a :class:`DecodeError`.
"""

from __future__ import annotations

import struct
from typing import Iterable, Mapping

_LEN = struct.Struct(">I")
_U64 = struct.Struct(">Q")


class DecodeError(ValueError):
    """Raised for any malformed canonical encoding."""


def record(*fields: bytes) -> bytes:
    out = bytearray()
    for f in fields:
        out += _LEN.pack(len(f))
        out += f
    return bytes(out)


def fields(data: bytes, count: int | None = None) -> list[bytes]:
    """Split a record back into its fields.

    When ``count`` is given the record must hold exactly that many fields.
    """
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise DecodeError("record must be bytes")
    view = memoryview(data)
    out: list[bytes] = []
    pos = 0
    end = len(view)
    while pos < end:
        if end - pos < 4:
            raise DecodeError("truncated length prefix")
        (n,) = _LEN.unpack_from(view, pos)
        pos += 4
        if n > end - pos:
            raise DecodeError("field overruns record")
        out.append(bytes(view[pos:pos + n]))
        pos += n
    if count is not None and len(out) != count:
        raise DecodeError(f"expected {count} fields, found {len(out)}")
    return out


def u64(value: int) -> bytes:
    if value < 0:
        raise ValueError("u64 fields are unsigned")
    return _U64.pack(value)


def read_u64(data: bytes) -> int:
    if len(data) != 8:
        raise DecodeError("u64 field must be 8 bytes")
    return _U64.unpack(data)[0]


def text(value: str) -> bytes:
    return value.encode("utf-8")


def read_text(data: bytes) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError("invalid utf-8") from exc


def string_map(mapping: Mapping[str, str]) -> bytes:
    """Encode a str->str map with keys in sorted byte order."""
    items = sorted((text(k), text(v)) for k, v in mapping.items())
    return record(*(part for kv in items for part in kv))


def read_string_map(data: bytes) -> dict[str, str]:
    parts = fields(data)
    if len(parts) % 2:
        raise DecodeError("map needs an even number of fields")
    keys = parts[0::2]
    if keys != sorted(keys) or len(set(keys)) != len(keys):
        raise DecodeError("map keys must be sorted and unique")
    return {read_text(k): read_text(v) for k, v in zip(keys, parts[1::2])}


def sequence(items: Iterable[bytes]) -> bytes:
    return record(*items)


def read_sequence(data: bytes) -> list[bytes]:
    return fields(data)


def flag(value: bool) -> bytes:
    return b"\x01" if value else b"\x00"


def read_flag(data: bytes) -> bool:
    if data not in (b"\x00", b"\x01"):
        raise DecodeError("flag must be 0x00 or 0x01")
    return data == b"\x01"


def field_spans(data: bytes, depth: int = 8) -> list[tuple[int, int]]:
    """(offset, length) of every length prefix and leaf field in ``data``.

    Nested records are descended opportunistically; bytes that merely look
    like a record are harmless extra spans. Used to drive tamper sweeps.
    """
    spans: list[tuple[int, int]] = []

    def walk(base: int, chunk: bytes, level: int) -> None:
        try:
            parts = fields(chunk)
        except DecodeError:
            spans.append((base, len(chunk)))
            return
        if not parts:
            spans.append((base, len(chunk)))
            return
        pos = base
        for part in parts:
            spans.append((pos, 4))
            if level < depth and len(part) >= 4:
                walk(pos + 4, part, level + 1)
            elif part:
                spans.append((pos + 4, len(part)))
            pos += 4 + len(part)

    walk(0, data, 0)
    return spans
