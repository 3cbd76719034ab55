"""A tiny predicate dialect over string attribute maps.

    query      := "*" | term ( "AND" term )*
    term       := key op value
    op         := "=" | "!=" | "<" | "<=" | ">" | ">="

Values compare numerically when both sides parse as numbers, otherwise as
strings. A term over a missing attribute is false, never an error.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence

from .. import encoding as enc

MATCH_ALL = "*"

_TERM = re.compile(r"^\s*([A-Za-z0-9_.\-]+)\s*(!=|<=|>=|=|<|>)\s*(\S+?)\s*$")
_AND = re.compile(r"\s+AND\s+", re.IGNORECASE)


class QuerySyntaxError(ValueError):
    pass


@dataclass(frozen=True)
class Term:
    key: str
    op: str
    value: str

    def __str__(self) -> str:
        return f"{self.key}{self.op}{self.value}"

    def holds(self, attrs: Mapping[str, str]) -> bool:
        if self.key not in attrs:
            return False
        left = attrs[self.key]
        a, b = _num(left), _num(self.value)
        if a is not None and b is not None:
            lhs, rhs = a, b
        else:
            lhs, rhs = left, self.value
        if self.op == "=":
            return lhs == rhs
        if self.op == "!=":
            return lhs != rhs
        if self.op == "<":
            return lhs < rhs
        if self.op == "<=":
            return lhs <= rhs
        if self.op == ">":
            return lhs > rhs
        return lhs >= rhs

    def encode(self) -> bytes:
        return enc.record(enc.text(self.key), enc.text(self.op), enc.text(self.value))

    @classmethod
    def decode(cls, data: bytes) -> "Term":
        key, op, value = (enc.read_text(f) for f in enc.fields(data, 3))
        term = cls(key, op, value)
        try:
            ok = parse_terms(str(term)) == (term,)
        except QuerySyntaxError:
            ok = False
        if not ok:
            raise enc.DecodeError(f"malformed term {term}")
        return term


def _num(value: str) -> float | None:
    try:
        return float(value)
    except ValueError:
        return None


def parse_terms(text: str) -> tuple[Term, ...]:
    text = text.strip()
    if text == MATCH_ALL:
        return ()
    if not text:
        raise QuerySyntaxError("empty query")
    terms = []
    for chunk in _AND.split(text):
        m = _TERM.match(chunk)
        if not m:
            raise QuerySyntaxError(f"cannot parse term {chunk!r}")
        terms.append(Term(*m.groups()))
    return tuple(terms)


def evaluate(query: str, attrs: Mapping[str, str]) -> bool:
    """True when every term of ``query`` holds over ``attrs``."""
    return all(t.holds(attrs) for t in parse_terms(query))


def conditions_hold(conditions: Sequence[Term], profile: Mapping[str, str]) -> bool:
    return all(c.holds(profile) for c in conditions)


def parse_conditions(text: str) -> tuple[Term, ...]:
    if not text.strip():
        return ()
    return parse_terms(text)


def format_conditions(conditions: Sequence[Term]) -> str:
    return " AND ".join(map(str, conditions))
