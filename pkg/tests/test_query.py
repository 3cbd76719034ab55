import pytest
from hypothesis import given
from hypothesis import strategies as st

from dusc.protocol.query import (
    QuerySyntaxError,
    Term,
    conditions_hold,
    evaluate,
    format_conditions,
    parse_conditions,
    parse_terms,
)


def test_match_all():
    assert parse_terms("*") == ()
    assert evaluate("*", {})


@pytest.mark.parametrize(
    "query,attrs,expected",
    [
        ("type=hr", {"type": "hr"}, True),
        ("type=hr", {"type": "steps"}, False),
        ("type!=hr", {"type": "steps"}, True),
        ("age>=18", {"age": "18"}, True),
        ("age>18", {"age": "18"}, False),
        ("age<18", {"age": "9"}, True),  # numeric, not lexicographic
        ("age<=9.5", {"age": "9.5"}, True),
        ("type=hr AND unit=bpm", {"type": "hr", "unit": "bpm"}, True),
        ("type=hr and unit=bpm", {"type": "hr", "unit": "mmHg"}, False),
        ("name<b", {"name": "alice"}, True),  # string comparison fallback
        ("type=hr", {}, False),  # missing attribute is false, not an error
    ],
)
def test_evaluate(query, attrs, expected):
    assert evaluate(query, attrs) is expected


@pytest.mark.parametrize("bad", ["", "type", "=x", "a=b AND", "a ~ b"])
def test_syntax_errors(bad):
    with pytest.raises(QuerySyntaxError):
        parse_terms(bad)


def test_conditions():
    conds = parse_conditions("age>=18 AND country=NL")
    assert format_conditions(conds) == "age>=18 AND country=NL"
    assert conditions_hold(conds, {"age": "40", "country": "NL"})
    assert not conditions_hold(conds, {"age": "40"})
    assert parse_conditions("  ") == ()
    assert conditions_hold((), {})


def test_term_decode_rejects_unparseable_terms():
    from dusc import encoding as enc

    raw = enc.record(b"a b", b"=", b"c")
    with pytest.raises(enc.DecodeError):
        Term.decode(raw)


_key = st.from_regex(r"[a-z][a-z0-9_]{0,6}", fullmatch=True)
_val = st.from_regex(r"[a-z0-9.]{1,6}", fullmatch=True)


@given(_key, st.sampled_from(["=", "!=", "<", "<=", ">", ">="]), _val)
def test_term_round_trip(key, op, value):
    t = Term(key, op, value)
    assert parse_terms(str(t)) == (t,)
    assert Term.decode(t.encode()) == t


@given(st.integers(-1000, 1000), st.integers(-1000, 1000))
def test_numeric_comparison_matches_python(a, b):
    assert evaluate(f"x<{b}", {"x": str(a)}) is (a < b)
    assert evaluate(f"x>={b}", {"x": str(a)}) is (a >= b)
