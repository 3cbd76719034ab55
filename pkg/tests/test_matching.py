"""Owner-side matching of requests against the portfolio."""

import random

from hypothesis import given, strategies as st

from dusc.protocol import match_request

from helpers import dots_for, verified_request

KINDS = ["heart-rate", "steps", "sleep"]


def _portfolio(source, owner, n=10, seed=0):
    rng = random.Random(seed)
    kinds = [rng.choice(KINDS) for _ in range(n)]
    return dots_for(source, owner.primary.public, n, meta=lambda i: {"type": kinds[i], "year": str(2020 + i % 4)})


def _vreq(requester, query, conditions=""):
    from dusc.protocol import make_m2, make_rt, verify_m2

    rt = make_rt(requester, query, conditions, 10, request_id="m")
    return verify_m2(make_m2(rt, [], requester).encode())


def test_three_of_ten_match_brute_force(source, owner, requester):
    kinds = ["heart-rate" if i in (1, 4, 8) else "steps" for i in range(10)]
    portfolio = dots_for(source, owner.primary.public, 10, meta=lambda i: {"type": kinds[i]})
    got = match_request(portfolio, {}, _vreq(requester, "type=heart-rate"))
    assert [d.data_id for d in got] == ["obj-1", "obj-4", "obj-8"]


def test_failed_conditions_match_nothing(source, owner, requester):
    portfolio = _portfolio(source, owner)
    assert list(match_request(portfolio, {"age": "12"}, _vreq(requester, "*", "age>=18"))) == []
    assert list(match_request(portfolio, {}, _vreq(requester, "*", "age>=18"))) == []
    assert len(match_request(portfolio, {"age": "30"}, _vreq(requester, "*", "age>=18"))) == 10


def test_empty_portfolio(requester):
    assert list(match_request([], {}, verified_request(requester))) == []


def test_bad_query_warns_instead_of_raising(source, owner, requester):
    m = match_request(_portfolio(source, owner), {}, _vreq(requester, "type=heart-rate AND"))
    assert list(m) == [] and m.warning


@given(kind=st.sampled_from(KINDS), year=st.integers(2019, 2024), seed=st.integers(0, 50))
def test_conjunction_matches_oracle(kind, year, seed):
    from dusc import crypto
    from dusc.protocol import OwnerKeys

    from helpers import key

    source, requester = key("m-src"), key("m-req")
    owner = OwnerKeys.generate(crypto.seed_from_label("m-owner"))
    portfolio = _portfolio(source, owner, seed=seed)
    got = match_request(portfolio, {}, _vreq(requester, f"type={kind} AND year>={year}"))
    want = [d for d in portfolio if d.metadata["type"] == kind and int(d.metadata["year"]) >= year]
    assert list(got) == want
