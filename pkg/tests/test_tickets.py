import dataclasses

import pytest

from dusc import crypto
from dusc.protocol import (
    DapKind,
    DataAccessPath,
    DataObjectTicket,
    DuplicateDataId,
    Endorsement,
    OwnerKeys,
    ProtocolError,
    Rejected,
    RequestTicket,
    endorse,
    make_dot,
    make_rt,
    verify_chain,
    verify_dot,
    verify_rt,
)

from helpers import dap, dots_for, key


def test_dap_parse_and_kinds():
    d = DataAccessPath.parse("record-locator:ward-3/bed-7")
    assert d.kind is DapKind.RECORD_LOCATOR
    assert str(d) == "record-locator:ward-3/bed-7"
    assert DataAccessPath.decode(d.encode()) == d
    assert {k.value for k in DapKind} == {"url", "record-locator", "contact", "instructions", "physical-location"}
    with pytest.raises(ValueError):
        DataAccessPath.parse("ftp:somewhere")
    with pytest.raises(ValueError):
        DataAccessPath.parse("url:")
    with pytest.raises(ValueError):
        DataAccessPath.parse("no-colon")


def test_dot_round_trip_and_verify(source, owner):
    dot = make_dot(source, owner.primary.public, "d1", {"type": "hr"}, dap())
    assert verify_dot(dot)
    assert DataObjectTicket.decode(dot.encode()) == dot


def test_dot_under_another_source_key_fails(source, owner, stranger):
    dot = make_dot(source, owner.primary.public, "d1", {"type": "hr"}, dap())
    assert not verify_dot(dataclasses.replace(dot, source=stranger.public))


def test_dot_field_tamper_fails(source, owner, stranger):
    dot = make_dot(source, owner.primary.public, "d1", {"type": "hr"}, dap())
    for change in ({"data_id": "d2"}, {"owner": stranger.public}, {"metadata": {"type": "x"}},
                   {"dap": dap(9)}):
        assert not verify_dot(dataclasses.replace(dot, **change))


def test_duplicate_data_id_is_refused(source, owner):
    make_dot(source, owner.primary.public, "d1", {}, dap())
    with pytest.raises(DuplicateDataId):
        make_dot(source, owner.primary.public, "d1", {}, dap(), known_ids={"d1"})
    with pytest.raises(ValueError):
        make_dot(source, owner.primary.public, "", {}, dap())


def test_hundred_dots_for_ten_owners(source):
    owners = [key(f"o{i}") for i in range(10)]
    dots = []
    for i in range(100):
        o = owners[i % 10]
        dots.append((o, make_dot(source, o.public, f"d{i}", {"n": str(i)}, dap(i))))
    # exhaustive re-verification
    assert all(verify_dot(d) and d.owner == o.public for o, d in dots)
    assert len({d.data_id for _, d in dots}) == 100


def test_rt_signature_and_duration(requester, stranger):
    rt = make_rt(requester, "type=hr", "age>=18", 60, {"purpose": "study"})
    assert verify_rt(rt)
    assert RequestTicket.decode(rt.encode()) == rt
    assert not verify_rt(dataclasses.replace(rt, query="*"))
    assert not verify_rt(dataclasses.replace(rt, requester=stranger.public))
    for bad in (0, -5):
        with pytest.raises(ValueError):
            make_rt(requester, "*", "", bad)


def test_rt_ids_are_fresh(requester):
    assert make_rt(requester, "*").request_id != make_rt(requester, "*").request_id


def test_endorsement_chain(requester):
    rt = make_rt(requester, "*", request_id="r")
    e1, e2 = key("e1"), key("e2")
    one = endorse(rt, [], e1, "ok")
    assert len(one) == 1
    verify_chain(rt, one)
    two = endorse(rt, one, e2, "also ok")
    verify_chain(rt, two)
    assert Endorsement.decode(two[1].encode()) == two[1]


def test_swapped_endorsements_fail(requester):
    rt = make_rt(requester, "*", request_id="r")
    chain = endorse(rt, endorse(rt, [], key("e1"), "a"), key("e2"), "b")
    with pytest.raises(Rejected) as exc:
        verify_chain(rt, list(reversed(chain)))
    assert exc.value.check == "endorsement"


def test_endorsement_over_another_rt_fails(requester):
    rt = make_rt(requester, "*", request_id="r")
    other = make_rt(requester, "type=hr", request_id="r")
    chain = endorse(rt, [], key("e1"), "ok")
    with pytest.raises(Rejected):
        verify_chain(other, chain)


def test_endorse_refuses_invalid_prior_chain(requester):
    rt = make_rt(requester, "*", request_id="r")
    chain = endorse(rt, [], key("e1"), "ok")
    broken = [dataclasses.replace(chain[0], feedback="changed")]
    with pytest.raises(ProtocolError):
        endorse(rt, broken, key("e2"), "ok")


def test_owner_keys_are_three_distinct_identities():
    keys = OwnerKeys.generate(crypto.seed_from_int(3))
    pubs = {keys.primary.public, keys.contact.public, keys.callback.public}
    assert len(pubs) == 3
    assert OwnerKeys.generate(crypto.seed_from_int(3)) == keys


def test_dots_for_helper_builds_valid_tickets(source, owner):
    assert all(verify_dot(d) for d in dots_for(source, owner.primary.public, 4))
