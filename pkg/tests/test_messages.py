import dataclasses

import pytest

from dusc import crypto
from dusc import encoding as enc
from dusc.protocol import (
    M1,
    M2,
    M3,
    M4,
    M5,
    MessageType,
    OwnerKeys,
    ProtocolError,
    Rejected,
    decode_message,
    endorse,
    make_m1,
    make_m2,
    make_m3,
    make_m4,
    make_m5,
    make_rt,
    message_type,
    verify_m1,
    verify_m2,
    verify_m3,
    verify_m5,
)
from dusc.protocol.messages import VERSION

from helpers import HonestRun, dots_for, key, verified_request


@pytest.fixture(scope="module")
def run():
    return HonestRun()


def _check(exc_info):
    return exc_info.value.check


# -- framing ----------------------------------------------------------------


def test_every_message_round_trips_through_decode(run):
    expected = {"M1": M1, "M2": M2, "M3": M3, "M4": M4, "M5": M5}
    for name, raw in run.messages().items():
        msg = decode_message(raw)
        assert isinstance(msg, expected[name])
        assert msg.encode() == raw
        assert message_type(raw) is MessageType[name]
        assert raw[1] == VERSION


def test_unknown_header_is_rejected():
    assert message_type(b"\x09\x01") is None
    with pytest.raises(Rejected):
        decode_message(b"\x09\x01abc")
    with pytest.raises(Rejected):
        decode_message(b"")


def test_honest_run_is_accepted_by_every_recipient(run):
    for name, raw in run.messages().items():
        assert run.accepts(name, raw), name


# -- M1 ---------------------------------------------------------------------


def test_m1_opens_for_owner_only(source, owner):
    dot = dots_for(source, owner.primary.public, 1)[0]
    token = crypto.sign(source.public, owner.primary)
    raw = make_m1(source, owner.primary.public, token, dot).encode()
    assert verify_m1(raw, owner.primary) == dot
    with pytest.raises(Rejected) as exc:
        verify_m1(raw, owner.contact)
    assert _check(exc) == "seal"


def test_m1_with_token_from_another_owner_is_rejected(source, owner):
    other = OwnerKeys.generate(crypto.seed_from_label("other"))
    dot = dots_for(source, owner.primary.public, 1)[0]
    bad_token = crypto.sign(source.public, other.primary)
    raw = make_m1(source, owner.primary.public, bad_token, dot).encode()
    with pytest.raises(Rejected) as exc:
        verify_m1(raw, owner.primary)
    assert _check(exc) == "token"


def test_m1_token_naming_another_source_is_rejected(source, owner, stranger):
    dot = dots_for(source, owner.primary.public, 1)[0]
    token = crypto.sign(stranger.public, owner.primary)
    with pytest.raises(Rejected) as exc:
        verify_m1(make_m1(source, owner.primary.public, token, dot).encode(), owner.primary)
    assert _check(exc) == "token"


def test_make_m1_refuses_mismatched_dot(source, owner, stranger):
    dot = dots_for(source, owner.primary.public, 1)[0]
    with pytest.raises(ProtocolError):
        make_m1(source, stranger.public, crypto.sign(source.public, owner.primary), dot)


# -- M2 ---------------------------------------------------------------------


def test_m2_with_one_trusted_endorsement(requester):
    rt = make_rt(requester, "type=hr", request_id="r")
    e = key("e1")
    vreq = verify_m2(make_m2(rt, endorse(rt, [], e, "ok"), requester).encode(), {e.public})
    assert len(vreq.trusted) == 1 and vreq.untrusted == []
    assert vreq.requester == requester.public


def test_m2_partitions_trusted_and_untrusted(requester):
    rt = make_rt(requester, "*", request_id="r")
    endorsers = [key(f"e{i}") for i in range(10)]
    chain = []
    for e in endorsers:
        chain = endorse(rt, chain, e, "ok")
    trusted = {e.public for e in endorsers[:7]}
    vreq = verify_m2(make_m2(rt, chain, requester).encode(), trusted)
    assert (len(vreq.trusted), len(vreq.untrusted)) == (7, 3)


def test_m2_outer_signer_must_match_rt(requester, stranger):
    rt = make_rt(requester, "*", request_id="r")
    with pytest.raises(ProtocolError):
        make_m2(rt, [], stranger)
    # forge by hand: stranger re-signs a bundle carrying someone else's RT
    unsigned = M2((), rt, (), stranger.public)
    forged = dataclasses.replace(unsigned, signature=crypto.signature(unsigned.body(), stranger))
    with pytest.raises(Rejected) as exc:
        verify_m2(forged.encode())
    assert _check(exc) == "requester-mismatch"


def test_m2_endorser_key_list_must_match_chain(requester):
    rt = make_rt(requester, "*", request_id="r")
    chain = endorse(rt, [], key("e1"), "ok")
    unsigned = M2(tuple(chain), rt, (key("e2").public,), requester.public)
    m2 = dataclasses.replace(unsigned, signature=crypto.signature(unsigned.body(), requester))
    with pytest.raises(Rejected) as exc:
        verify_m2(m2.encode())
    assert _check(exc) == "endorser-keys"


def test_m2_untrusted_endorsements_never_reject(requester):
    rt = make_rt(requester, "*", request_id="r")
    chain = endorse(rt, [], key("nobody-knows-me"), "ok")
    vreq = verify_m2(make_m2(rt, chain, requester).encode(), set())
    assert vreq.trusted == [] and len(vreq.untrusted) == 1


# -- M3 ---------------------------------------------------------------------


def test_m3_round_trip(source, owner, requester):
    dots = dots_for(source, owner.primary.public, 3)
    vreq = verified_request(requester)
    bundle = verify_m3(make_m3(owner, [(d, "type=hr") for d in dots], vreq).encode(), requester)
    assert [i.data_id for i in bundle.items] == ["obj-0", "obj-1", "obj-2"]
    assert all(i.source == source.public for i in bundle.items)
    assert bundle.contact == owner.contact.public
    # the DAT interior stays sealed to the source
    with pytest.raises(crypto.SealError):
        crypto.open(bundle.items[0].dat, requester)


def test_m3_refuses_foreign_dot(source, owner, requester, stranger):
    dot = dots_for(source, stranger.public, 1)[0]
    with pytest.raises(ProtocolError):
        make_m3(owner, [(dot, "*")], verified_request(requester))


def test_m3_for_another_requester_does_not_open(source, owner, requester, stranger):
    dots = dots_for(source, owner.primary.public, 1)
    raw = make_m3(owner, [(dots[0], "*")], verified_request(requester)).encode()
    with pytest.raises(Rejected) as exc:
        verify_m3(raw, stranger)
    assert _check(exc) == "seal"


def test_m3_dropping_an_item_breaks_the_checksum(source, owner, requester):
    dots = dots_for(source, owner.primary.public, 2)
    m3 = make_m3(owner, [(d, "*") for d in dots], verified_request(requester))
    partial = dataclasses.replace(m3, items=m3.items[:1])
    with pytest.raises(Rejected) as exc:
        verify_m3(partial.encode(), requester)
    assert _check(exc) in {"trailer-sig", "checksum"}


# -- M4 / M5 ------------------------------------------------------------------


def test_make_m4_needs_dats(requester, source):
    with pytest.raises(ValueError):
        make_m4([], requester, source.public)


def test_m5_is_for_the_callback_identity_only(run):
    rec = verify_m5(run.m5, run.owner.callback)
    assert rec.data_id == "obj-0" and rec.grantee == run.requester.public
    assert rec.logical_time == 3 and rec.request_id == "hr-1"
    with pytest.raises(Rejected):
        verify_m5(run.m5, run.owner.primary)


def test_m5_requires_source_signature(run):
    from dusc.protocol.messages import _announcement_body
    from dusc.protocol import DataAccessTicket

    inner = crypto.open(M5.decode(run.m5).sealed, run.owner.callback)
    source, dot, grant, t, _ = enc.fields(inner, 5)
    forger = key("forger")
    sig = crypto.signature(_announcement_body(source, dot, grant, t), forger)
    forged = M5(crypto.seal(enc.record(source, dot, grant, t, sig), run.owner.callback.public))
    with pytest.raises(Rejected) as exc:
        verify_m5(forged.encode(), run.owner.callback)
    assert _check(exc) == "source-sig"
    assert DataAccessTicket  # imported for readers following the structure


# -- tamper sweep ---------------------------------------------------------------


@pytest.mark.parametrize("name", ["M1", "M2", "M3", "M4", "M5"])
def test_single_byte_flips_are_all_rejected(run, name):
    from helpers import flips

    raw = run.messages()[name]
    accepted = [pos for pos, bad in flips(raw) if run.accepts(name, bad)]
    assert accepted == []
