"""The five access-control messages and their create/verify pairs.

Every message serializes as ``type_tag (1 byte) || version (1 byte) ||
record``. Verification functions accept either the parsed message or its
serialized bytes and raise :class:`Rejected` naming the failed check.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

from .. import crypto
from .. import encoding as enc
from ..crypto import KeyPair, SealedEnvelope, SignedEnvelope
from .tickets import (
    DataAccessPath,
    DataAccessTicket,
    DataObjectTicket,
    Endorsement,
    Grant,
    OwnerKeys,
    ProtocolError,
    Rejected,
    RequestTicket,
    VerifiedRequest,
    sign_grant,
    verify_chain,
    verify_dot,
    verify_rt,
)

VERSION = 1


class MessageType(enum.IntEnum):
    M1 = 1
    M2 = 2
    M3 = 3
    M4 = 4
    M5 = 5


def frame(tag: MessageType, body: bytes) -> bytes:
    return bytes([tag, VERSION]) + body


def unframe(data: bytes, tag: MessageType) -> bytes:
    if len(data) < 2 or data[0] != tag:
        raise Rejected("header", f"not a {tag.name} message")
    if data[1] != VERSION:
        raise Rejected("header", f"unsupported version {data[1]}")
    return data[2:]


def message_type(data: bytes) -> MessageType | None:
    if len(data) < 2 or data[1] != VERSION:
        return None
    try:
        return MessageType(data[0])
    except ValueError:
        return None


def _parse(cls, data):
    if isinstance(data, cls):
        return data
    try:
        return cls.decode(data)
    except (enc.DecodeError, ValueError) as exc:
        raise Rejected("malformed", str(exc)) from exc


# -- M1: source -> owner ---------------------------------------------------


@dataclass(frozen=True)
class M1:
    sealed: SealedEnvelope

    def encode(self) -> bytes:
        return frame(MessageType.M1, self.sealed.encode())

    @classmethod
    def decode(cls, data: bytes) -> "M1":
        return cls(SealedEnvelope.decode(unframe(data, MessageType.M1)))


def make_m1(
    source: KeyPair, owner: bytes, registration_token: SignedEnvelope, dot: DataObjectTicket
) -> M1:
    if dot.source != source.public or dot.owner != owner:
        raise ProtocolError("DOT does not match source and owner")
    inner = enc.record(dot.encode(), registration_token.encode())
    return M1(crypto.seal(inner, owner))


def verify_m1(m1: M1 | bytes, owner: KeyPair) -> DataObjectTicket:
    m1 = _parse(M1, m1)
    try:
        inner = crypto.open(m1.sealed, owner)
    except crypto.SealError as exc:
        raise Rejected("seal", str(exc)) from exc
    try:
        dot_raw, token_raw = enc.fields(inner, 2)
        dot = DataObjectTicket.decode(dot_raw)
        token = SignedEnvelope.decode(token_raw)
    except (enc.DecodeError, ValueError) as exc:
        raise Rejected("malformed", str(exc)) from exc
    if token.signer != owner.public or not token.verify():
        raise Rejected("token", "registration token not signed by this owner")
    if token.payload != dot.source:
        raise Rejected("token", "token names a different source")
    if not verify_dot(dot):
        raise Rejected("dot-sig")
    if dot.owner != owner.public:
        raise Rejected("owner", "DOT names a different owner")
    return dot


# -- M2: requester -> * ----------------------------------------------------


@dataclass(frozen=True)
class M2:
    chain: tuple[Endorsement, ...]
    rt: RequestTicket
    endorser_keys: tuple[bytes, ...]
    requester: bytes
    signature: bytes = b""

    def _fields(self) -> tuple[bytes, ...]:
        return (
            enc.sequence(e.encode() for e in self.chain),
            self.rt.encode(),
            enc.sequence(self.endorser_keys),
            self.requester,
        )

    def body(self) -> bytes:
        return enc.record(b"dusc/m2", *self._fields())

    def encode(self) -> bytes:
        return frame(MessageType.M2, enc.record(*self._fields(), self.signature))

    @classmethod
    def decode(cls, data: bytes) -> "M2":
        chain, rt, keys, requester, sig = enc.fields(unframe(data, MessageType.M2), 5)
        return cls(
            tuple(Endorsement.decode(e) for e in enc.read_sequence(chain)),
            RequestTicket.decode(rt),
            tuple(enc.read_sequence(keys)),
            requester,
            sig,
        )


def make_m2(rt: RequestTicket, chain: Sequence[Endorsement], requester: KeyPair) -> M2:
    if rt.requester != requester.public:
        raise ProtocolError("request ticket belongs to another requester")
    unsigned = M2(tuple(chain), rt, tuple(e.endorser for e in chain), requester.public)
    return M2(unsigned.chain, rt, unsigned.endorser_keys, requester.public,
              crypto.signature(unsigned.body(), requester))


def verify_m2(m2: M2 | bytes, trusted_endorser_roots: Iterable[bytes] = ()) -> VerifiedRequest:
    m2 = _parse(M2, m2)
    if not crypto.verify(m2.body(), m2.signature, m2.requester):
        raise Rejected("outer-sig")
    if not verify_rt(m2.rt):
        raise Rejected("rt-sig")
    if m2.rt.requester != m2.requester:
        raise Rejected("requester-mismatch", "RT requester is not the sender")
    if m2.endorser_keys != tuple(e.endorser for e in m2.chain):
        raise Rejected("endorser-keys")
    verify_chain(m2.rt, m2.chain)
    roots = set(trusted_endorser_roots)
    vreq = VerifiedRequest(m2.rt, list(m2.chain), m2.requester)
    for e in m2.chain:
        (vreq.trusted if e.endorser in roots else vreq.untrusted).append(e)
    return vreq


# -- M3: owner (contact identity) -> requester -----------------------------


@dataclass(frozen=True)
class AccessItem:
    data_id: str
    dap: DataAccessPath
    dat: SealedEnvelope
    source: bytes

    def encode(self) -> bytes:
        return enc.record(enc.text(self.data_id), self.dap.encode(), self.dat.encode(), self.source)

    @classmethod
    def decode(cls, data: bytes) -> "AccessItem":
        data_id, dap, dat, source = enc.fields(data, 4)
        return cls(enc.read_text(data_id), DataAccessPath.decode(dap), SealedEnvelope.decode(dat), source)


@dataclass(frozen=True)
class M3:
    items: tuple[SealedEnvelope, ...]
    request_id: str
    contact: bytes
    checksum: bytes
    checksum_signature: bytes
    trailer_signature: bytes = b""

    def _trailer(self) -> tuple[bytes, ...]:
        return (enc.text(self.request_id), self.contact, self.checksum, self.checksum_signature)

    def trailer_body(self) -> bytes:
        return enc.record(b"dusc/m3", *self._trailer())

    def encode(self) -> bytes:
        return frame(
            MessageType.M3,
            enc.record(
                enc.sequence(i.encode() for i in self.items),
                enc.record(*self._trailer()),
                self.trailer_signature,
            ),
        )

    @classmethod
    def decode(cls, data: bytes) -> "M3":
        items, trailer, trailer_sig = enc.fields(unframe(data, MessageType.M3), 3)
        rid, contact, checksum, checksum_sig = enc.fields(trailer, 4)
        return cls(
            tuple(SealedEnvelope.decode(i) for i in enc.read_sequence(items)),
            enc.read_text(rid),
            contact,
            checksum,
            checksum_sig,
            trailer_sig,
        )


@dataclass
class GrantBundle:
    request_id: str
    contact: bytes
    items: list[AccessItem]


def items_checksum(items: Sequence[SealedEnvelope]) -> bytes:
    return crypto.digest(enc.sequence(i.encode() for i in items))


def _checksum_body(checksum: bytes) -> bytes:
    return enc.record(b"dusc/m3-checksum", checksum)


def make_m3(
    owner_keys: OwnerKeys,
    grants: Sequence[tuple[DataObjectTicket, str]],
    vreq: VerifiedRequest,
    *,
    issued_at: int = 0,
) -> M3:
    if not grants:
        raise ValueError("M3 needs at least one grant")
    rt = vreq.rt
    items = []
    for dot, query in grants:
        if dot.owner != owner_keys.primary.public:
            raise ProtocolError(f"DOT {dot.data_id!r} belongs to another owner")
        grant = sign_grant(
            Grant(
                dot.data_id,
                rt.request_id,
                query,
                owner_keys.primary.public,
                owner_keys.callback.public,
                vreq.requester,
                rt.duration,
                issued_at,
            ),
            owner_keys.primary,
        )
        dat = DataAccessTicket(owner_keys.primary.public, dot, grant).seal()
        item = AccessItem(dot.data_id, dot.dap, dat, dot.source)
        items.append(crypto.seal(item.encode(), vreq.requester))
    contact = owner_keys.contact
    checksum = items_checksum(items)
    unsigned = M3(
        tuple(items),
        rt.request_id,
        contact.public,
        checksum,
        crypto.signature(_checksum_body(checksum), contact),
    )
    return M3(
        unsigned.items,
        unsigned.request_id,
        unsigned.contact,
        unsigned.checksum,
        unsigned.checksum_signature,
        crypto.signature(unsigned.trailer_body(), contact),
    )


def verify_m3(m3: M3 | bytes, requester: KeyPair) -> GrantBundle:
    m3 = _parse(M3, m3)
    if not crypto.verify(m3.trailer_body(), m3.trailer_signature, m3.contact):
        raise Rejected("trailer-sig")
    if items_checksum(m3.items) != m3.checksum:
        raise Rejected("checksum")
    if not crypto.verify(_checksum_body(m3.checksum), m3.checksum_signature, m3.contact):
        raise Rejected("checksum-sig")
    if not m3.items:
        raise Rejected("malformed", "no items")
    out = []
    for i, sealed in enumerate(m3.items):
        try:
            out.append(AccessItem.decode(crypto.open(sealed, requester)))
        except crypto.SealError as exc:
            raise Rejected("seal", f"item {i}") from exc
        except (enc.DecodeError, ValueError) as exc:
            raise Rejected("malformed", f"item {i}: {exc}") from exc
    return GrantBundle(m3.request_id, m3.contact, out)


# -- M4: requester -> source -----------------------------------------------


@dataclass(frozen=True)
class M4:
    dats: tuple[SealedEnvelope, ...]
    binding: SealedEnvelope

    def dat_list(self) -> bytes:
        return enc.sequence(d.encode() for d in self.dats)

    def encode(self) -> bytes:
        return frame(MessageType.M4, enc.record(self.dat_list(), self.binding.encode()))

    @classmethod
    def decode(cls, data: bytes) -> "M4":
        dats, binding = enc.fields(unframe(data, MessageType.M4), 2)
        return cls(
            tuple(SealedEnvelope.decode(d) for d in enc.read_sequence(dats)),
            SealedEnvelope.decode(binding),
        )


def dat_list_digest_body(dat_list: bytes) -> bytes:
    return enc.record(b"dusc/m4", crypto.digest(dat_list))


def make_m4(dats: Sequence[SealedEnvelope], requester: KeyPair, source: bytes) -> M4:
    if not dats:
        raise ValueError("M4 needs at least one DAT")
    dat_list = enc.sequence(d.encode() for d in dats)
    signed = crypto.sign(dat_list_digest_body(dat_list), requester)
    binding = crypto.seal(enc.record(signed.encode(), requester.public), source)
    return M4(tuple(dats), binding)


# -- M5: source -> owner (callback identity) -------------------------------


@dataclass(frozen=True)
class AuditRecord:
    data_id: str
    source: bytes
    grantee: bytes
    query: str
    logical_time: int
    request_id: str = ""


@dataclass(frozen=True)
class M5:
    sealed: SealedEnvelope

    def encode(self) -> bytes:
        return frame(MessageType.M5, self.sealed.encode())

    @classmethod
    def decode(cls, data: bytes) -> "M5":
        return cls(SealedEnvelope.decode(unframe(data, MessageType.M5)))


def _announcement_body(source: bytes, dot: bytes, grant: bytes, access_time: bytes) -> bytes:
    return enc.record(b"dusc/m5", source, dot, grant, access_time)


def make_m5(source: KeyPair, dat: DataAccessTicket, *, access_time: int = 0) -> M5:
    parts = (source.public, dat.dot.encode(), dat.grant.encode(), enc.u64(access_time))
    sig = crypto.signature(_announcement_body(*parts), source)
    return M5(crypto.seal(enc.record(*parts, sig), dat.grant.callback))


def verify_m5(m5: M5 | bytes, callback: KeyPair) -> AuditRecord:
    m5 = _parse(M5, m5)
    try:
        inner = crypto.open(m5.sealed, callback)
    except crypto.SealError as exc:
        raise Rejected("seal", str(exc)) from exc
    try:
        source, dot_raw, grant_raw, t_raw, sig = enc.fields(inner, 5)
        dot = DataObjectTicket.decode(dot_raw)
        grant = Grant.decode(grant_raw)
        access_time = enc.read_u64(t_raw)
    except (enc.DecodeError, ValueError) as exc:
        raise Rejected("malformed", str(exc)) from exc
    if not crypto.verify(_announcement_body(source, dot_raw, grant_raw, t_raw), sig, source):
        raise Rejected("source-sig")
    if dot.source != source or not verify_dot(dot):
        raise Rejected("dot-sig")
    if grant.owner != dot.owner or not grant.verify():
        raise Rejected("grant-sig")
    if grant.callback != callback.public:
        raise Rejected("callback", "announcement for another callback identity")
    return AuditRecord(grant.data_id, source, grant.grantee, grant.query, access_time, grant.request_id)


_CLASSES = {MessageType.M1: M1, MessageType.M2: M2, MessageType.M3: M3, MessageType.M4: M4, MessageType.M5: M5}


def decode_message(data: bytes):
    """Parse any serialized message; raises :class:`Rejected` if malformed."""
    tag = message_type(data)
    if tag is None:
        raise Rejected("header", "unknown message type")
    return _parse(_CLASSES[tag], data)
