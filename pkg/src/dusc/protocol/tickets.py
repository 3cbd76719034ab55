"""Ticket types: DOT, DAP, RT, endorsements and the owner's grant."""

from __future__ import annotations

import enum
import secrets
from collections.abc import Collection
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .. import crypto
from .. import encoding as enc
from ..crypto import KeyPair
from .query import Term, parse_conditions


class ProtocolError(Exception):
    pass


class Rejected(ProtocolError):
    """A verification step failed; ``check`` names the step."""

    def __init__(self, check: str, detail: str = "") -> None:
        super().__init__(f"{check}: {detail}" if detail else check)
        self.check = check
        self.detail = detail


class DuplicateDataId(ProtocolError):
    pass


class DapKind(str, enum.Enum):
    URL = "url"
    RECORD_LOCATOR = "record-locator"
    CONTACT = "contact"
    INSTRUCTIONS = "instructions"
    PHYSICAL_LOCATION = "physical-location"


@dataclass(frozen=True)
class DataAccessPath:
    kind: DapKind
    value: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", DapKind(self.kind))
        if not self.value:
            raise ValueError("DAP value must be non-empty")

    def encode(self) -> bytes:
        return enc.record(enc.text(self.kind.value), enc.text(self.value))

    @classmethod
    def decode(cls, data: bytes) -> "DataAccessPath":
        kind, value = (enc.read_text(f) for f in enc.fields(data, 2))
        try:
            return cls(DapKind(kind), value)
        except ValueError as exc:
            raise enc.DecodeError(str(exc)) from exc

    @classmethod
    def parse(cls, text: str) -> "DataAccessPath":
        """``kind:value``, e.g. ``url:https://ehr.example/records/7``."""
        kind, sep, value = text.partition(":")
        if not sep:
            raise ValueError(f"DAP needs kind:value, got {text!r}")
        return cls(DapKind(kind), value)

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.value}"


@dataclass(frozen=True)
class DataObjectTicket:
    data_id: str
    owner: bytes
    metadata: Mapping[str, str]
    dap: DataAccessPath
    source: bytes
    source_signature: bytes

    def body(self) -> bytes:
        return enc.record(
            b"dusc/dot",
            enc.text(self.data_id),
            self.owner,
            enc.string_map(self.metadata),
            self.dap.encode(),
            self.source,
        )

    def encode(self) -> bytes:
        return enc.record(
            enc.text(self.data_id),
            self.owner,
            enc.string_map(self.metadata),
            self.dap.encode(),
            self.source,
            self.source_signature,
        )

    @classmethod
    def decode(cls, data: bytes) -> "DataObjectTicket":
        data_id, owner, meta, dap, source, sig = enc.fields(data, 6)
        return cls(
            enc.read_text(data_id),
            owner,
            enc.read_string_map(meta),
            DataAccessPath.decode(dap),
            source,
            sig,
        )


DOT = DataObjectTicket


def make_dot(
    source: KeyPair,
    owner: bytes,
    data_id: str,
    metadata: Mapping[str, str],
    dap: DataAccessPath,
    *,
    known_ids: Collection[str] = (),
) -> DataObjectTicket:
    if data_id in known_ids:
        raise DuplicateDataId(f"data id {data_id!r} already issued by this source")
    if not data_id:
        raise ValueError("data id must be non-empty")
    unsigned = DataObjectTicket(data_id, owner, dict(metadata), dap, source.public, b"")
    return replace(unsigned, source_signature=crypto.signature(unsigned.body(), source))


def verify_dot(dot: DataObjectTicket) -> bool:
    try:
        body = dot.body()
    except (AttributeError, TypeError, ValueError):
        return False
    return crypto.verify(body, dot.source_signature, dot.source)


@dataclass(frozen=True)
class RequestTicket:
    request_id: str
    query: str
    conditions: tuple[Term, ...]
    duration: int
    metadata: Mapping[str, str]
    requester: bytes
    requester_signature: bytes = b""

    def body(self) -> bytes:
        return enc.record(
            b"dusc/rt",
            enc.text(self.request_id),
            enc.text(self.query),
            enc.sequence(c.encode() for c in self.conditions),
            enc.u64(self.duration),
            enc.string_map(self.metadata),
            self.requester,
        )

    def encode(self) -> bytes:
        return enc.record(
            enc.text(self.request_id),
            enc.text(self.query),
            enc.sequence(c.encode() for c in self.conditions),
            enc.u64(self.duration),
            enc.string_map(self.metadata),
            self.requester,
            self.requester_signature,
        )

    @classmethod
    def decode(cls, data: bytes) -> "RequestTicket":
        rid, query, conds, duration, meta, requester, sig = enc.fields(data, 7)
        return cls(
            enc.read_text(rid),
            enc.read_text(query),
            tuple(Term.decode(c) for c in enc.read_sequence(conds)),
            enc.read_u64(duration),
            enc.read_string_map(meta),
            requester,
            sig,
        )

    @property
    def digest(self) -> bytes:
        return crypto.digest(self.encode())


RT = RequestTicket


def make_rt(
    requester: KeyPair,
    query: str,
    conditions: str | Sequence[Term] = (),
    duration: int = 3600,
    metadata: Mapping[str, str] | None = None,
    *,
    request_id: str | None = None,
) -> RequestTicket:
    if duration <= 0:
        raise ValueError("duration must be positive")
    if isinstance(conditions, str):
        conditions = parse_conditions(conditions)
    unsigned = RequestTicket(
        request_id or secrets.token_hex(16),
        query,
        tuple(conditions),
        int(duration),
        dict(metadata or {}),
        requester.public,
    )
    return replace(unsigned, requester_signature=crypto.signature(unsigned.body(), requester))


def verify_rt(rt: RequestTicket) -> bool:
    return crypto.verify(rt.body(), rt.requester_signature, rt.requester)


@dataclass(frozen=True)
class Endorsement:
    rt_digest: bytes
    feedback: str
    endorser: bytes
    signature: bytes

    def encode(self) -> bytes:
        return enc.record(self.rt_digest, enc.text(self.feedback), self.endorser, self.signature)

    @classmethod
    def decode(cls, data: bytes) -> "Endorsement":
        rt_digest, feedback, endorser, sig = enc.fields(data, 4)
        return cls(rt_digest, enc.read_text(feedback), endorser, sig)


def _endorsement_body(rt_digest: bytes, feedback: str, prior: bytes) -> bytes:
    return enc.record(b"dusc/endorsement", rt_digest, enc.text(feedback), prior)


def _prior_digest(chain: Sequence[Endorsement]) -> bytes:
    return crypto.digest(chain[-1].encode()) if chain else crypto.ZERO_DIGEST


def verify_chain(rt: RequestTicket, chain: Sequence[Endorsement]) -> None:
    """Raise :class:`Rejected` unless every link endorses ``rt`` in order."""
    rt_digest = rt.digest
    for i, e in enumerate(chain):
        if e.rt_digest != rt_digest:
            raise Rejected("endorsement", f"link {i} endorses a different request")
        body = _endorsement_body(e.rt_digest, e.feedback, _prior_digest(chain[:i]))
        if not crypto.verify(body, e.signature, e.endorser):
            raise Rejected("endorsement", f"link {i} signature invalid")


def endorse(
    rt: RequestTicket, chain: Sequence[Endorsement], endorser: KeyPair, feedback: str
) -> list[Endorsement]:
    try:
        verify_chain(rt, chain)
    except Rejected as exc:
        raise ProtocolError(f"cannot extend an invalid chain ({exc})") from exc
    body = _endorsement_body(rt.digest, feedback, _prior_digest(chain))
    link = Endorsement(rt.digest, feedback, endorser.public, crypto.signature(body, endorser))
    return [*chain, link]


@dataclass(frozen=True)
class Grant:
    """The owner-signed record inside a DAT: who may run which query on what."""

    data_id: str
    request_id: str
    query: str
    owner: bytes
    callback: bytes
    grantee: bytes
    duration: int
    issued_at: int
    signature: bytes = b""

    def body(self) -> bytes:
        return enc.record(
            b"dusc/grant",
            enc.text(self.data_id),
            enc.text(self.request_id),
            enc.text(self.query),
            self.owner,
            self.callback,
            self.grantee,
            enc.u64(self.duration),
            enc.u64(self.issued_at),
        )

    def encode(self) -> bytes:
        return enc.record(
            enc.text(self.data_id),
            enc.text(self.request_id),
            enc.text(self.query),
            self.owner,
            self.callback,
            self.grantee,
            enc.u64(self.duration),
            enc.u64(self.issued_at),
            self.signature,
        )

    @classmethod
    def decode(cls, data: bytes) -> "Grant":
        f = enc.fields(data, 9)
        return cls(
            enc.read_text(f[0]),
            enc.read_text(f[1]),
            enc.read_text(f[2]),
            f[3],
            f[4],
            f[5],
            enc.read_u64(f[6]),
            enc.read_u64(f[7]),
            f[8],
        )

    def verify(self) -> bool:
        return crypto.verify(self.body(), self.signature, self.owner)

    def expires_at(self) -> int:
        return self.issued_at + self.duration


def sign_grant(grant: Grant, owner: KeyPair) -> Grant:
    return replace(grant, signature=crypto.signature(grant.body(), owner))


@dataclass(frozen=True)
class DataAccessTicket:
    """Opened form of a DAT; on the wire it is always sealed to the source."""

    owner: bytes
    dot: DataObjectTicket
    grant: Grant

    def encode(self) -> bytes:
        return enc.record(self.owner, self.dot.encode(), self.grant.encode())

    @classmethod
    def decode(cls, data: bytes) -> "DataAccessTicket":
        owner, dot, grant = enc.fields(data, 3)
        return cls(owner, DataObjectTicket.decode(dot), Grant.decode(grant))

    def seal(self) -> crypto.SealedEnvelope:
        return crypto.seal(self.encode(), self.dot.source)


DAT = DataAccessTicket


@dataclass(frozen=True)
class OwnerKeys:
    """An owner's three unlinkable identities.

    ``primary`` is known to sources, ``contact`` to requesters and
    ``callback`` receives access announcements.
    """

    primary: KeyPair
    contact: KeyPair
    callback: KeyPair

    @classmethod
    def generate(cls, seed: bytes | None = None) -> "OwnerKeys":
        if seed is None:
            return cls(*(crypto.generate_identity() for _ in range(3)))
        return cls(*(crypto.generate_identity(crypto.seed_from_label(seed.hex(), i)) for i in range(3)))


@dataclass
class VerifiedRequest:
    rt: RequestTicket
    chain: list[Endorsement]
    requester: bytes
    trusted: list[Endorsement] = field(default_factory=list)
    untrusted: list[Endorsement] = field(default_factory=list)
