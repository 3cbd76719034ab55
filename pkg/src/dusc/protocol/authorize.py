"""Source-side authorization of a presented M4.

The decision uses only the M4 itself, the source's key, the request-id
blacklist and the current logical time. There is no access-control list
to consult. Each DAT is checked independently:

1. it opens under the source key;
2. its DOT carries this source's signature (the owner controls the data id);
3. the grant verifies under its issuer (nothing was altered) and that
   issuer is the DOT owner (the owner says grantee, query and data id);
4. the grant names the presenter, recovered from the signed digest;
5. the request id is not blacklisted and the grant has not expired.

A bad signed digest over the DAT list rejects the whole message.
"""

from __future__ import annotations

import enum
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Collection

from .. import crypto
from .. import encoding as enc
from ..crypto import KeyPair, SealedEnvelope, SignedEnvelope
from .messages import M4, dat_list_digest_body
from .tickets import DataAccessTicket, Rejected, verify_dot


class Reason(str, enum.Enum):
    SEAL = "seal"
    DOT_SIG = "dot-sig"
    GRANT_SIG = "grant-sig"
    GRANT_ISSUER = "grant-issuer"
    GRANT_SCOPE = "grant-scope"
    GRANTEE_MISMATCH = "grantee-mismatch"
    BLACKLISTED = "blacklisted"
    EXPIRED = "expired"
    DIGEST = "digest"
    EMPTY = "empty"
    MALFORMED = "malformed"


@dataclass(frozen=True)
class GrantedAccess:
    index: int
    data_id: str
    query: str
    request_id: str
    dat: DataAccessTicket


@dataclass(frozen=True)
class DatRejection:
    index: int
    reason: Reason


@dataclass
class AccessDecision:
    requester: bytes | None
    granted: list[GrantedAccess] = field(default_factory=list)
    rejected: list[DatRejection] = field(default_factory=list)
    reason: Reason | None = None

    @property
    def ok(self) -> bool:
        return self.reason is None and bool(self.granted)

    def reasons(self) -> list[Reason]:
        if self.reason is not None:
            return [self.reason]
        return [r.reason for r in self.rejected]

    def pairs(self) -> list[tuple[str, str]]:
        return [(g.data_id, g.query) for g in self.granted]


def check_dat(
    index: int,
    sealed: SealedEnvelope,
    source: KeyPair,
    presenter: bytes,
    blacklist: Collection[str] = frozenset(),
    now: int | None = None,
) -> GrantedAccess | DatRejection:
    try:
        dat = DataAccessTicket.decode(crypto.open(sealed, source))
    except (crypto.SealError, enc.DecodeError, ValueError):
        return DatRejection(index, Reason.SEAL)
    dot, grant = dat.dot, dat.grant
    if dot.source != source.public or not verify_dot(dot):
        return DatRejection(index, Reason.DOT_SIG)
    if not grant.verify():
        return DatRejection(index, Reason.GRANT_SIG)
    if grant.owner != dot.owner:
        return DatRejection(index, Reason.GRANT_ISSUER)
    if grant.data_id != dot.data_id or dat.owner != dot.owner:
        return DatRejection(index, Reason.GRANT_SCOPE)
    if grant.grantee != presenter:
        return DatRejection(index, Reason.GRANTEE_MISMATCH)
    if grant.request_id in blacklist:
        return DatRejection(index, Reason.BLACKLISTED)
    if now is not None and now > grant.expires_at():
        return DatRejection(index, Reason.EXPIRED)
    return GrantedAccess(index, grant.data_id, grant.query, grant.request_id, dat)


def _check_chunk(chunk, source, presenter, blacklist, now):
    return [check_dat(i, s, source, presenter, blacklist, now) for i, s in chunk]


def _presenter(m4: M4, source: KeyPair) -> bytes:
    try:
        signed_raw, requester = enc.fields(crypto.open(m4.binding, source), 2)
        signed = SignedEnvelope.decode(signed_raw)
    except (crypto.SealError, enc.DecodeError):
        raise Rejected(Reason.DIGEST.value, "binding does not open")
    if signed.signer != requester or not signed.verify():
        raise Rejected(Reason.DIGEST.value, "digest signature invalid")
    if signed.payload != dat_list_digest_body(m4.dat_list()):
        raise Rejected(Reason.DIGEST.value, "digest does not cover the presented DATs")
    return requester


def authorize(
    m4: M4 | bytes,
    source: KeyPair,
    blacklist: Collection[str] = frozenset(),
    *,
    now: int | None = None,
    executor: Executor | None = None,
    workers: int = 1,
) -> AccessDecision:
    """Decide an M4. With ``executor``, DATs are checked in ``workers`` chunks.

    Parallel and sequential checking give identical decisions.
    """
    if not isinstance(m4, M4):
        try:
            m4 = M4.decode(m4)
        except (Rejected, enc.DecodeError, ValueError):
            return AccessDecision(None, reason=Reason.MALFORMED)
    if not m4.dats:
        return AccessDecision(None, reason=Reason.EMPTY)
    try:
        presenter = _presenter(m4, source)
    except Rejected:
        return AccessDecision(None, reason=Reason.DIGEST)

    blacklist = frozenset(blacklist)
    indexed = list(enumerate(m4.dats))
    if executor is None or workers <= 1 or len(indexed) < 2:
        outcomes = _check_chunk(indexed, source, presenter, blacklist, now)
    else:
        size = -(-len(indexed) // workers)
        chunks = [indexed[i:i + size] for i in range(0, len(indexed), size)]
        futures = [
            executor.submit(_check_chunk, c, source, presenter, blacklist, now) for c in chunks
        ]
        outcomes = [o for f in futures for o in f.result()]

    decision = AccessDecision(presenter)
    for o in outcomes:
        (decision.granted if isinstance(o, GrantedAccess) else decision.rejected).append(o)
    return decision
