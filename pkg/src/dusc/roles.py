"""The four agent roles plus the gateway that connects them to the ledger.

Every agent is a single-threaded state machine. Agents never touch each
other's state: protocol messages travel as ledger transactions and are
picked up through pub-sub subscriptions. The only side channel is the
gateway mailbox, which stands in for the direct data transfer a source
performs after a successful authorization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from . import crypto
from .crypto import KeyPair, SignedEnvelope
from .ledger import BROADCAST, Chain, Clock, NetworkSim, Transaction, make_transaction
from .protocol import (
    DOT,
    AccessItem,
    AuditRecord,
    DataAccessPath,
    DuplicateDataId,
    Endorsement,
    MessageType,
    OwnerKeys,
    Rejected,
    RequestTicket,
    VerifiedRequest,
    authorize,
    endorse,
    make_dot,
    make_m1,
    make_m2,
    make_m3,
    make_m4,
    make_m5,
    make_rt,
    match_request,
    message_type,
    verify_m1,
    verify_m2,
    verify_m3,
    verify_m5,
)
from .pubsub import Publisher, Subscriber, Subscription

log = logging.getLogger(__name__)


class RoleError(Exception):
    pass


# -- plumbing --------------------------------------------------------------


@dataclass(frozen=True)
class Reply:
    """Out-of-band answer from a source to one M4."""

    m4_tx: bytes
    source: bytes
    data: tuple[tuple[str, bytes], ...] = ()
    rejections: tuple[tuple[str, str], ...] = ()  # (data id or "*", reason)


class Gateway:
    """Ledger network, one publisher over it, and the direct-transfer mailbox."""

    def __init__(self, sim: NetworkSim, *, publisher_node: int = 0, shared_recovery: bool = False) -> None:
        self.sim = sim
        self.clock: Clock = sim.clock
        self.publisher_node = publisher_node
        self.publisher = Publisher(self.chain, shared_recovery=shared_recovery)
        self.mailbox: dict[bytes, list[Reply]] = {}
        self.submitted: list[Transaction] = []
        self._ingress = 0

    def chain(self) -> Chain:
        return self.sim.nodes[self.publisher_node].chain

    def submit(self, sender: KeyPair, recipient: bytes, payload: bytes) -> Transaction:
        tx = make_transaction(sender, recipient, payload, self.clock.tick())
        node = self._ingress % len(self.sim.nodes)
        self._ingress += 1
        self.sim.submit(node, tx)
        self.submitted.append(tx)
        return tx

    def subscribe(self, identities: Iterable[bytes], *, broadcast: bool = False) -> Subscriber:
        ids = frozenset(identities)
        sub = Subscription(min(ids), ids, include_broadcast=broadcast)
        return Subscriber(self.publisher, sub)

    def settle(self, race: int = 1) -> None:
        """Mine everything pending and let the publisher read the result."""
        self.sim.run_until_quiescent(race=race)
        self.publisher.publish_tick()

    def post(self, recipient: bytes, reply: Reply) -> None:
        self.mailbox.setdefault(recipient, []).append(reply)

    def collect(self, recipient: bytes) -> list[Reply]:
        return self.mailbox.pop(recipient, [])


class _Inbox:
    """Merges one agent's subscriptions into a single deduplicated stream."""

    def __init__(self, subscribers: Sequence[Subscriber]) -> None:
        self.subscribers = list(subscribers)
        self.seen: set[bytes] = set()
        self.crash_next = False

    def drain(self) -> list[Transaction]:
        crash, self.crash_next = self.crash_next, False
        fresh = []
        for sub in self.subscribers:
            if crash:
                sub.fetch(crash_before_ack=True)
                sub.reattach()
            for tx in sub.fetch():
                if tx.tx_id not in self.seen:
                    self.seen.add(tx.tx_id)
                    fresh.append(tx)
        fresh.sort(key=lambda t: t.logical_time)
        return fresh


# -- policies --------------------------------------------------------------

GrantPolicy = Callable[[VerifiedRequest], bool]


def grant_all(vreq: VerifiedRequest) -> bool:
    return True


def deny_all(vreq: VerifiedRequest) -> bool:
    return False


def grant_if_endorsed(vreq: VerifiedRequest) -> bool:
    return bool(vreq.trusted)


def require_endorser(key: bytes) -> GrantPolicy:
    def policy(vreq: VerifiedRequest) -> bool:
        return any(e.endorser == key for e in vreq.trusted)

    return policy


# -- owner -----------------------------------------------------------------


@dataclass(frozen=True)
class IssuedGrant:
    request_id: str
    data_id: str
    query: str
    grantee: bytes
    m3_tx: bytes


class OwnerAgent:
    def __init__(
        self,
        name: str,
        keys: OwnerKeys,
        gateway: Gateway,
        *,
        profile: Mapping[str, str] | None = None,
        grant_policy: GrantPolicy = grant_all,
        trusted_endorsers: Iterable[bytes] = (),
    ) -> None:
        self.name = name
        self.keys = keys
        self.gateway = gateway
        self.profile = dict(profile or {})
        self.grant_policy = grant_policy
        self.trusted_endorsers = set(trusted_endorsers)
        self.portfolio: list[DOT] = []
        self.audit_log: list[AuditRecord] = []
        self.registrations: dict[bytes, SignedEnvelope] = {}
        self.issued: list[IssuedGrant] = []
        self.rejected: list[tuple[str, str]] = []
        self.answered: set[str] = set()
        # one subscription per identity so the publisher cannot link them
        self.inbox = _Inbox([
            gateway.subscribe([keys.primary.public]),
            gateway.subscribe([keys.contact.public], broadcast=True),
            gateway.subscribe([keys.callback.public]),
        ])

    def register(self, source: bytes) -> SignedEnvelope:
        """Token a source attaches to every M1 addressed to this owner."""
        token = crypto.sign(source, self.keys.primary)
        self.registrations[source] = token
        return token

    def process_inbox(self) -> int:
        handled = 0
        for tx in self.inbox.drain():
            try:
                handled += self._handle(tx)
            except Rejected as exc:
                self.rejected.append((crypto.short(tx.tx_id), exc.check))
                log.info("%s skipped %s: %s", self.name, crypto.short(tx.tx_id), exc)
        return handled

    def _handle(self, tx: Transaction) -> int:
        kind = message_type(tx.payload)
        k = self.keys
        if kind is MessageType.M1 and tx.recipient == k.primary.public:
            dot = verify_m1(tx.payload, k.primary)
            if dot.source not in self.registrations:
                raise Rejected("token", "source never registered by this owner")
            if any(d.source == dot.source and d.data_id == dot.data_id for d in self.portfolio):
                return 0
            self.portfolio.append(dot)
            return 1
        if kind is MessageType.M2 and tx.recipient == BROADCAST:
            vreq = verify_m2(tx.payload, self.trusted_endorsers)
            if vreq.requester != tx.sender:
                raise Rejected("requester-mismatch", "transaction sender differs")
            return self._answer(vreq)
        if kind is MessageType.M5 and tx.recipient == k.callback.public:
            self.audit_log.append(verify_m5(tx.payload, k.callback))
            return 1
        return 0  # traffic for another party (or a filter false positive)

    def _answer(self, vreq: VerifiedRequest) -> int:
        rid = vreq.rt.request_id
        if rid in self.answered:
            return 0
        self.answered.add(rid)
        if not self.grant_policy(vreq):
            return 0
        matched = match_request(self.portfolio, self.profile, vreq)
        if not matched:
            return 0
        grants = [(dot, vreq.rt.query) for dot in matched]
        m3 = make_m3(self.keys, grants, vreq, issued_at=self.gateway.clock.now)
        tx = self.gateway.submit(self.keys.contact, vreq.requester, m3.encode())
        for dot, query in grants:
            self.issued.append(IssuedGrant(rid, dot.data_id, query, vreq.requester, tx.tx_id))
        return 1

    def audit(self, data_id: str | None = None) -> list[AuditRecord]:
        recs = [r for r in self.audit_log if data_id is None or r.data_id == data_id]
        return sorted(recs, key=lambda r: r.logical_time)


# -- source ----------------------------------------------------------------


@dataclass
class StoredObject:
    owner: bytes
    metadata: dict[str, str]
    data: bytes
    dot: DOT


@dataclass(frozen=True)
class ServedRecord:
    data_id: str
    owner: bytes
    grantee: bytes
    query: str
    logical_time: int
    request_id: str


class SourceAgent:
    def __init__(self, name: str, key: KeyPair, gateway: Gateway) -> None:
        self.name = name
        self.key = key
        self.gateway = gateway
        self.objects: dict[str, StoredObject] = {}
        self.issued_ids: set[str] = set()
        self.registered_users: dict[bytes, SignedEnvelope] = {}
        self.blacklist: set[str] = set()
        self.served_log: list[ServedRecord] = []
        self.decisions: list[tuple[bytes, list[str]]] = []
        self.inbox = _Inbox([gateway.subscribe([key.public])])

    def register(self, owner: bytes, token: SignedEnvelope) -> None:
        if token.signer != owner or token.payload != self.key.public or not token.verify():
            raise RoleError("registration token is not this source's key signed by the owner")
        self.registered_users[owner] = token

    def store(
        self,
        data_id: str,
        owner: bytes,
        metadata: Mapping[str, str],
        data: bytes,
        dap: DataAccessPath | str,
    ) -> DOT:
        if owner not in self.registered_users:
            raise RoleError(f"owner {crypto.short(owner)} is not registered")
        if isinstance(dap, str):
            dap = DataAccessPath.parse(dap)
        try:
            dot = make_dot(self.key, owner, data_id, metadata, dap, known_ids=self.issued_ids)
        except DuplicateDataId as exc:
            raise RoleError(str(exc)) from exc
        self.issued_ids.add(data_id)
        self.objects[data_id] = StoredObject(owner, dict(metadata), bytes(data), dot)
        m1 = make_m1(self.key, owner, self.registered_users[owner], dot)
        self.gateway.submit(self.key, owner, m1.encode())
        return dot

    def remove(self, data_id: str) -> None:
        """Drop an object; its data id stays reserved."""
        self.objects.pop(data_id, None)

    def revoke(self, request_id: str) -> None:
        self.blacklist.add(request_id)

    def process_inbox(self) -> int:
        handled = 0
        for tx in self.inbox.drain():
            if tx.recipient == self.key.public and message_type(tx.payload) is MessageType.M4:
                self.serve(tx)
                handled += 1
        return handled

    def serve(self, tx: Transaction) -> Reply:
        now = self.gateway.clock.now
        decision = authorize(tx.payload, self.key, self.blacklist, now=now)
        rejections = [("*", decision.reason.value)] if decision.reason else []
        rejections += [(f"#{r.index}", r.reason.value) for r in decision.rejected]
        data = []
        for g in decision.granted:
            obj = self.objects.get(g.data_id)
            if obj is None:
                rejections.append((g.data_id, "not-found"))
                continue
            data.append((g.data_id, obj.data))
            grant = g.dat.grant
            self.served_log.append(ServedRecord(
                g.data_id, obj.owner, grant.grantee, grant.query, self.gateway.clock.now + 1,
                grant.request_id,
            ))
            m5 = make_m5(self.key, g.dat, access_time=self.gateway.clock.now + 1)
            self.gateway.submit(self.key, grant.callback, m5.encode())
        self.decisions.append((tx.tx_id, [r for _, r in rejections]))
        reply = Reply(tx.tx_id, self.key.public, tuple(data), tuple(rejections))
        # an M4 that fails the digest check has no trustworthy presenter;
        # the reply goes to the transaction sender either way
        self.gateway.post(tx.sender, reply)
        return reply


# -- endorser --------------------------------------------------------------


class EndorserAgent:
    def __init__(self, name: str, key: KeyPair, feedback: Callable[[RequestTicket], str] | str = "ok") -> None:
        self.name = name
        self.key = key
        self.feedback = feedback if callable(feedback) else (lambda rt, text=feedback: text)
        self.endorsed: set[bytes] = set()

    def endorse(self, rt: RequestTicket, chain: Sequence[Endorsement]) -> list[Endorsement]:
        if rt.digest in self.endorsed:
            return list(chain)
        out = endorse(rt, chain, self.key, self.feedback(rt))
        self.endorsed.add(rt.digest)
        return out


# -- requester -------------------------------------------------------------


class RequesterAgent:
    def __init__(self, name: str, key: KeyPair, gateway: Gateway) -> None:
        self.name = name
        self.key = key
        self.gateway = gateway
        self.open_requests: dict[str, RequestTicket] = {}
        self.collected_grants: dict[str, list[AccessItem]] = {}
        self.retrieved: dict[str, bytes] = {}
        self.rejections: list[tuple[str, str]] = []
        self.inbox_rejections: list[str] = []
        self.pending_access: dict[bytes, str] = {}
        self.inbox = _Inbox([gateway.subscribe([key.public])])
        self._counter = 0

    def _request_id(self, label: str | None) -> str:
        self._counter += 1
        tag = label if label is not None else str(self._counter)
        return crypto.digest(self.key.public + tag.encode()).hex()[:32]

    def broadcast(
        self,
        query: str,
        conditions: str = "",
        duration: int = 3600,
        endorsers: Sequence[EndorserAgent] = (),
        *,
        label: str | None = None,
        metadata: Mapping[str, str] | None = None,
    ) -> str:
        rt = make_rt(self.key, query, conditions, duration, metadata,
                     request_id=self._request_id(label))
        chain: list[Endorsement] = []
        for e in endorsers:
            chain = e.endorse(rt, chain)
        m2 = make_m2(rt, chain, self.key)
        self.gateway.submit(self.key, BROADCAST, m2.encode())
        self.open_requests[rt.request_id] = rt
        return rt.request_id

    def process_inbox(self) -> int:
        handled = 0
        for tx in self.inbox.drain():
            if tx.recipient != self.key.public or message_type(tx.payload) is not MessageType.M3:
                continue
            try:
                bundle = verify_m3(tx.payload, self.key)
            except Rejected as exc:
                self.inbox_rejections.append(exc.check)
                continue
            if bundle.request_id not in self.open_requests:
                self.inbox_rejections.append("unknown-request")
                continue
            self.collected_grants.setdefault(bundle.request_id, []).extend(bundle.items)
            handled += 1
        for reply in self.gateway.collect(self.key.public):
            rid = self.pending_access.pop(reply.m4_tx, "")
            for data_id, data in reply.data:
                self.retrieved[data_id] = data
            for _, reason in reply.rejections:
                self.rejections.append((rid, reason))
            handled += 1
        return handled

    def grants_for(self, request_id: str, source: bytes) -> list[AccessItem]:
        return [i for i in self.collected_grants.get(request_id, []) if i.source == source]

    def access(self, request_id: str, source: bytes, items: Sequence[AccessItem] | None = None) -> bytes:
        """Present the collected DATs for ``source``. Returns the M4 transaction id."""
        items = list(items) if items is not None else self.grants_for(request_id, source)
        if not items:
            raise RoleError(f"no grants for request {request_id} at source {crypto.short(source)}")
        m4 = make_m4([i.dat for i in items], self.key, source)
        tx = self.gateway.submit(self.key, source, m4.encode())
        self.pending_access[tx.tx_id] = request_id
        return tx.tx_id


__all__ = [
    "EndorserAgent",
    "Gateway",
    "IssuedGrant",
    "OwnerAgent",
    "Reply",
    "RequesterAgent",
    "RoleError",
    "ServedRecord",
    "SourceAgent",
    "StoredObject",
    "deny_all",
    "grant_all",
    "grant_if_endorsed",
    "require_endorser",
]
