"""Deterministic scenario execution and report generation."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .. import crypto
from ..ledger import NetworkSim, is_valid_chain, save_chain
from ..protocol import MessageType, OwnerKeys, ProtocolError, message_type
from ..roles import (
    EndorserAgent,
    Gateway,
    OwnerAgent,
    RequesterAgent,
    RoleError,
    SourceAgent,
    deny_all,
    grant_all,
    grant_if_endorsed,
    require_endorser,
)
from .scenario import Assertion, Event, Scenario, ScenarioError, parse_mapping

log = logging.getLogger(__name__)

MAX_SETTLE_ROUNDS = 1000


@dataclass
class AssertionResult:
    line: int
    text: str
    expected: str
    actual: str
    passed: bool


@dataclass
class Report:
    scenario: str
    seed: int
    assertions: list[AssertionResult] = field(default_factory=list)
    invariants: dict[str, dict[str, Any]] = field(default_factory=dict)
    trace: list[dict[str, Any]] = field(default_factory=list)
    trace_digest: str = ""
    agents: dict[str, Any] = field(default_factory=dict)
    errors: list[dict[str, Any]] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    trace_bytes: bytes = b""

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions) and all(
            v["passed"] for v in self.invariants.values()
        )

    def to_dict(self, *, timings: bool = True) -> dict[str, Any]:
        out = {
            "scenario": self.scenario,
            "seed": self.seed,
            "passed": self.passed,
            "assertions": [a.__dict__ for a in self.assertions],
            "invariants": self.invariants,
            "errors": self.errors,
            "trace_digest": self.trace_digest,
            "trace": self.trace,
            "agents": self.agents,
        }
        if timings:
            out["timings"] = self.timings
        return out

    def to_json(self, *, timings: bool = True) -> str:
        return json.dumps(self.to_dict(timings=timings), indent=2, sort_keys=True)


def _policy(spec: str, endorsers: dict[str, EndorserAgent], where: int):
    if spec in ("", "grant-all"):
        return grant_all
    if spec == "deny-all":
        return deny_all
    if spec == "grant-if-endorsed":
        return grant_if_endorsed
    if spec.startswith("require-endorser:"):
        name = spec.split(":", 1)[1]
        if name not in endorsers:
            raise ScenarioError(f"policy names unknown endorser {name!r}", where)
        return require_endorser(endorsers[name].key.public)
    raise ScenarioError(f"unknown policy {spec!r}", where)


def _names(text: str) -> list[str]:
    return [n for n in text.replace(",", " ").split() if n]


class ScenarioRun:
    def __init__(self, scenario: Scenario, seed: int | None = None) -> None:
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        net = scenario.network
        self.sim = NetworkSim(
            net.nodes,
            miners=net.miners,
            seed=self.seed,
            difficulty=scenario.difficulty,
            delay=net.delay,
            drop_rate=net.drop_rate,
        )
        self.gateway = Gateway(self.sim, shared_recovery=net.shared_recovery)
        self.owners: dict[str, OwnerAgent] = {}
        self.sources: dict[str, SourceAgent] = {}
        self.requesters: dict[str, RequesterAgent] = {}
        self.endorsers: dict[str, EndorserAgent] = {}
        self.requests: dict[str, tuple[str, str]] = {}  # label -> (requester, request id)
        self.errors: list[dict[str, Any]] = []
        self.identity_names: dict[bytes, str] = {}
        self.settle_rounds = 0
        self._build()

    # -- setup ----------------------------------------------------------

    def _key(self, kind: str, name: str) -> crypto.KeyPair:
        return crypto.generate_identity(crypto.seed_from_label("scenario", self.seed, kind, name))

    def _build(self) -> None:
        decls = self.scenario.actors
        for d in decls:
            if d.kind == "endorser":
                e = EndorserAgent(d.name, self._key("endorser", d.name), d.props.get("feedback", "ok"))
                self.endorsers[d.name] = e
                self.identity_names[e.key.public] = d.name
        for d in decls:
            if d.kind == "source":
                s = SourceAgent(d.name, self._key("source", d.name), self.gateway)
                self.sources[d.name] = s
                self.identity_names[s.key.public] = d.name
            elif d.kind == "requester":
                r = RequesterAgent(d.name, self._key("requester", d.name), self.gateway)
                self.requesters[d.name] = r
                self.identity_names[r.key.public] = d.name
        for d in decls:
            if d.kind != "owner":
                continue
            keys = OwnerKeys.generate(crypto.seed_from_label("scenario", self.seed, "owner", d.name))
            trust = []
            for n in _names(d.props.get("trust", "")):
                if n not in self.endorsers:
                    raise ScenarioError(f"owner {d.name} trusts unknown endorser {n!r}", d.line)
                trust.append(self.endorsers[n].key.public)
            try:
                profile = parse_mapping(d.props.get("profile", ""))
            except ValueError as exc:
                raise ScenarioError(str(exc), d.line) from exc
            o = OwnerAgent(
                d.name,
                keys,
                self.gateway,
                profile=profile,
                grant_policy=_policy(d.props.get("policy", ""), self.endorsers, d.line),
                trusted_endorsers=trust,
            )
            self.owners[d.name] = o
            self.identity_names[keys.primary.public] = f"{d.name}.primary"
            self.identity_names[keys.contact.public] = f"{d.name}.contact"
            self.identity_names[keys.callback.public] = f"{d.name}.callback"
            for src in _names(d.props.get("register", "")):
                self._register(o, src, d.line)
        self.identity_names[b"*"] = "*"

    def _register(self, owner: OwnerAgent, source_name: str, line: int) -> None:
        source = self.sources.get(source_name)
        if source is None:
            raise ScenarioError(f"unknown source {source_name!r}", line)
        source.register(owner.keys.primary.public, owner.register(source.key.public))

    def _agents_with_inbox(self):
        # declaration order keeps processing deterministic
        table = {**self.owners, **self.sources, **self.requesters}
        return [table[d.name] for d in self.scenario.actors if d.name in table]

    # -- execution --------------------------------------------------------

    def settle(self) -> None:
        race = self.scenario.network.race
        for _ in range(MAX_SETTLE_ROUNDS):
            self.settle_rounds += 1
            self.gateway.settle(race)
            handled = sum(a.process_inbox() for a in self._agents_with_inbox())
            if handled == 0 and self.sim.quiescent() and self.gateway.publisher.cursor == len(self.gateway.chain()):
                return
        raise RuntimeError("scenario did not reach quiescence")

    def _fail(self, ev: Event, exc: Exception) -> None:
        self.errors.append({"line": ev.line, "actor": ev.actor, "action": ev.action, "error": str(exc)})
        log.info("line %d: %s %s failed: %s", ev.line, ev.actor, ev.action, exc)

    def _arg(self, ev: Event, i: int = 0) -> str:
        if len(ev.args) <= i:
            raise ScenarioError(f"{ev.action} needs a positional argument", ev.line, self.scenario.path)
        return ev.args[i]

    def _request(self, ev: Event, label: str) -> str:
        if label not in self.requests:
            raise ScenarioError(f"unknown request label {label!r}", ev.line, self.scenario.path)
        return self.requests[label][1]

    def _source(self, ev: Event, name: str | None) -> SourceAgent:
        if not name or name not in self.sources:
            raise ScenarioError(f"unknown source {name!r}", ev.line, self.scenario.path)
        return self.sources[name]

    def apply(self, ev: Event) -> None:
        kw = ev.kwargs
        act = ev.action
        if ev.actor == "*":
            if act == "wait":
                self.gateway.clock.now += int(self._arg(ev))
            elif act == "crash-publisher":
                self.gateway.publisher.crash()
                self.gateway.publisher.recover_all()
            elif act == "settle":
                pass
            else:
                raise ScenarioError(f"unknown global action {act!r}", ev.line, self.scenario.path)
            return

        if act == "crash-inbox":
            agent = {**self.owners, **self.sources, **self.requesters}.get(ev.actor)
            if agent is None:
                raise ScenarioError(f"{ev.actor} has no inbox", ev.line, self.scenario.path)
            agent.inbox.crash_next = True
            return

        try:
            if ev.actor in self.sources:
                self._source_action(ev, self.sources[ev.actor], act, kw)
            elif ev.actor in self.requesters:
                self._requester_action(ev, self.requesters[ev.actor], act, kw)
            elif ev.actor in self.owners:
                self._owner_action(ev, self.owners[ev.actor], act, kw)
            else:
                raise ScenarioError(f"{ev.actor} takes no actions", ev.line, self.scenario.path)
        except (RoleError, ProtocolError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            self._fail(ev, exc)

    def _source_action(self, ev: Event, src: SourceAgent, act: str, kw: dict[str, str]) -> None:
        if act == "store":
            owner = self.owners.get(kw.get("owner", ""))
            if owner is None:
                raise ScenarioError("store needs owner=OWNER", ev.line, self.scenario.path)
            src.store(
                self._arg(ev),
                owner.keys.primary.public,
                parse_mapping(kw.get("meta", "")),
                kw.get("data", "").encode(),
                kw.get("dap", f"url:dusc://{src.name}/{self._arg(ev)}"),
            )
        elif act == "remove":
            src.remove(self._arg(ev))
        elif act == "blacklist":
            src.revoke(self._request(ev, self._arg(ev)))
        else:
            raise ScenarioError(f"unknown source action {act!r}", ev.line, self.scenario.path)

    def _requester_action(self, ev: Event, req: RequesterAgent, act: str, kw: dict[str, str]) -> None:
        if act == "broadcast":
            label = self._arg(ev)
            if label in self.requests:
                raise ScenarioError(f"request label {label!r} reused", ev.line, self.scenario.path)
            chain = []
            for n in _names(kw.get("endorsers", "")):
                if n not in self.endorsers:
                    raise ScenarioError(f"unknown endorser {n!r}", ev.line, self.scenario.path)
                chain.append(self.endorsers[n])
            rid = req.broadcast(
                kw.get("query", "*"),
                kw.get("conditions", ""),
                int(kw.get("duration", "3600")),
                chain,
                label=f"{self.seed}/{label}",
            )
            self.requests[label] = (req.name, rid)
        elif act == "access":
            rid = self._request(ev, self._arg(ev))
            req.access(rid, self._source(ev, kw.get("source")).key.public)
        elif act == "steal":
            # replay another requester's DATs under this requester's key
            rid = self._request(ev, self._arg(ev))
            victim = self.requesters.get(kw.get("from", ""))
            if victim is None:
                raise ScenarioError("steal needs from=REQUESTER", ev.line, self.scenario.path)
            src = self._source(ev, kw.get("source"))
            loot = victim.grants_for(rid, src.key.public)
            if not loot:
                raise RoleError(f"{victim.name} holds no grants to steal")
            req.access(rid, src.key.public, loot)
        else:
            raise ScenarioError(f"unknown requester action {act!r}", ev.line, self.scenario.path)

    def _owner_action(self, ev: Event, owner: OwnerAgent, act: str, kw: dict[str, str]) -> None:
        if act == "register":
            self._register(owner, self._arg(ev), ev.line)
        elif act == "policy":
            owner.grant_policy = _policy(self._arg(ev), self.endorsers, ev.line)
        else:
            raise ScenarioError(f"unknown owner action {act!r}", ev.line, self.scenario.path)

    def run(self) -> Report:
        t0 = time.perf_counter()
        with crypto.deterministic():
            self.settle()
            for ev in self.scenario.ordered_events():
                self.apply(ev)
                self.settle()
        elapsed = time.perf_counter() - t0
        report = Report(self.scenario.name, self.seed, errors=self.errors)
        self._trace(report)
        report.assertions = [self.check(a) for a in self.scenario.assertions]
        report.invariants = self.invariants()
        report.agents = self.agent_states()
        report.timings = {"run_seconds": round(elapsed, 6), "settle_rounds": self.settle_rounds}
        return report

    # -- observation ------------------------------------------------------

    def name_of(self, key: bytes) -> str:
        return self.identity_names.get(key, crypto.short(key))

    def _trace(self, report: Report) -> None:
        chain = self.gateway.chain()
        raw = bytearray()
        for block in chain.blocks[1:]:
            for pos, tx in enumerate(block.transactions):
                kind = message_type(tx.payload)
                raw += tx.encode()
                report.trace.append({
                    "block": block.index,
                    "position": pos,
                    "tx_id": tx.tx_id.hex(),
                    "type": kind.name if kind else "?",
                    "sender": self.name_of(tx.sender),
                    "recipient": self.name_of(tx.recipient),
                    "logical_time": tx.logical_time,
                })
        report.trace_bytes = bytes(raw)
        report.trace_digest = hashlib.sha256(raw).hexdigest()

    def count_on_chain(self, kind: MessageType) -> int:
        return sum(1 for _, tx in self.gateway.chain().transactions() if message_type(tx.payload) is kind)

    def metric(self, a: Assertion) -> str:
        m, args = a.metric, a.args

        def need(table: dict, i: int = 0):
            if len(args) <= i or args[i] not in table:
                raise ScenarioError(f"{m}: unknown actor {args[i] if len(args) > i else ''!r}", a.line)
            return table[args[i]]

        if m == "portfolio":
            return str(len(need(self.owners).portfolio))
        if m == "issued":
            owner = need(self.owners)
            issued = owner.issued
            if len(args) > 1:
                rid = self.requests.get(args[1], ("", ""))[1]
                issued = [g for g in issued if g.request_id == rid]
            return str(len(issued))
        if m == "grants":
            req = need(self.requesters)
            rid = self.requests.get(args[1], ("", ""))[1] if len(args) > 1 else None
            if rid is None:
                return str(sum(len(v) for v in req.collected_grants.values()))
            return str(len(req.collected_grants.get(rid, [])))
        if m == "retrieved":
            req = need(self.requesters)
            if len(args) > 1:
                return req.retrieved.get(args[1], b"").decode(errors="replace")
            return str(len(req.retrieved))
        if m == "audit":
            owner = need(self.owners)
            return str(len(owner.audit(args[1] if len(args) > 1 else None)))
        if m == "served":
            src = need(self.sources)
            log_ = src.served_log
            if len(args) > 1:
                log_ = [r for r in log_ if r.data_id == args[1]]
            return str(len(log_))
        if m == "rejections":
            name = args[0] if args else ""
            if name in self.requesters:
                reasons = [r for _, r in self.requesters[name].rejections]
            elif name in self.owners:
                reasons = [r for _, r in self.owners[name].rejected]
            else:
                raise ScenarioError(f"rejections: unknown actor {name!r}", a.line)
            return ",".join(reasons) or "none"
        if m == "messages":
            if not args or args[0] not in MessageType.__members__:
                raise ScenarioError("messages needs M1..M5", a.line)
            return str(self.count_on_chain(MessageType[args[0]]))
        if m == "errors":
            errs = self.errors if not args else [e for e in self.errors if e["actor"] == args[0]]
            return str(len(errs))
        if m == "chain_valid":
            return str(all(is_valid_chain(n.chain, self.sim.difficulty) for n in self.sim.nodes)).lower()
        if m == "converged":
            return str(self.sim.converged()).lower()
        if m == "blocks":
            return str(len(self.gateway.chain()) - 1)
        raise ScenarioError(f"unknown metric {m!r}", a.line)

    def check(self, a: Assertion) -> AssertionResult:
        actual = self.metric(a)
        expected = a.expected
        try:
            ok = int(actual) == int(expected)
        except ValueError:
            ok = actual.strip().lower() == expected.strip().lower()
        return AssertionResult(a.line, a.text, expected, actual, ok)

    def invariants(self) -> dict[str, dict[str, Any]]:
        out: dict[str, dict[str, Any]] = {}

        def record(name: str, ok: bool, detail: str = "") -> None:
            out[name] = {"passed": bool(ok), "detail": detail}

        chain = self.gateway.chain()
        nodes_ok = all(is_valid_chain(n.chain, self.sim.difficulty) for n in self.sim.nodes)
        record("chain-valid", nodes_ok and self.sim.converged())

        # every submitted transaction landed exactly once
        on_chain = [tx.tx_id for _, tx in chain.transactions()]
        submitted = {tx.tx_id for tx in self.gateway.submitted}
        if self.scenario.network.drop_rate == 0:
            record("ledger-complete", len(on_chain) == len(set(on_chain)) and set(on_chain) == submitted,
                   f"{len(on_chain)} on chain, {len(submitted)} submitted")

        # pub-sub delivered sets against a full chain scan
        bad = []
        for agent in self._agents_with_inbox():
            for sub in agent.inbox.subscribers:
                s = sub.subscription
                oracle = [tx.tx_id for b in chain.blocks[s.start_block:] for tx in b.transactions if s.wants(tx)]
                if [tx.tx_id for tx in sub.delivered] != oracle:
                    bad.append(agent.name)
        record("pubsub-oracle", not bad, ",".join(bad))

        # nothing served without an owner-issued grant
        issued = {(g.request_id, g.data_id, g.grantee) for o in self.owners.values() for g in o.issued}
        unsanctioned = [
            r.data_id for s in self.sources.values() for r in s.served_log
            if (r.request_id, r.data_id, r.grantee) not in issued
        ]
        record("policy-sovereignty", not unsanctioned, ",".join(unsanctioned))

        # owner audit log mirrors the sources' served logs
        if self.scenario.network.drop_rate == 0:
            mismatched = []
            for o in self.owners.values():
                audit = sorted((r.data_id, r.grantee, r.request_id, r.logical_time) for r in o.audit_log)
                served = sorted(
                    (r.data_id, r.grantee, r.request_id, r.logical_time)
                    for s in self.sources.values() for r in s.served_log
                    if r.owner == o.keys.primary.public
                )
                if audit != served:
                    mismatched.append(o.name)
            record("audit-complete", not mismatched, ",".join(mismatched))

        # deny-all owners never answer
        chatty = [
            o.name for o in self.owners.values()
            if o.grant_policy is deny_all and any(
                tx.sender == o.keys.contact.public for _, tx in chain.transactions()
            )
        ]
        record("filtering-autonomy", not chatty, ",".join(chatty))

        # each owner identity is used only for its own message types
        leaks = []
        for o in self.owners.values():
            k = o.keys
            for _, tx in chain.transactions():
                kind = message_type(tx.payload)
                ends = {tx.sender, tx.recipient}
                if k.primary.public in ends and (kind is not MessageType.M1 or tx.recipient != k.primary.public):
                    leaks.append(f"{o.name}.primary")
                if k.contact.public in ends and (kind is not MessageType.M3 or tx.sender != k.contact.public):
                    leaks.append(f"{o.name}.contact")
                if k.callback.public in ends and (kind is not MessageType.M5 or tx.recipient != k.callback.public):
                    leaks.append(f"{o.name}.callback")
        record("identity-separation", not leaks, ",".join(sorted(set(leaks))))
        return out

    def agent_states(self) -> dict[str, Any]:
        n = self.name_of
        label_of = {rid: label for label, (_, rid) in self.requests.items()}
        states: dict[str, Any] = {}
        for name, o in self.owners.items():
            states[name] = {
                "role": "owner",
                "portfolio": [d.data_id for d in o.portfolio],
                "issued": [[label_of.get(g.request_id, g.request_id), g.data_id, n(g.grantee)] for g in o.issued],
                "audit": [
                    [r.data_id, n(r.source), n(r.grantee), r.query, r.logical_time] for r in o.audit()
                ],
                "rejected": [list(r) for r in o.rejected],
            }
        for name, s in self.sources.items():
            states[name] = {
                "role": "source",
                "objects": sorted(s.objects),
                "blacklist": sorted(label_of.get(r, r) for r in s.blacklist),
                "served": [
                    [r.data_id, n(r.owner), n(r.grantee), r.query, r.logical_time] for r in s.served_log
                ],
            }
        for name, r in self.requesters.items():
            states[name] = {
                "role": "requester",
                "requests": sorted(label_of.get(rid, rid) for rid in r.open_requests),
                "grants": {label_of.get(k, k): [i.data_id for i in v] for k, v in r.collected_grants.items()},
                "retrieved": {k: v.decode(errors="replace") for k, v in sorted(r.retrieved.items())},
                "rejections": [[label_of.get(k, k), why] for k, why in r.rejections],
            }
        for name, e in self.endorsers.items():
            states[name] = {"role": "endorser", "endorsed": len(e.endorsed)}
        return states

    def save_chains(self, directory: str | Path) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = []
        for node in self.sim.nodes:
            p = d / f"node{node.node_id}.chain"
            save_chain(node.chain, p)
            paths.append(p)
        return paths


def run_scenario(scenario: Scenario, seed: int | None = None) -> Report:
    return ScenarioRun(scenario, seed).run()
