"""Scenario file parser.

A scenario is line-oriented text split into bracketed sections::

    [scenario]            name, seed, difficulty
    [network]             nodes, miners, delay, drop_rate, race, shared_recovery
    [owner O1]            profile, policy, trust, register
    [source S1]
    [requester R1]
    [endorser E1]         feedback
    [events]              TIME ACTOR ACTION ARGS...
    [assert]              METRIC ARGS... = EXPECTED

Blank lines and lines starting with ``#`` are ignored. Event lines are
tokenized with shell quoting rules; ``key=value`` tokens become keyword
arguments. See docs/scenario-format.md for the full grammar.
"""

from __future__ import annotations

import re
import shlex
from dataclasses import dataclass, field
from pathlib import Path

ACTOR_KINDS = ("owner", "source", "requester", "endorser")
_SECTION = re.compile(r"^\[(\w+)(?:\s+([A-Za-z][\w-]*))?\]$")


class ScenarioError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None) -> None:
        where = ""
        if path:
            where = f"{path}:{line}: " if line else f"{path}: "
        elif line:
            where = f"line {line}: "
        super().__init__(where + message)
        self.line = line


@dataclass
class NetworkConfig:
    nodes: int = 3
    miners: int | None = None
    delay: tuple[int, int] = (1, 5)
    drop_rate: float = 0.0
    race: int = 1
    shared_recovery: bool = False


@dataclass
class ActorDecl:
    kind: str
    name: str
    props: dict[str, str] = field(default_factory=dict)
    line: int = 0


@dataclass
class Event:
    time: int
    actor: str
    action: str
    args: list[str] = field(default_factory=list)
    kwargs: dict[str, str] = field(default_factory=dict)
    line: int = 0


@dataclass
class Assertion:
    metric: str
    args: list[str]
    expected: str
    line: int = 0
    text: str = ""


@dataclass
class Scenario:
    name: str
    seed: int = 0
    difficulty: int = 8
    network: NetworkConfig = field(default_factory=NetworkConfig)
    actors: list[ActorDecl] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)
    assertions: list[Assertion] = field(default_factory=list)
    path: str | None = None

    def actor(self, name: str) -> ActorDecl | None:
        return next((a for a in self.actors if a.name == name), None)

    def ordered_events(self) -> list[Event]:
        return sorted(self.events, key=lambda e: (e.time, e.line))


def parse_mapping(text: str) -> dict[str, str]:
    """``"a=1, b=two"`` -> ``{"a": "1", "b": "two"}``."""
    out: dict[str, str] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        key, sep, value = part.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"expected key=value, got {part!r}")
        out[key.strip()] = value.strip()
    return out


def parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _key_value(line: str, lineno: int, path: str | None) -> tuple[str, str]:
    key, sep, value = line.partition("=")
    if not sep or not key.strip():
        raise ScenarioError(f"expected 'key = value', got {line!r}", lineno, path)
    return key.strip(), value.strip()


def _network(cfg: NetworkConfig, key: str, value: str) -> None:
    if key == "nodes":
        cfg.nodes = int(value)
    elif key == "miners":
        cfg.miners = int(value)
    elif key == "delay":
        lo, _, hi = value.partition("..")
        cfg.delay = (int(lo), int(hi or lo))
    elif key == "drop_rate":
        cfg.drop_rate = float(value)
    elif key == "race":
        cfg.race = int(value)
    elif key == "shared_recovery":
        cfg.shared_recovery = parse_bool(value)
    else:
        raise KeyError(key)


def parse_scenario(text: str, path: str | None = None) -> Scenario:
    scn = Scenario(name=Path(path).stem if path else "scenario", path=path)
    section: str | None = None
    current: ActorDecl | None = None
    seen_sections: set[tuple[str, str | None]] = set()

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _SECTION.match(line)
        if m:
            section, name = m.group(1), m.group(2)
            if (section, name) in seen_sections:
                raise ScenarioError(f"duplicate section [{line[1:-1]}]", lineno, path)
            seen_sections.add((section, name))
            current = None
            if section in ACTOR_KINDS:
                if not name:
                    raise ScenarioError(f"[{section}] needs an actor name", lineno, path)
                if scn.actor(name):
                    raise ScenarioError(f"actor {name} declared twice", lineno, path)
                current = ActorDecl(section, name, line=lineno)
                scn.actors.append(current)
            elif section not in ("scenario", "network", "events", "assert") or name:
                raise ScenarioError(f"unknown section {line}", lineno, path)
            continue
        if section is None:
            raise ScenarioError("content before the first section", lineno, path)

        try:
            if section == "scenario":
                key, value = _key_value(line, lineno, path)
                if key == "name":
                    scn.name = value
                elif key == "seed":
                    scn.seed = int(value)
                elif key == "difficulty":
                    scn.difficulty = int(value)
                else:
                    raise ScenarioError(f"unknown scenario key {key!r}", lineno, path)
            elif section == "network":
                key, value = _key_value(line, lineno, path)
                try:
                    _network(scn.network, key, value)
                except KeyError:
                    raise ScenarioError(f"unknown network key {key!r}", lineno, path) from None
            elif current is not None:
                key, value = _key_value(line, lineno, path)
                current.props[key] = value
            elif section == "events":
                scn.events.append(_event(line, lineno, path))
            elif section == "assert":
                scn.assertions.append(_assertion(line, lineno, path))
        except ScenarioError:
            raise
        except ValueError as exc:
            raise ScenarioError(str(exc), lineno, path) from exc

    _check_references(scn)
    return scn


def _event(line: str, lineno: int, path: str | None) -> Event:
    try:
        tokens = shlex.split(line)
    except ValueError as exc:
        raise ScenarioError(f"bad quoting: {exc}", lineno, path) from exc
    if len(tokens) < 3:
        raise ScenarioError("event needs TIME ACTOR ACTION", lineno, path)
    try:
        time = int(tokens[0])
    except ValueError:
        raise ScenarioError(f"event time must be an integer, got {tokens[0]!r}", lineno, path) from None
    ev = Event(time, tokens[1], tokens[2], line=lineno)
    for tok in tokens[3:]:
        key, sep, value = tok.partition("=")
        if sep and re.fullmatch(r"[A-Za-z_][\w-]*", key):
            ev.kwargs[key] = value
        else:
            ev.args.append(tok)
    return ev


def _assertion(line: str, lineno: int, path: str | None) -> Assertion:
    lhs, sep, rhs = line.rpartition("=")
    if not sep or not lhs.strip():
        raise ScenarioError("assertion needs 'METRIC ARGS = EXPECTED'", lineno, path)
    parts = lhs.split()
    return Assertion(parts[0], parts[1:], rhs.strip(), lineno, line)


def _check_references(scn: Scenario) -> None:
    names = {a.name for a in scn.actors}
    for ev in scn.events:
        if ev.actor != "*" and ev.actor not in names:
            raise ScenarioError(f"event names unknown actor {ev.actor!r}", ev.line, scn.path)


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}", path=str(p)) from exc
    return parse_scenario(text, str(p))


def bundled_dir() -> Path:
    return Path(__file__).with_name("scenarios")


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in bundled_dir().glob("*.scn"))


def resolve_scenario(name_or_path: str) -> Path:
    """A file path, or the name of a bundled scenario."""
    p = Path(name_or_path)
    if p.is_file():
        return p
    candidate = bundled_dir() / f"{name_or_path}.scn"
    if candidate.is_file():
        return candidate
    raise ScenarioError(f"no scenario file or bundled scenario named {name_or_path!r}")
