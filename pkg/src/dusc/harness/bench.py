"""Benchmarks for authorization, Bloom filtering and per-message costs.

Every timing is the median of repeated runs after one warmup run. Absolute
numbers depend on the machine; the benchmarks exist to show how costs
scale.
"""

from __future__ import annotations

import csv
import io
import random
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Sequence

from .. import crypto
from ..crypto import KeyPair
from ..ledger import Block, Transaction
from ..protocol import (
    DataAccessPath,
    DataAccessTicket,
    Grant,
    OwnerKeys,
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
    sign_grant,
    verify_m1,
    verify_m2,
    verify_m3,
    verify_m5,
)
from ..pubsub import build_filter, filter_block


def median_time(fn: Callable[[], object], reps: int = 20, warmup: int = 1) -> float:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def linear_fit(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares (slope, intercept, R²)."""
    slope, intercept = statistics.linear_regression(xs, ys)
    mean = statistics.fmean(ys)
    ss_tot = sum((y - mean) ** 2 for y in ys)
    ss_res = sum((y - (slope * x + intercept)) ** 2 for x, y in zip(xs, ys))
    r2 = 1.0 - ss_res / ss_tot if ss_tot else 1.0
    return slope, intercept, r2


def to_csv(rows: Iterable[object]) -> str:
    rows = [r if isinstance(r, dict) else asdict(r) for r in rows]
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


# -- fixtures --------------------------------------------------------------


@dataclass
class AuthFixture:
    source: KeyPair
    requester: KeyPair
    owners: list[KeyPair]
    dats: list[crypto.SealedEnvelope]


def _identity(rng: random.Random) -> KeyPair:
    return crypto.generate_identity(rng.randbytes(32))


def build_auth_fixture(n: int, owners: int = 10, *, seed: int = 0) -> AuthFixture:
    """``n`` valid DATs for one requester at one source, spread over ``owners``."""
    rng = random.Random(seed)
    source = _identity(rng)
    requester = _identity(rng)
    owner_keys = [_identity(rng) for _ in range(owners)]
    callback = _identity(rng)
    dats = []
    for i in range(n):
        owner = owner_keys[i % owners]
        dot = make_dot(source, owner.public, f"obj-{i}", {"type": "x"}, DataAccessPath.parse(f"url:o/{i}"))
        grant = sign_grant(
            Grant(dot.data_id, "req-0", "type=x", owner.public, callback.public, requester.public, 10**6, 0),
            owner,
        )
        dats.append(DataAccessTicket(owner.public, dot, grant).seal())
    return AuthFixture(source, requester, owner_keys, dats)


# -- authorization -----------------------------------------------------------


@dataclass
class AuthRow:
    n: int
    cores: int
    owners: int
    seconds: float
    seconds_per_capability: float


@dataclass
class AuthResult:
    rows: list[AuthRow]
    slope: float
    intercept: float
    r2: float


def time_authorize(fx: AuthFixture, cores: int = 1, reps: int = 20, executor=None) -> float:
    m4 = make_m4(fx.dats, fx.requester, fx.source.public).encode()
    if cores <= 1:
        return median_time(lambda: authorize(m4, fx.source), reps)
    own = executor is None
    ex = executor or ProcessPoolExecutor(cores)
    try:
        return median_time(lambda: authorize(m4, fx.source, executor=ex, workers=cores), reps)
    finally:
        if own:
            ex.shutdown()


def bench_auth(
    capability_counts: Sequence[int] = (100, 1000, 10000),
    cores: Sequence[int] = (1,),
    *,
    owners: int = 10,
    reps: int | Sequence[int] = 20,
    seed: int = 0,
) -> AuthResult:
    """Time ``authorize`` for every (N, C) pair and fit time against N at C=1."""
    reps_for = dict(zip(capability_counts, reps)) if not isinstance(reps, int) else {}
    rows = []
    largest = max(capability_counts)
    fx_all = build_auth_fixture(largest, owners, seed=seed)
    for n in capability_counts:
        fx = AuthFixture(fx_all.source, fx_all.requester, fx_all.owners, fx_all.dats[:n])
        for c in cores:
            t = time_authorize(fx, c, reps_for.get(n, reps if isinstance(reps, int) else 20))
            rows.append(AuthRow(n, c, owners, t, t / n))
    base = [r for r in rows if r.cores == min(cores)]
    if len(base) >= 2:
        slope, intercept, r2 = linear_fit([r.n for r in base], [r.seconds for r in base])
    else:
        slope, intercept, r2 = base[0].seconds_per_capability, 0.0, 1.0
    return AuthResult(rows, slope, intercept, r2)


# -- Bloom filtering -------------------------------------------------------


@dataclass
class BloomRow:
    keys: int
    txns: int
    fp_rate: float
    measured_fp: float
    false_negatives: int
    ns_per_txn: float


def _fake_tx(sender: bytes, recipient: bytes) -> Transaction:
    return Transaction(sender, recipient, b"", 0, b"")


def bench_bloom(
    key_counts: Sequence[int] = (100, 1000, 10000, 100000),
    txns: int = 100_000,
    fp_rate: float = 0.001,
    *,
    seed: int = 0,
    reps: int = 5,
) -> list[BloomRow]:
    """Filter ``txns`` non-matching transactions against filters of growing size.

    The false-positive rate is counted per identity probe against the
    exact key set; every inserted key is probed to count false negatives.
    """
    if txns < 1:
        raise ValueError("need at least one transaction")
    rng = random.Random(seed)
    rows = []
    for n in key_counts:
        keys = [rng.randbytes(64) for _ in range(n)]
        exact = set(keys)
        bloom = build_filter(keys, fp_rate)
        misses = sum(1 for k in keys if k not in bloom)
        probes = []
        while len(probes) < 2 * txns:
            k = rng.randbytes(64)
            if k not in exact:
                probes.append(k)
        block = Block(1, b"", tuple(_fake_tx(probes[2 * i], probes[2 * i + 1]) for i in range(txns)), 0, b"")
        hits = sum(1 for p in probes if p in bloom)
        seconds = median_time(lambda: filter_block(block, bloom), reps)
        rows.append(BloomRow(n, txns, fp_rate, hits / len(probes), misses, seconds / txns * 1e9))
    return rows


# -- per-message costs -----------------------------------------------------


@dataclass
class MessageRow:
    step: str
    role: str
    scale: str
    quantity: int
    cores: int
    seconds: float
    ratio: float | None = None
    ratio_ok: bool | None = None


RATIO_BOUNDS = (5.0, 20.0)


def _requester_world(caps: int, rng: random.Random):
    source = _identity(rng)
    requester = _identity(rng)
    owner = OwnerKeys.generate(rng.randbytes(32))
    dots = [
        make_dot(source, owner.primary.public, f"d{i}", {"type": "x"}, DataAccessPath.parse(f"url:s/{i}"))
        for i in range(caps)
    ]
    rt = make_rt(requester, "type=x", "", 3600, request_id="bench")
    vreq = VerifiedRequest(rt, [], requester.public)
    return source, requester, owner, dots, rt, vreq


def bench_messages(
    capability_counts: Sequence[int] = (1, 10, 100),
    endorser_counts: Sequence[int] = (1, 10),
    cores: Sequence[int] = (1,),
    *,
    reps: int = 20,
    seed: int = 0,
) -> list[MessageRow]:
    rng = random.Random(seed)
    rows: list[MessageRow] = []

    def add(step, role, scale, q, seconds, c=1):
        rows.append(MessageRow(step, role, scale, q, c, seconds))

    # M1 and M5 do not scale with anything
    source, requester, owner, dots, rt, vreq = _requester_world(1, rng)
    token = crypto.sign(source.public, owner.primary)
    m1 = make_m1(source, owner.primary.public, token, dots[0]).encode()
    add("M1 create", "source", "single", 1, median_time(
        lambda: make_m1(source, owner.primary.public, token, dots[0]), reps))
    add("M1 verify", "owner", "single", 1, median_time(lambda: verify_m1(m1, owner.primary), reps))

    # M2 against endorsement chain length
    for e in endorser_counts:
        endorsers = [_identity(rng) for _ in range(e)]
        chain = []
        for k in endorsers:
            chain = endorse(rt, chain, k, "ok")
        m2 = make_m2(rt, chain, requester).encode()
        roots = {k.public for k in endorsers}
        add("M2 create", "requester", "endorsers", e, median_time(lambda: make_m2(rt, chain, requester), reps))
        add("M2 verify", "owner", "endorsers", e, median_time(lambda: verify_m2(m2, roots), reps))

    # M3 and M4 against capability count
    for n in capability_counts:
        source, requester, owner, dots, rt, vreq = _requester_world(n, rng)
        grants = [(d, "type=x") for d in dots]
        m3 = make_m3(owner, grants, vreq)
        raw3 = m3.encode()
        add("M3 create", "owner", "capabilities", n, median_time(lambda: make_m3(owner, grants, vreq), reps))
        add("M3 verify", "requester", "capabilities", n, median_time(lambda: verify_m3(raw3, requester), reps))
        items = verify_m3(raw3, requester).items
        dats = [i.dat for i in items]
        raw4 = make_m4(dats, requester, source.public).encode()
        add("M4 create", "requester", "capabilities", n, median_time(
            lambda: make_m4(dats, requester, source.public), reps))
        for c in cores:
            if c <= 1:
                t = median_time(lambda: authorize(raw4, source), reps)
            else:
                with ProcessPoolExecutor(c) as ex:
                    t = median_time(lambda: authorize(raw4, source, executor=ex, workers=c), reps)
            add("M4 verify", "source", "capabilities", n, t, c)
        if n == capability_counts[0]:
            decision = authorize(raw4, source)
            dat = decision.granted[0].dat
            m5 = make_m5(source, dat, access_time=1).encode()
            add("M5 create", "source", "single", 1, median_time(lambda: make_m5(source, dat, access_time=1), reps))
            add("M5 verify", "owner", "single", 1, median_time(lambda: verify_m5(m5, owner.callback), reps))

    _ratios(rows, capability_counts, endorser_counts)
    order = ["M1 create", "M1 verify", "M2 create", "M2 verify", "M3 create", "M3 verify",
             "M4 create", "M4 verify", "M5 create", "M5 verify"]
    rows.sort(key=lambda r: (order.index(r.step), r.cores, r.quantity))
    return rows


def _ratios(rows: list[MessageRow], caps: Sequence[int], endorsers: Sequence[int]) -> None:
    """Fill the linearity column: time(largest)/time(next) for scaled rows."""
    lo, hi = RATIO_BOUNDS
    for scale, counts in (("capabilities", caps), ("endorsers", endorsers)):
        if len(counts) < 2:
            continue
        big, small = sorted(counts)[-1], sorted(counts)[-2]
        for r in rows:
            if r.scale != scale or r.quantity != big:
                continue
            ref = next(
                (x for x in rows if x.step == r.step and x.cores == r.cores and x.quantity == small), None
            )
            if ref and ref.seconds > 0:
                r.ratio = r.seconds / ref.seconds
                r.ratio_ok = lo <= r.ratio <= hi


def message_ratio(rows: Sequence[MessageRow], step: str, cores: int = 1) -> float | None:
    for r in rows:
        if r.step == step and r.cores == cores and r.ratio is not None:
            return r.ratio
    return None
