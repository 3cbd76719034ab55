"""Command-line entry point.

Exit codes: 0 success, 1 assertion or check failure, 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from .. import crypto
from ..ledger import ChainFileError, is_valid_chain, load_chain
from ..protocol import OwnerKeys, message_type
from . import bench
from .runner import Report, ScenarioRun
from .scenario import ScenarioError, bundled_scenarios, load_scenario, resolve_scenario

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _seed_bytes(text: str | None) -> bytes | None:
    if text is None:
        return None
    try:
        return crypto.seed_from_int(int(text))
    except ValueError:
        return crypto.seed_from_label(text)


def _emit(text: str, path: str | None) -> None:
    if path and path != "-":
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# -- keygen ----------------------------------------------------------------


def cmd_keygen(args) -> int:
    seed = _seed_bytes(args.seed)
    if args.owner:
        keys = OwnerKeys.generate(seed)
        out = {
            role: {"public": kp.public.hex(), "private": kp.private.hex()}
            for role, kp in (("primary", keys.primary), ("contact", keys.contact), ("callback", keys.callback))
        }
    else:
        kp = crypto.generate_identity(seed)
        out = {"public": kp.public.hex(), "private": kp.private.hex()}
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


# -- scenario --------------------------------------------------------------


def _run(target: str, seed: int | None) -> tuple[ScenarioRun, Report]:
    run = ScenarioRun(load_scenario(resolve_scenario(target)), seed)
    return run, run.run()


def cmd_scenario_run(args) -> int:
    run, report = _run(args.file, args.seed)
    if args.json:
        _emit(report.to_json() + "\n", args.json)
    if args.chain_dir:
        run.save_chains(args.chain_dir)
    if args.json != "-":
        for a in report.assertions:
            status = "PASS" if a.passed else "FAIL"
            print(f"{status}  line {a.line}: {a.text}" + ("" if a.passed else f"  (actual {a.actual})"))
        for name, inv in report.invariants.items():
            status = "PASS" if inv["passed"] else "FAIL"
            print(f"{status}  invariant {name}" + (f": {inv['detail']}" if inv["detail"] else ""))
        for e in report.errors:
            print(f"note  line {e['line']}: {e['actor']} {e['action']}: {e['error']}")
        verdict = "passed" if report.passed else "FAILED"
        print(f"{report.scenario} (seed {report.seed}) {verdict}; trace {report.trace_digest[:16]}, "
              f"{len(report.trace)} transactions, {report.timings['run_seconds']:.2f}s")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_scenario_list(args) -> int:
    for name in bundled_scenarios():
        print(name)
    return EXIT_OK


# -- bench -----------------------------------------------------------------


def cmd_bench_auth(args) -> int:
    result = bench.bench_auth(args.caps, args.cores, owners=args.owners, reps=args.reps, seed=args.seed)
    _emit(bench.to_csv(result.rows), args.csv)
    print(f"# fit: seconds = {result.slope:.3e} * N + {result.intercept:.3e}; R^2 = {result.r2:.4f}",
          file=sys.stderr)
    return EXIT_OK


def cmd_bench_bloom(args) -> int:
    rows = bench.bench_bloom(args.keys, args.txns, args.fp_rate, seed=args.seed)
    _emit(bench.to_csv(rows), args.csv)
    return EXIT_OK if all(r.false_negatives == 0 for r in rows) else EXIT_FAIL


def cmd_bench_messages(args) -> int:
    rows = bench.bench_messages(args.caps, args.endorsers, args.cores, reps=args.reps, seed=args.seed)
    _emit(bench.to_csv(rows), args.csv)
    return EXIT_OK


# -- ledger ----------------------------------------------------------------


def cmd_ledger_inspect(args) -> int:
    names: dict[bytes, str] = {}
    if args.chain:
        chain = load_chain(args.chain)
        difficulty = args.difficulty
    else:
        run, _ = _run(args.scenario, args.seed)
        if not 0 <= args.node < len(run.sim.nodes):
            raise ScenarioError(f"node {args.node} does not exist")
        chain = run.sim.nodes[args.node].chain
        difficulty = run.sim.difficulty
        names = run.identity_names
    label = lambda k: names.get(k, crypto.short(k))  # noqa: E731
    blocks = []
    for b in chain.blocks[args.from_index:args.to_index]:
        blocks.append({
            "index": b.index,
            "hash": b.block_hash.hex(),
            "prev_hash": b.prev_hash.hex(),
            "nonce": b.nonce,
            "transactions": [
                {
                    "tx_id": t.tx_id.hex(),
                    "type": getattr(message_type(t.payload), "name", "?"),
                    "sender": label(t.sender),
                    "recipient": label(t.recipient),
                    "logical_time": t.logical_time,
                    "bytes": len(t.payload),
                }
                for t in b.transactions
            ],
        })
    valid = is_valid_chain(chain, difficulty) if difficulty is not None else None
    if args.json:
        print(json.dumps({"length": len(chain), "valid": valid, "blocks": blocks}, indent=2))
    else:
        print(f"chain length {len(chain)}, valid: {'unchecked' if valid is None else valid}")
        for b in blocks:
            print(f"block {b['index']:>4}  {b['hash'][:16]}  nonce {b['nonce']}  {len(b['transactions'])} txs")
            for t in b["transactions"]:
                print(f"       {t['type']:<3} {t['sender']} -> {t['recipient']}  t={t['logical_time']}")
    return EXIT_OK if valid is not False else EXIT_FAIL


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dusc", description="User-centric access control simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    kg = sub.add_parser("keygen", help="print a key pair as JSON")
    kg.add_argument("--seed", help="integer or text seed for a reproducible key")
    kg.add_argument("--owner", action="store_true", help="print an owner's three identities")
    kg.set_defaults(func=cmd_keygen)

    sc = sub.add_parser("scenario", help="run scenario files").add_subparsers(dest="sub", required=True)
    run = sc.add_parser("run", help="run a scenario file or bundled scenario")
    run.add_argument("file", help="path, or name of a bundled scenario")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--json", metavar="PATH", help="write the full report ('-' for stdout)")
    run.add_argument("--chain-dir", metavar="DIR", help="save every node's chain here")
    run.set_defaults(func=cmd_scenario_run)
    ls = sc.add_parser("list", help="list bundled scenarios")
    ls.set_defaults(func=cmd_scenario_list)

    bn = sub.add_parser("bench", help="benchmarks (CSV on stdout or --csv)").add_subparsers(
        dest="sub", required=True)
    ba = bn.add_parser("auth", help="authorization time against capability count")
    ba.add_argument("--caps", type=_int_list, default=[100, 1000, 10000])
    ba.add_argument("--cores", type=_int_list, default=[1])
    ba.add_argument("--owners", type=int, default=10)
    ba.add_argument("--reps", type=int, default=20)
    ba.add_argument("--seed", type=int, default=0)
    ba.add_argument("--csv", metavar="PATH")
    ba.set_defaults(func=cmd_bench_auth)
    bb = bn.add_parser("bloom", help="Bloom filter cost and false-positive rate")
    bb.add_argument("--keys", type=_int_list, default=[100, 1000, 10000, 100000])
    bb.add_argument("--txns", type=int, default=100_000)
    bb.add_argument("--fp-rate", type=float, default=0.001)
    bb.add_argument("--seed", type=int, default=0)
    bb.add_argument("--csv", metavar="PATH")
    bb.set_defaults(func=cmd_bench_bloom)
    bm = bn.add_parser("messages", help="create/verify cost of M1-M5")
    bm.add_argument("--caps", type=_int_list, default=[1, 10, 100])
    bm.add_argument("--endorsers", type=_int_list, default=[1, 10])
    bm.add_argument("--cores", type=_int_list, default=[1])
    bm.add_argument("--reps", type=int, default=20)
    bm.add_argument("--seed", type=int, default=0)
    bm.add_argument("--csv", metavar="PATH")
    bm.set_defaults(func=cmd_bench_messages)

    lg = sub.add_parser("ledger", help="ledger tools").add_subparsers(dest="sub", required=True)
    li = lg.add_parser("inspect", help="print a node's chain")
    src = li.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", metavar="FILE", help="run this scenario and inspect the result")
    src.add_argument("--chain", metavar="PATH", help="a chain file saved by 'scenario run --chain-dir'")
    li.add_argument("--seed", type=int)
    li.add_argument("--node", type=int, default=0)
    li.add_argument("--from", dest="from_index", type=int, default=0)
    li.add_argument("--to", dest="to_index", type=int)
    li.add_argument("--difficulty", type=int, help="validate a chain file at this difficulty")
    li.add_argument("--json", action="store_true")
    li.set_defaults(func=cmd_ledger_inspect)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, ChainFileError, OSError) as exc:
        print(f"dusc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
