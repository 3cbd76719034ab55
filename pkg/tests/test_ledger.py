"""Blocks, chains, fork resolution, persistence and the network simulator."""

import random
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from dusc.ledger import (
    BROADCAST,
    Block,
    Chain,
    ChainFileError,
    InvalidBlock,
    LedgerError,
    NetworkSim,
    Transaction,
    dump_chain,
    genesis,
    is_valid_chain,
    leading_zero_bits,
    load_chain,
    make_transaction,
    mine,
    parse_chain,
    resolve,
    retrieve,
    save_chain,
    validate_block,
    validate_chain,
)

from helpers import key

DIFF = 6


def _txs(n, start=0, sender="alice"):
    kp = key(sender)
    return [make_transaction(kp, key(f"r{i % 3}").public, f"payload-{i}".encode(), i) for i in range(start, start + n)]


def build_chain(blocks=20, per_block=2, difficulty=DIFF):
    chain = Chain()
    for b in range(blocks):
        chain = chain.append(mine(_txs(per_block, b * per_block), chain.tip, difficulty))
    return chain


@pytest.fixture(scope="module")
def chain20():
    return build_chain(20)


def test_leading_zero_bits_oracle():
    assert leading_zero_bits(b"\xff" + bytes(31)) == 0
    assert leading_zero_bits(b"\x01" + bytes(31)) == 7
    assert leading_zero_bits(bytes(2) + b"\x10") == 19
    assert leading_zero_bits(bytes(4)) == 32


def test_mined_blocks_meet_difficulty(chain20):
    assert len(chain20) == 21
    for b in chain20.blocks[1:]:
        assert leading_zero_bits(b.block_hash) >= DIFF
        assert b.compute_hash() == b.block_hash
    validate_chain(chain20, DIFF)
    assert not is_valid_chain(chain20, 40)


def test_genesis_is_fixed():
    assert genesis() == Chain().tip and genesis().index == 0
    assert genesis().transactions == ()


def test_mine_takes_oldest_first_and_caps():
    txs = _txs(5)
    b = mine(txs, genesis(), 2, max_txs=3)
    assert b.transactions == tuple(txs[:3])
    with pytest.raises(LedgerError):
        mine([], genesis(), 2)
    assert mine([], genesis(), 2, allow_empty=True).transactions == ()


def test_transaction_round_trip_and_signature():
    tx = _txs(1)[0]
    assert Transaction.decode(tx.encode()) == tx
    assert tx.verify()
    assert not replace(tx, payload=b"other").verify()
    assert make_transaction(key("a"), BROADCAST, b"x", 1).is_broadcast


class TestValidateBlock:
    def _pair(self):
        prev = mine(_txs(1), genesis(), DIFF)
        return prev, mine(_txs(2, 10), prev, DIFF)

    @pytest.mark.parametrize(
        "mutate, check",
        [
            (lambda b: replace(b, index=b.index + 1), "index"),
            (lambda b: replace(b, prev_hash=bytes(32)), "prev-hash"),
            (lambda b: replace(b, transactions=(replace(b.transactions[0], payload=b"evil"),) + b.transactions[1:]),
             "tx-signature"),
            (lambda b: replace(b, transactions=(b.transactions[0], b.transactions[0])), "duplicate-tx"),
            (lambda b: replace(b, nonce=b.nonce + 1), "block-hash"),
            (lambda b: replace(b, transactions=b.transactions[:1]), "block-hash"),
        ],
    )
    def test_each_check(self, mutate, check):
        prev, block = self._pair()
        validate_block(block, prev, DIFF)
        with pytest.raises(InvalidBlock) as exc:
            validate_block(mutate(block), prev, DIFF)
        assert exc.value.check == check and exc.value.index in (block.index, block.index + 1)

    def test_difficulty(self):
        prev, block = self._pair()
        with pytest.raises(InvalidBlock) as exc:
            validate_block(block, prev, leading_zero_bits(block.block_hash) + 1)
        assert exc.value.check == "difficulty"


def _tamper(block, how, rng):
    if how == "nonce":
        return replace(block, nonce=block.nonce ^ 1)
    if how == "payload":
        i = rng.randrange(len(block.transactions))
        txs = list(block.transactions)
        txs[i] = replace(txs[i], payload=txs[i].payload + b"!")
        return replace(block, transactions=tuple(txs))
    if how == "drop":
        return replace(block, transactions=block.transactions[1:])
    if how == "hash":
        h = bytearray(block.block_hash)
        h[-1] ^= 1
        return replace(block, block_hash=bytes(h))
    raise AssertionError(how)


@pytest.mark.parametrize("how", ["nonce", "payload", "drop", "hash"])
def test_tamper_and_scan_every_position(chain20, how):
    """Oracle: tampering block k is reported at block k, whatever k is."""
    rng = random.Random(how)
    for k in range(1, len(chain20)):
        blocks = list(chain20.blocks)
        blocks[k] = _tamper(blocks[k], how, rng)
        with pytest.raises(InvalidBlock) as exc:
            validate_chain(blocks, DIFF)
        # a bad stored hash can still be found at k+1 via its prev link
        assert exc.value.index in ((k, k + 1) if how == "hash" else (k,)), (k, exc.value)


def test_remined_block_breaks_its_successor(chain20):
    for k in range(1, len(chain20) - 1):
        blocks = list(chain20.blocks)
        blocks[k] = mine(_txs(1, 999), blocks[k - 1], DIFF)
        with pytest.raises(InvalidBlock) as exc:
            validate_chain(blocks, DIFF)
        assert (exc.value.index, exc.value.check) == (k + 1, "prev-hash")


def test_duplicate_across_blocks_and_bad_genesis():
    tx = _txs(1)
    a = mine(tx, genesis(), DIFF)
    b = mine(tx, a, DIFF)
    with pytest.raises(InvalidBlock) as exc:
        validate_chain([genesis(), a, b], DIFF)
    assert (exc.value.check, exc.value.index) == ("duplicate-tx", 2)
    with pytest.raises(InvalidBlock) as exc:
        validate_chain([a], DIFF)
    assert exc.value.check == "genesis"


class TestResolve:
    def test_longer_valid_wins(self):
        short = build_chain(2)
        long = build_chain(3)
        assert resolve(short, long, DIFF) is long
        assert resolve(long, short, DIFF) is long

    def test_equal_length_keeps_local(self):
        a = Chain().append(mine(_txs(1), genesis(), DIFF))
        b = Chain().append(mine(_txs(1, 5), genesis(), DIFF))
        assert resolve(a, b, DIFF) is a

    def test_longer_invalid_is_refused(self):
        long = build_chain(3)
        bad = Chain(long.blocks[:-1] + (replace(long.tip, nonce=long.tip.nonce + 1),))
        local = build_chain(1)
        assert resolve(local, bad, DIFF) is local

    def test_fork_switch(self):
        base = build_chain(2)
        a = base.append(mine(_txs(1, 100), base.tip, DIFF))
        b = base.append(mine(_txs(1, 200), base.tip, DIFF))
        b = b.append(mine(_txs(1, 300), b.tip, DIFF))
        assert resolve(a, b, DIFF) is b


def test_retrieve_ranges(chain20):
    assert [b.index for b in retrieve(chain20, 5, 8)] == [5, 6, 7]
    assert len(retrieve(chain20, 0)) == 21
    assert retrieve(chain20, 50) == []
    with pytest.raises(ValueError):
        retrieve(chain20, -1)


class TestStorage:
    def test_round_trip(self, chain20, tmp_path):
        path = tmp_path / "c.chain"
        save_chain(chain20, path)
        assert load_chain(path, DIFF) == chain20
        assert parse_chain(dump_chain(chain20)) == chain20

    def test_bad_magic(self):
        with pytest.raises(ChainFileError):
            parse_chain(b"NOTACHAIN")

    def test_truncation_is_an_error(self, chain20):
        raw = dump_chain(chain20)
        for cut in (len(raw) - 1, len(raw) - 40, 10):
            with pytest.raises(ChainFileError):
                parse_chain(raw[:cut])

    def test_garbled_entry(self, chain20):
        raw = bytearray(dump_chain(build_chain(1)))
        raw[12:16] = b"\xff\xff\xff\xff"
        with pytest.raises(ChainFileError):
            parse_chain(bytes(raw))

    def test_load_with_difficulty_validates(self, tmp_path):
        chain = build_chain(2)
        bad = Chain(chain.blocks[:-1] + (replace(chain.tip, nonce=chain.tip.nonce + 1),))
        path = tmp_path / "bad.chain"
        save_chain(bad, path)
        assert load_chain(path) == bad
        with pytest.raises(InvalidBlock):
            load_chain(path, DIFF)

    @settings(max_examples=15)
    @given(st.lists(st.binary(max_size=40), max_size=6))
    def test_round_trip_arbitrary_payloads(self, payloads):
        kp = key("p")
        txs = [make_transaction(kp, BROADCAST, p, i) for i, p in enumerate(payloads)]
        chain = Chain().append(mine(txs, genesis(), 1, allow_empty=True))
        assert parse_chain(dump_chain(chain)) == chain


class TestNetwork:
    def _flood(self, sim, n=40, seed=0):
        rng = random.Random(seed)
        submitted = []
        for i in range(n):
            tx = make_transaction(key(f"s{i % 4}"), key("r").public, f"m{i}".encode(), sim.clock.tick())
            sim.submit(rng.randrange(len(sim.nodes)), tx)
            submitted.append(tx)
            if i % 7 == 0:
                sim.mine_round(race=2)
                for _ in range(rng.randrange(3)):
                    sim.step()
        return submitted

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_five_nodes_converge_with_every_tx_once(self, seed):
        sim = NetworkSim(5, seed=seed, difficulty=DIFF, delay=(1, 9), drop_rate=0.0)
        submitted = self._flood(sim, seed=seed)
        sim.run_until_quiescent(race=2)
        chains = {dump_chain(n.chain) for n in sim.nodes}
        assert len(chains) == 1
        chain = sim.nodes[0].chain
        validate_chain(chain, DIFF)
        on_chain = [t.tx_id for _, t in chain.transactions()]
        assert sorted(on_chain) == sorted(t.tx_id for t in submitted)
        assert len(on_chain) == len(set(on_chain))

    def test_same_seed_same_chain(self):
        def run():
            sim = NetworkSim(4, seed=9, difficulty=DIFF)
            self._flood(sim, 20, seed=9)
            sim.run_until_quiescent(race=3)
            return dump_chain(sim.nodes[0].chain)

        assert run() == run()

    def test_drops_are_healed_by_relay(self):
        sim = NetworkSim(5, seed=3, difficulty=DIFF, drop_rate=0.3)
        submitted = self._flood(sim, 20, seed=3)
        sim.run_until_quiescent()
        assert sim.converged()
        assert sim.nodes[0].chain.tx_ids() >= {t.tx_id for t in submitted if t.tx_id in sim.nodes[0].seen}

    def test_bad_signature_is_refused_at_ingress(self):
        sim = NetworkSim(2, difficulty=DIFF)
        tx = replace(_txs(1)[0], payload=b"forged")
        with pytest.raises(LedgerError):
            sim.submit(0, tx)
        assert sim.nodes[0].rejected == 1

    def test_resubmission_is_ignored(self):
        sim = NetworkSim(2, difficulty=DIFF)
        tx = _txs(1)[0]
        assert sim.submit(0, tx) and not sim.submit(0, tx)

    def test_needs_a_miner(self):
        sim = NetworkSim(2, miners=0, difficulty=DIFF)
        sim.submit(0, _txs(1)[0])
        with pytest.raises(LedgerError):
            sim.run_until_quiescent()

    def test_clock_is_monotone(self):
        sim = NetworkSim(1)
        assert [sim.clock.tick() for _ in range(3)] == [1, 2, 3]


def test_retrieve_concatenation_sweep(chain20):
    whole = retrieve(chain20, 0)
    for k in range(len(chain20) + 2):
        assert retrieve(chain20, 0, k) + retrieve(chain20, k) == whole
