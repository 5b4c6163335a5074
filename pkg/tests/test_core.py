import pytest

from shardsim.core import (
    InvalidBlock, PartyView, RecordKind, ShardLedger, SystemParams, Transaction, VerifyStatus,
    conflicts, oracle_verify, report_position, stable_prefix,
)
from shardsim.workload import ids_in_shard, utxo_shard

import numpy as np


def tx(txid, ins, outs, **kw):
    return Transaction(txid, tuple(ins), tuple(outs), **kw)


def chain_of(blocks, per_block):
    led = ShardLedger(0, genesis=frozenset(range(1000, 1000 + blocks * per_block)))
    nxt = 1000
    for b in range(blocks):
        txs = []
        for _ in range(per_block):
            txs.append(tx(nxt, [nxt], [nxt + 10_000]))
            nxt += 1
        led.append(txs)
    return led


def test_conflicts_shared_input():
    assert conflicts(tx(1, [1], [9]), tx(2, [1, 2], [8]))


def test_conflicts_self_and_disjoint():
    t = tx(1, [1], [9])
    assert not conflicts(t, t)
    assert not conflicts(t, tx(2, [2], [8]))


def test_records_of_same_user_tx_do_not_conflict():
    a = tx(10, [1], [], kind=RecordKind.LOCK, ref=5)
    b = tx(11, [1], [], kind=RecordKind.COMMIT, ref=5)
    assert not conflicts(a, b)


def test_transaction_rejects_duplicates_and_empty():
    with pytest.raises(ValueError):
        tx(1, [1, 1], [2])
    with pytest.raises(ValueError):
        tx(1, [1], [2, 2])
    with pytest.raises(ValueError):
        tx(1, [], [2])


def test_oracle_valid_on_genesis():
    led = ShardLedger(0, genesis=frozenset({1}))
    assert oracle_verify(tx(1, [1], [2]), led).status is VerifyStatus.VALID


def test_oracle_conflicting_after_spend():
    led = ShardLedger(0, genesis=frozenset({1}))
    led.append([tx(1, [1], [2])])
    res = oracle_verify(tx(2, [1], [3]), led)
    assert res.status is VerifyStatus.CONFLICTING
    assert res.with_txid == 1


def test_oracle_missing_foreign_input():
    m = 4
    rng = np.random.default_rng(3)
    mine = ids_in_shard(rng, 0, m, 5)
    foreign = ids_in_shard(rng, 2, m, 1)[0]
    led = ShardLedger(0, genesis=frozenset(mine))
    assert utxo_shard(foreign, m) != 0
    assert foreign not in led.genesis
    res = oracle_verify(tx(1, [foreign], [7]), led)
    assert res.status is VerifyStatus.MISSING_INPUT
    assert res.utxo == foreign


def test_oracle_counts_calls():
    calls = []
    led = ShardLedger(0, genesis=frozenset({1}))
    oracle_verify(tx(1, [1], [2]), led, party=7, hook=calls.append)
    assert calls == [7]


def test_create_record_admits_foreign_output():
    led = ShardLedger(1)
    led.append([tx(5, [], [42], kind=RecordKind.CREATE, origin="proof", ref=3)])
    assert led.utxo_active(42)
    assert oracle_verify(tx(6, [42], [43]), led).ok


def test_lock_commit_abort_cycle():
    led = ShardLedger(0, genesis=frozenset({1, 2}))
    led.append([tx(10, [1], [], kind=RecordKind.LOCK, ref=9)])
    assert not led.utxo_active(1)
    assert led.check(tx(11, [1], [5])).status is VerifyStatus.CONFLICTING
    led.append([tx(12, [1], [], kind=RecordKind.ABORT, ref=9)])
    assert led.utxo_active(1)
    led.append([tx(13, [2], [], kind=RecordKind.LOCK, ref=8)])
    led.append([tx(14, [2], [], kind=RecordKind.COMMIT, ref=8)])
    assert not led.utxo_active(2)


def test_append_validates_and_capacity():
    led = ShardLedger(0, genesis=frozenset({1}), capacity=1)
    with pytest.raises(InvalidBlock):
        led.append([tx(1, [1], [2]), tx(2, [3], [4])])
    with pytest.raises(InvalidBlock):
        led.append([tx(1, [99], [2])])
    assert len(led) == 0


def test_truncate_rebuilds_index():
    led = ShardLedger(0, genesis=frozenset({1}))
    led.append([tx(1, [1], [2])])
    dropped = led.truncate(0)
    assert len(dropped) == 1
    assert led.utxo_active(1) and not led.utxo_active(2)
    assert led.tx_count == 0


@pytest.mark.parametrize("blocks,per,k,expected", [(5, 1, 5, 0), (5, 1, 0, 5), (7, 2, 3, 8)])
def test_stable_prefix(blocks, per, k, expected):
    led = chain_of(blocks, per)
    assert len(stable_prefix(led, k)) == expected
    assert led.stable_tx_count(k) == expected


def test_stable_prefix_negative_k():
    with pytest.raises(ValueError):
        stable_prefix(ShardLedger(0), -1)


def test_report_position():
    led = chain_of(5, 1)
    k = 2
    view = PartyView(0, True, {0: led})
    target = led.chain[2].txs[0].txid
    assert report_position(view, target, k) == [(0, 2, 0)]
    recent = led.chain[-1].txs[0].txid
    assert report_position(view, recent, k) == []
    assert report_position(view, 123456789, k) == []


def test_report_position_frozen_copy():
    led = chain_of(5, 1)
    view = PartyView(0, True, {0: led}, frozen={0: 2})
    assert report_position(view, led.chain[1].txs[0].txid, 1) == []
    assert report_position(view, led.chain[0].txs[0].txid, 1) == [(0, 0, 0)]


def test_system_params_bounds():
    p = SystemParams(n=100, f=25, m=4, a=1 / 3)
    assert p.p == 0.25
    with pytest.raises(ValueError):
        SystemParams(n=100, f=40, m=4, a=1 / 3)
    with pytest.raises(ValueError):
        SystemParams(n=100, f=10, m=0)
