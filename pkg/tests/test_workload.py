import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shardsim.core import Transaction
from shardsim.workload import (
    PoolExhausted, WorkloadSpec, expected_cross_fraction, expected_shard_degree, generate,
    ids_in_shard, is_cross_shard, make_genesis, measure_gamma, read_jsonl, shard_degree_std,
    utxo_shard, utxo_shards,
)


def test_empty_workload():
    w = generate(WorkloadSpec(tx_count=0), make_genesis(4, 10, 0))
    assert w.txs == [] and w.v_avg == 0.0


def test_fixed_shape_v_avg():
    w = generate(WorkloadSpec(tx_count=100, inputs=2, outputs=3), make_genesis(4, 100, 1))
    assert w.v_avg == 5.0
    assert all(len(t.inputs) == 2 and len(t.outputs) == 3 for t in w.txs)


def test_generate_is_deterministic():
    spec = WorkloadSpec(tx_count=1000, seed=7)
    g = make_genesis(8, 400, 7)
    a, b = io.StringIO(), io.StringIO()
    generate(spec, g).write_jsonl(a)
    generate(spec, g).write_jsonl(b)
    assert a.getvalue() == b.getvalue()


def test_no_input_spent_twice():
    w = generate(WorkloadSpec(tx_count=500, seed=2), make_genesis(4, 400, 2))
    ins = [u for t in w.txs for u in t.inputs]
    assert len(ins) == len(set(ins))


def test_pool_exhausted():
    with pytest.raises(PoolExhausted):
        generate(WorkloadSpec(tx_count=50, inputs=2), make_genesis(2, 10, 0))


def test_dict_count_distribution():
    spec = WorkloadSpec(tx_count=200, inputs={1: 0.5, 2: 0.5}, outputs={1: 1.0}, seed=4)
    w = generate(spec, make_genesis(4, 200, 4))
    sizes = {len(t.inputs) for t in w.txs}
    assert sizes == {1, 2}


def test_intra_placement_is_single_shard():
    w = generate(WorkloadSpec(tx_count=200, placement="intra", seed=5), make_genesis(4, 200, 5))
    assert not any(is_cross_shard(t, 4) for t in w.txs)


def test_edge_placement_needs_unit_shape():
    with pytest.raises(ValueError):
        WorkloadSpec(tx_count=1, placement="edge")


def test_injected_conflicts():
    w = generate(WorkloadSpec(tx_count=50, inject_conflicts=5, seed=9), make_genesis(4, 200, 9))
    by_id = {t.txid: t for t in w.txs}
    assert len(w.conflict_pairs) == 5
    for a, b in w.conflict_pairs:
        assert set(by_id[a].inputs) & set(by_id[b].inputs)


def test_jsonl_round_trip():
    w = generate(WorkloadSpec(tx_count=20, seed=3), make_genesis(4, 50, 3))
    buf = io.StringIO()
    w.write_jsonl(buf)
    assert read_jsonl(buf.getvalue().splitlines()) == w.txs


def test_utxo_shard_single_shard():
    assert {utxo_shard(u, 1) for u in range(100)} == {0}


def test_utxo_shard_stable():
    assert utxo_shard(123456789, 16) == utxo_shard(123456789, 16)


def test_utxo_shard_uniform():
    rng = np.random.default_rng(11)
    ids = rng.integers(0, 1 << 63, size=10**6, dtype=np.int64).astype(np.uint64)
    counts = np.bincount(utxo_shards(ids, 16), minlength=16)
    sd = math.sqrt(10**6 * (1 / 16) * (15 / 16))
    assert np.all(np.abs(counts - 62500) <= 3 * sd)


def test_vectorised_shard_map_matches_scalar():
    ids = [1, 2, 3, 1 << 40, (1 << 62) + 5]
    arr = utxo_shards(np.asarray(ids, dtype=np.uint64), 7)
    assert arr.tolist() == [utxo_shard(u, 7) for u in ids]


def test_is_cross_shard():
    rng = np.random.default_rng(1)
    a, b = ids_in_shard(rng, 0, 4, 1)[0], ids_in_shard(rng, 1, 4, 1)[0]
    same = ids_in_shard(rng, 3, 4, 3)
    assert is_cross_shard(Transaction(1, (a,), (b,)), 4)
    assert not is_cross_shard(Transaction(2, (same[0],), tuple(same[1:])), 4)
    assert not is_cross_shard(Transaction(1, (a,), (b,)), 1)


@pytest.mark.parametrize("m,v,expected", [(16, 2, 0.9375), (4, 3, 0.9375), (1, 2, 0.0), (1, 5, 0.0)])
def test_expected_cross_fraction(m, v, expected):
    assert expected_cross_fraction(m, v) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("m,t,expected", [(5, 0, 0.0), (2, 1, 1 / 3), (4, 10, 3 * (1 - 0.9**10))])
def test_expected_shard_degree(m, t, expected):
    assert expected_shard_degree(m, t) == pytest.approx(expected, abs=1e-12)


def test_expected_shard_degree_value():
    assert expected_shard_degree(4, 10) == pytest.approx(1.9540, abs=1e-4)


def test_gamma_small_cases():
    rng = np.random.default_rng(0)
    a, b = ids_in_shard(rng, 0, 2, 1)[0], ids_in_shard(rng, 1, 2, 1)[0]
    rep = measure_gamma([Transaction(1, (a,), (b,))], 2)
    assert rep.per_shard == (1, 1)
    assert measure_gamma([Transaction(1, (a,), (b,))], 1).mean == 0


def test_gamma_matches_closed_form():
    m, t, trials = 8, 2000, 200
    g = make_genesis(m, 2 * t // m + 200, 1)
    means = [measure_gamma(generate(WorkloadSpec(t, 1, 1, seed=s, placement="edge"), g).txs, m).mean
             for s in range(trials)]
    sd = shard_degree_std(m, t) / math.sqrt(trials)
    assert abs(np.mean(means) - expected_shard_degree(m, t)) <= 3 * sd + 1e-12


@settings(max_examples=40, deadline=None)
@given(m=st.integers(1, 64), v=st.integers(2, 8))
def test_cross_fraction_in_unit_interval(m, v):
    f = expected_cross_fraction(m, v)
    assert 0.0 <= f < 1.0
    assert f <= expected_cross_fraction(m, v + 1) + 1e-15


@settings(max_examples=40, deadline=None)
@given(m=st.integers(2, 40), t=st.integers(0, 5000))
def test_shard_degree_bounded_by_neighbours(m, t):
    d = expected_shard_degree(m, t)
    assert 0.0 <= d <= m - 1
    assert d <= expected_shard_degree(m, t + 1) + 1e-12
