import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shardsim.assignment import (
    Assignment, ChurnBudgetExceeded, all_honest_exact, assign_uniform, check_a_honest,
    chernoff_violation_bound, cuckoo_step, exact_shard_violation_prob, max_safe_shards,
    min_log_coefficient, read_assignment_csv, reshuffle_full, violation_counts,
)


def test_single_shard():
    a = assign_uniform(50, 1, 0)
    assert set(a.shards.tolist()) == {0}


def test_uniform_sizes():
    n, m = 10**5, 10
    sizes = assign_uniform(n, m, 3).shard_sizes
    sd = math.sqrt(n * (1 / m) * (1 - 1 / m))
    assert np.all(np.abs(sizes - n / m) <= 3 * sd)


def test_assign_deterministic():
    assert np.array_equal(assign_uniform(100, 4, 9).shards, assign_uniform(100, 4, 9).shards)
    assert not np.array_equal(assign_uniform(100, 4, 9).shards, assign_uniform(100, 4, 10).shards)


def test_assign_rejects_bad_sizes():
    with pytest.raises(ValueError):
        assign_uniform(3, 5, 0)


def test_csv_round_trip():
    a = assign_uniform(40, 4, 2)
    buf = io.StringIO()
    a.write_csv(buf)
    assert buf.getvalue().splitlines()[0] == "party_id,shard_id"
    buf.seek(0)
    b = read_assignment_csv(buf, 4)
    assert np.array_equal(a.parties, b.parties) and np.array_equal(a.shards, b.shards)


def test_reshuffle_advances_epoch():
    a = assign_uniform(200, 4, 1)
    b = reshuffle_full(a, 1)
    assert b.epoch == 1 and b.n == 200
    assert not np.array_equal(a.shards, b.shards)


def test_honest_with_no_corruption():
    assert check_a_honest(assign_uniform(100, 5, 0), [], 0.1).all_a_honest


def test_whole_shard_corrupt():
    a = assign_uniform(100, 5, 0)
    assert not check_a_honest(a, a.members(0).tolist(), 0.5).all_a_honest


def test_a_honest_boundary_is_inclusive():
    a = Assignment(0, 1, np.arange(3), np.zeros(3, dtype=np.int64))
    assert check_a_honest(a, [0], 1 / 3).all_a_honest
    assert not check_a_honest(a, [0, 1], 1 / 3).all_a_honest
    assert violation_counts(np.array([3, 3]), np.array([1, 2]), 1 / 3).tolist() == [False, True]


@pytest.mark.parametrize("a,p,c,expected", [(1 / 3, 1 / 4, 1, 300), (1 / 2, 1 / 3, 1, 78),
                                            (1 / 2, 1 / 3, 2, 156)])
def test_min_log_coefficient(a, p, c, expected):
    assert min_log_coefficient(a, p, c) == pytest.approx(expected, rel=1e-12)


def test_min_log_coefficient_domain():
    with pytest.raises(ValueError):
        min_log_coefficient(0.25, 0.3)
    with pytest.raises(ValueError):
        min_log_coefficient(0.5, 0.3, 0)


@pytest.mark.parametrize("n,a,p,m", [(10**6, 1 / 3, 1 / 4, 241), (10**6, 1 / 2, 1 / 3, 927)])
def test_max_safe_shards(n, a, p, m):
    res = max_safe_shards(n, a, p)
    assert res.m == m and not res.vacuous


def test_max_safe_shards_vacuous():
    res = max_safe_shards(1000, 1 / 3, 1 / 4)
    assert res.m == 1 and res.vacuous and res.raw < 1


def test_exact_tail_below_chernoff():
    for m in (5, 10, 20):
        assert exact_shard_violation_prob(4000, 1000, m, 1 / 3) <= chernoff_violation_bound(4000, m, 1 / 3, 1 / 4)


def test_all_honest_exact_against_brute_force():
    n, f, m, a = 30, 9, 3, 1 / 3
    rng = np.random.default_rng(5)
    trials = 40_000
    shards = rng.integers(0, m, size=(trials, n))
    corrupt = np.zeros(n, dtype=bool)
    corrupt[:f] = True
    sizes = np.stack([(shards == s).sum(1) for s in range(m)], 1)
    bad = np.stack([((shards == s) & corrupt).sum(1) for s in range(m)], 1)
    freq = (~violation_counts(sizes, bad, a).any(1)).mean()
    p = all_honest_exact(n, f, m, a)
    sd = math.sqrt(p * (1 - p) / trials)
    assert abs(freq - p) <= 3 * sd


def test_all_honest_exact_reference_values():
    assert all_honest_exact(4000, 1000, 5, 1 / 3) == pytest.approx(0.99999999196, abs=1e-9)
    assert all_honest_exact(4000, 1000, 10, 1 / 3) == pytest.approx(0.99960368, abs=1e-7)


def test_cuckoo_no_op():
    a = assign_uniform(100, 4, 0)
    b = cuckoo_step(a, [], [], 0, 0)
    assert np.array_equal(a.shards, b.shards) and b.epoch == 1


def test_cuckoo_tie_break_lowest_index():
    a = Assignment(0, 2, np.arange(4), np.array([0, 0, 1, 1]))
    b = cuckoo_step(a, [99], [], 0, 0)
    assert b.shard_of(99) == 0


def test_cuckoo_churn_budget():
    a = assign_uniform(100, 4, 0)
    with pytest.raises(ChurnBudgetExceeded):
        cuckoo_step(a, list(range(200, 210)), [], 1, 0, churn_budget=8)


def test_cuckoo_stays_balanced():
    runs, ok = 10, 0
    for run in range(runs):
        rng = np.random.default_rng(run)
        a = assign_uniform(4000, 8, run)
        nxt, worst = 4000, 1.0
        for _ in range(2000):
            leaves = rng.choice(a.parties, size=2, replace=False).tolist()
            a = cuckoo_step(a, [nxt, nxt + 1], leaves, 1, run)
            nxt += 2
            s = a.shard_sizes
            worst = max(worst, s.max() / s.min())
        ok += worst <= 2
    assert ok / runs >= 0.99


@settings(max_examples=30, deadline=None)
@given(n=st.integers(10, 400), m=st.integers(1, 10), seed=st.integers(0, 2**32))
def test_assignment_is_a_partition(n, m, seed):
    m = min(m, n)
    a = assign_uniform(n, m, seed)
    assert a.shard_sizes.sum() == n
    assert a.shards.min() >= 0 and a.shards.max() < m
    b = cuckoo_step(a, [n, n + 1], [0], 1, seed)
    assert sorted(b.parties.tolist()) == list(range(1, n + 2))


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.05, 0.5), gap=st.floats(0.01, 0.9))
def test_coefficient_grows_as_gap_closes(a, gap):
    p = a * (1 - gap)
    assert min_log_coefficient(a, p) >= min_log_coefficient(a, a * (1 - min(0.95, gap + 0.05))) - 1e-9
