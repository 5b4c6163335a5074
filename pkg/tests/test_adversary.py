import math

import numpy as np
import pytest

from shardsim.adversary import (
    AdversaryKind, AdversaryModel, BudgetExceeded, Strategy, TakeoverSetup, adaptive_takeover_demo,
    assert_budget, corrupt_for_epoch, elastico_double_spend, elastico_runs_with_success,
    input_set_shard, monoxide_resilience, slowly_adaptive_epochs, worst_shard_fraction,
)
from shardsim.assignment import assign_uniform

PARTIES = list(range(100))


def test_zero_budget():
    assert corrupt_for_epoch(AdversaryModel(AdversaryKind.STATIC, 0), 0, PARTIES, 1) == frozenset()


def test_static_set_is_fixed():
    model = AdversaryModel(AdversaryKind.STATIC, 20)
    assert corrupt_for_epoch(model, 1, PARTIES, 3) == corrupt_for_epoch(model, 2, PARTIES, 3)


def test_slowly_adaptive_changes_between_epochs():
    model = AdversaryModel(AdversaryKind.SLOWLY_ADAPTIVE, 20, Strategy.UNIFORM)
    assert corrupt_for_epoch(model, 1, PARTIES, 3) != corrupt_for_epoch(model, 2, PARTIES, 3)


def test_budget_is_enforced():
    with pytest.raises(BudgetExceeded):
        assert_budget([1, 2, 3], 2)
    with pytest.raises(ValueError):
        AdversaryModel(AdversaryKind.STATIC, -1)


def test_targeting_beats_uniform():
    n, m, f = 2000, 10, 500
    target = AdversaryModel(AdversaryKind.SLOWLY_ADAPTIVE, f, Strategy.TARGET_SMALLEST)
    uniform = AdversaryModel(AdversaryKind.SLOWLY_ADAPTIVE, f, Strategy.UNIFORM)
    t_worst, u_worst = [], []
    for seed in range(1000):
        a = assign_uniform(n, m, seed)
        t_worst.append(worst_shard_fraction(a, corrupt_for_epoch(target, 0, a.parties, seed, a)))
        u_worst.append(worst_shard_fraction(a, corrupt_for_epoch(uniform, 0, a.parties, seed, a)))
    assert np.mean(t_worst) > np.mean(u_worst)
    assert all(len(corrupt_for_epoch(target, 0, a.parties, s, a)) <= f for s in range(3))


def test_takeover_with_enough_budget():
    for seed in range(20):
        rep = adaptive_takeover_demo(TakeoverSetup(100, 10, 10, seed=seed))
        assert rep.violated
        assert len(rep.parties) == 2 and len(rep.txids) == 2


def test_takeover_short_by_one():
    rep = adaptive_takeover_demo(TakeoverSetup(100, 10, 9, balanced=True))
    assert not rep.violated


def test_takeover_needs_full_adaptivity():
    rep = adaptive_takeover_demo(TakeoverSetup(100, 10, 10, kind=AdversaryKind.SLOWLY_ADAPTIVE))
    assert not rep.violated


def test_slowly_adaptive_reshuffle_claim_seed():
    assert slowly_adaptive_epochs(100, 10, 10, 100, 42) == []


def test_elastico_success_rate():
    m, trials = 8, 10**5
    wins = elastico_double_spend(m, trials, 1)
    p = 1 - 1 / m
    assert abs(wins / trials - p) <= 3 * math.sqrt(p * (1 - p) / trials)


def test_elastico_single_shard():
    assert elastico_double_spend(1, 1000, 0) == 0


def test_elastico_runs_almost_always_succeed():
    assert elastico_runs_with_success(8, 16, 1000, 0) == 1000


def test_input_set_routing_is_order_free():
    assert input_set_shard([5, 9], 8) == input_set_shard([9, 5], 8)


def test_monoxide_bounds():
    assert monoxide_resilience(4, 1, 0).max_adversary == pytest.approx(0.5)
    assert monoxide_resilience(16, 0, 1).max_adversary == pytest.approx(1 / 32)
    assert monoxide_resilience(16, 0.5, 0.5).max_adversary == pytest.approx(0.265625)


def test_monoxide_bound_flags_reliance_on_all_shard_miners():
    assert monoxide_resilience(16, 0.5, 0.5).relies_on_chukonu
    assert not monoxide_resilience(16, 0, 1).relies_on_chukonu


def test_violation_report_json():
    import json
    rep = adaptive_takeover_demo(TakeoverSetup(100, 10, 10, seed=1))
    assert json.loads(rep.to_json())["violated"] is True
