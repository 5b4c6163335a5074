import math

import numpy as np
import pytest

from shardsim.beacon import (
    Bias, CommitXor, CommitteeVss, Ideal, LeaderRandhound, bias_resistance_check, randhound_messages,
    run_beacon,
)
from shardsim.consensus import (
    ConsensusAdversary, ConsensusParams, CostModel, CensorPolicy, ShardConsensusState, advance_rounds,
    block_messages, check_trace, liveness_deadline, reorg, stable_txs,
)
from shardsim.core import ShardLedger, Transaction


def test_ideal_beacon():
    out = run_beacon(Ideal(), 0, 0.25, 100, 1)
    assert (out.messages, out.rounds_used, out.succeeded) == (0, 1, True)


def test_beacon_seed_deterministic_and_epoch_dependent():
    assert run_beacon(Ideal(), 3, 0.25, 100, 1).seed == run_beacon(Ideal(), 3, 0.25, 100, 1).seed
    assert run_beacon(Ideal(), 3, 0.25, 100, 1).seed != run_beacon(Ideal(), 4, 0.25, 100, 1).seed


def test_committee_vss_cost():
    assert run_beacon(CommitteeVss(32), 0, 0.25, 1000, 0).messages == 1024


def test_commit_xor_cost_includes_broadcast():
    out = run_beacon(CommitXor(8), 0, 0.25, 100, 0)
    assert out.messages == 64 + 800


def test_randhound_failure_rate():
    kind = LeaderRandhound(retry_bound=20)
    fails = sum(not run_beacon(kind, 0, 0.25, 100, s).succeeded for s in range(10**4))
    p = 2.0**-20
    assert fails <= 10**4 * p + 3 * math.sqrt(10**4 * p * (1 - p))


def test_randhound_cost_per_attempt():
    out = run_beacon(LeaderRandhound(group_size=4), 0, 0.25, 100, 7)
    assert out.messages == out.rounds_used * randhound_messages(100, 4) == out.rounds_used * 1600


def test_beacon_rejects_bad_p():
    with pytest.raises(ValueError):
        run_beacon(Ideal(), 0, 0.5, 10, 0)


def test_bias_resistance():
    assert bias_resistance_check(CommitXor(4)) is Bias.BOUNDED_BIAS
    assert bias_resistance_check(LeaderRandhound()) is Bias.UNBIASABLE
    assert bias_resistance_check(Ideal()) is Bias.UNBIASABLE


def state(params, honest=10, corrupt=0, genesis=(), capacity=100):
    return ShardConsensusState(0, ShardLedger(0, frozenset(genesis), capacity), params, honest, corrupt)


def test_full_rate_honest_blocks():
    st = state(ConsensusParams(tau=1, mu=1))
    res = advance_rounds(st, [], 10)
    assert len(res.blocks) == 10 and all(b.producer_honest for b in res.blocks)


def test_quality_window():
    params = ConsensusParams(tau=1, mu=0.5, window_l=10, a=1 / 3)
    st = state(params, honest=9, corrupt=1)
    adv = ConsensusAdversary(CensorPolicy(censor_all=True))
    res = advance_rounds(st, [], 40, adv)
    assert len(res.blocks) == 40
    assert sum(b.producer_honest for b in res.blocks) >= 20
    assert check_trace(st).ok


def test_random_leader_rate():
    params = ConsensusParams(tau=1 / 8, mu=0.5, cost_model=CostModel.SYNC_FOUR_ROUND,
                             random_leader=True, leader_honest_prob=0.5)
    counts = []
    for seed in range(4000):
        st = state(params, honest=50)
        counts.append(len(advance_rounds(st, [], 8, seed=seed).blocks))
    sd = math.sqrt(0.5 / len(counts))
    assert abs(np.mean(counts) - 1.0) <= 3 * sd


def test_growth_follows_tau():
    st = state(ConsensusParams(tau=0.25))
    advance_rounds(st, [], 40)
    assert len(st.ledger) == 10
    assert check_trace(st).growth_ok


def test_includes_pending_and_drops_invalid():
    st = state(ConsensusParams(), genesis=(1, 2))
    pending = [Transaction(1, (1,), (5,)), Transaction(2, (1,), (6,)), Transaction(3, (9,), (7,))]
    res = advance_rounds(st, pending, 2)
    assert [tx.txid for b in res.blocks for tx in b.txs] == [1]
    assert pending == []


def test_message_cost_models():
    assert block_messages(CostModel.QUADRATIC_BFT, 10) == 100
    assert block_messages(CostModel.SYNC_FOUR_ROUND, 10) == 40
    assert block_messages(CostModel.GOSSIP, 10) == 10


@pytest.mark.parametrize("u,tau,k,rounds", [(1, 1, 1, 2), (4, 1 / 8, 6, 80), (0, 1 / 2, 3, 6)])
def test_liveness_deadline(u, tau, k, rounds):
    assert liveness_deadline(u, tau, k) == rounds


def test_stable_txs_and_reorg():
    st = state(ConsensusParams(k=2), genesis=(1, 2, 3))
    pending = [Transaction(i, (i,), (10 + i,)) for i in (1, 2, 3)]
    st.ledger.capacity = 1
    advance_rounds(st, pending, 3)
    assert [t.txid for t in stable_txs(st)] == [1]
    back: list = []
    dropped = reorg(st, 2, back)
    assert len(dropped) == 2 and len(st.ledger) == 3
    with pytest.raises(ValueError):
        reorg(st, 3, back)


def test_params_validation():
    with pytest.raises(ValueError):
        ConsensusParams(tau=0)
    with pytest.raises(ValueError):
        ConsensusParams(mu=1.5)
    assert ConsensusParams(k=3).l == 6
