"""Per-shard consensus at the level of chain growth, chain quality and common prefix.

Blocks are produced on a deterministic schedule: after ``r`` rounds a shard has
produced ``floor(tau * r)`` blocks, so any ``s`` consecutive rounds add at
least ``floor(tau * s)`` blocks. Within every run of ``window_l`` consecutive
chain positions the first ``ceil(mu * l)`` slots are honest; the adversary may
claim the rest when it controls members of the shard. The synchronous model
keeps all honest views equal at round boundaries, so the only divergence is a
reorg of the last ``k`` blocks.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Optional, Protocol

import numpy as np

from .core import Block, ShardLedger, Transaction, VerifyResult, stable_prefix


class CostModel(str, enum.Enum):
    QUADRATIC_BFT = "quadratic_bft"
    SYNC_FOUR_ROUND = "sync_four_round"
    GOSSIP = "gossip"  # proof-of-work block propagation


def block_messages(cost_model: CostModel, size: int) -> int:
    """Messages to agree on one block in a shard of ``size`` parties."""
    if cost_model is CostModel.QUADRATIC_BFT:
        return size * size
    if cost_model is CostModel.SYNC_FOUR_ROUND:
        return 4 * size
    return size


@dataclass(frozen=True)
class ConsensusParams:
    tau: float = 1.0
    mu: float = 1.0
    k: int = 1
    a: float = 1 / 3
    window_l: Optional[int] = None
    cost_model: CostModel = CostModel.QUADRATIC_BFT
    random_leader: bool = False
    leader_honest_prob: Optional[float] = None

    def __post_init__(self) -> None:
        if not 0 < self.tau <= 1:
            raise ValueError("need 0 < tau <= 1")
        if not 0 < self.mu <= 1:
            raise ValueError("need 0 < mu <= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.window_l is not None and self.window_l < 1:
            raise ValueError("window_l must be >= 1")

    @property
    def l(self) -> int:
        return self.window_l if self.window_l is not None else 2 * self.k

    @property
    def honest_slots(self) -> int:
        return math.ceil(self.mu * self.l - 1e-12)

    @property
    def wait_blocks(self) -> int:
        """Smallest u for which a continuously offered tx survives censorship."""
        return self.l - self.honest_slots + 1


def liveness_deadline(u: int, tau: float, k: int) -> int:
    """Rounds after which a continuously submitted valid tx is stable."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    t = Fraction(tau).limit_denominator(10_000)
    return math.ceil(u / t) + math.ceil(k / t)


class BlockPolicy(Protocol):
    def __call__(self, state: "ShardConsensusState", pending: list[Transaction],
                 capacity: int) -> list[Transaction]: ...


@dataclass
class CensorPolicy:
    """Adversarial producer: include valid pending txs except the targeted ones."""

    targets: frozenset[int] = frozenset()
    censor_all: bool = False

    def __call__(self, state: "ShardConsensusState", pending: list[Transaction],
                 capacity: int) -> list[Transaction]:
        if self.censor_all:
            return []
        allowed = [tx for tx in pending if tx.user_txid not in self.targets]
        return select_valid(state.ledger, allowed, capacity)


@dataclass
class ConsensusAdversary:
    """What the adversary does inside one shard's consensus."""

    policy: BlockPolicy = field(default_factory=CensorPolicy)
    claim_slots: bool = True


def select_valid(ledger: ShardLedger, candidates: Iterable[Transaction], capacity: int,
                 rejected: Optional[list[tuple[Transaction, VerifyResult]]] = None) -> list[Transaction]:
    """Greedy FIFO selection of txs valid against the ledger and each other."""
    chosen: list[Transaction] = []
    used_in: dict[int, int] = {}
    used_out: set[int] = set()
    for tx in candidates:
        if len(chosen) >= capacity:
            break
        res = ledger.check(tx)
        if not res.ok:
            if rejected is not None:
                rejected.append((tx, res))
            continue
        clash = any(used_in.get(u, tx.user_txid) != tx.user_txid for u in tx.inputs)
        if clash or any(o in used_out for o in tx.outputs):
            continue
        for u in tx.inputs:
            used_in[u] = tx.user_txid
        used_out.update(tx.outputs)
        chosen.append(tx)
    return chosen


@dataclass
class AdvanceResult:
    blocks: list[Block] = field(default_factory=list)
    messages: int = 0
    rejected: list[tuple[Transaction, VerifyResult]] = field(default_factory=list)

    @property
    def tx_count(self) -> int:
        return sum(len(b.txs) for b in self.blocks)


@dataclass
class ShardConsensusState:
    shard_id: int
    ledger: ShardLedger
    params: ConsensusParams
    honest_count: int
    corrupt_count: int = 0
    round: int = 0
    produced: int = 0
    block_seq: int = 0
    id_base: int = 0
    lengths: list[int] = field(default_factory=list)
    stable_ids: list[int] = field(default_factory=list)
    prefix_violations: int = 0

    @property
    def size(self) -> int:
        return self.honest_count + self.corrupt_count

    @property
    def safe(self) -> bool:
        a = Fraction(self.params.a).limit_denominator(10_000)
        return self.corrupt_count * a.denominator <= a.numerator * self.size

    def slot_is_adversarial(self, index: int) -> bool:
        return (index % self.params.l) >= self.params.honest_slots

    def next_block_id(self) -> int:
        self.block_seq += 1
        return self.id_base + self.block_seq

    def record_round(self) -> None:
        """Trace hook: chain length and common-prefix check at a round barrier."""
        chain = self.ledger.chain
        self.lengths.append(len(chain))
        n_stable = max(0, len(chain) - self.params.k)
        upto = min(n_stable, len(self.stable_ids))
        for i in range(upto):
            if chain[i].block_id != self.stable_ids[i]:
                self.prefix_violations += 1
                del self.stable_ids[i:]
                break
        self.stable_ids.extend(b.block_id for b in chain[len(self.stable_ids):n_stable])


def _blocks_due(state: ShardConsensusState) -> int:
    t = Fraction(state.params.tau).limit_denominator(10_000)
    return math.floor(t * state.round) - state.produced


def _produce(state: ShardConsensusState, pending: list[Transaction],
             adversary: Optional[ConsensusAdversary], result: AdvanceResult) -> None:
    index = len(state.ledger)
    capacity = state.ledger.capacity
    adversarial = (adversary is not None and adversary.claim_slots and state.corrupt_count > 0
                   and state.slot_is_adversarial(index))
    if adversarial:
        txs = adversary.policy(state, pending, capacity)
        validate = state.safe
    else:
        txs = select_valid(state.ledger, pending, capacity, result.rejected)
        validate = True
    block = state.ledger.append(txs, producer_honest=not adversarial,
                                block_id=state.next_block_id(), validate=validate)
    if txs:
        taken = {tx.txid for tx in txs}
        pending[:] = [tx for tx in pending if tx.txid not in taken]
    if result.rejected:
        bad = {tx.txid for tx, _ in result.rejected}
        pending[:] = [tx for tx in pending if tx.txid not in bad]
    state.produced += 1
    result.blocks.append(block)
    result.messages += block_messages(state.params.cost_model, state.size)


def advance_rounds(state: ShardConsensusState, pending: list[Transaction], s: int,
                   adversary: Optional[ConsensusAdversary] = None, seed: int = 0,
                   on_round: Optional[Callable[[ShardConsensusState], None]] = None) -> AdvanceResult:
    """Run ``s`` rounds. ``pending`` is consumed in place (included and rejected txs leave it)."""
    result = AdvanceResult()
    rng = np.random.default_rng([seed & ((1 << 64) - 1), state.shard_id, state.round]) \
        if state.params.random_leader else None
    for _ in range(s):
        state.round += 1
        if state.params.random_leader:
            # one leader attempt spans four rounds; only an honest leader yields a block
            if state.round % 4 == 0:
                h = state.params.leader_honest_prob
                if h is None:
                    h = state.honest_count / state.size if state.size else 0.0
                result.messages += block_messages(CostModel.SYNC_FOUR_ROUND, state.size)
                if rng.random() < h:
                    before = result.messages
                    _produce(state, pending, None, result)
                    result.messages = before
        else:
            for _ in range(_blocks_due(state)):
                _produce(state, pending, adversary, result)
        state.record_round()
        if on_round is not None:
            on_round(state)
    return result


def reorg(state: ShardConsensusState, depth: int, pending: list[Transaction]) -> list[Block]:
    """Replace the last ``depth`` blocks (depth <= k while the shard is safe).

    Dropped transactions return to the front of ``pending`` and are re-mined
    into the same number of fresh blocks, so the length is preserved.
    """
    if depth <= 0:
        return []
    if state.safe and depth > state.params.k:
        raise ValueError(f"reorg depth {depth} exceeds k={state.params.k} on a safe shard")
    depth = min(depth, len(state.ledger))
    dropped = state.ledger.truncate(len(state.ledger) - depth)
    back = [tx for b in dropped for tx in b.txs]
    pending[:0] = back
    for b in dropped:
        txs = select_valid(state.ledger, pending, state.ledger.capacity)
        state.ledger.append(txs, producer_honest=b.producer_honest, block_id=state.next_block_id())
        taken = {tx.txid for tx in txs}
        pending[:] = [tx for tx in pending if tx.txid not in taken]
    return dropped


def stable_txs(state: ShardConsensusState, k: Optional[int] = None) -> list[Transaction]:
    return stable_prefix(state.ledger, state.params.k if k is None else k)


@dataclass(frozen=True)
class TraceCheck:
    growth_ok: bool
    quality_ok: bool
    prefix_ok: bool
    worst_growth_slack: int
    worst_quality: int

    @property
    def ok(self) -> bool:
        return self.growth_ok and self.quality_ok and self.prefix_ok


def check_trace(state: ShardConsensusState, max_window: Optional[int] = None) -> TraceCheck:
    """Chain growth over every round window, quality over every block window, common prefix."""
    t = Fraction(state.params.tau).limit_denominator(10_000)
    lengths = np.asarray([0] + state.lengths, dtype=np.int64)
    growth_ok = True
    slack = 0
    if not state.params.random_leader:
        top = len(lengths) - 1 if max_window is None else min(max_window, len(lengths) - 1)
        worst = None
        for s in range(1, top + 1):
            gained = int((lengths[s:] - lengths[:-s]).min())
            diff = gained - math.floor(t * s)
            worst = diff if worst is None else min(worst, diff)
        slack = 0 if worst is None else worst
        growth_ok = slack >= 0
    honest = np.asarray([b.producer_honest for b in state.ledger.chain], dtype=np.int64)
    l = state.params.l
    need = state.params.honest_slots
    quality_ok = True
    worst_q = l
    if honest.size >= l:
        window = np.convolve(honest, np.ones(l, dtype=np.int64), mode="valid")
        worst_q = int(window.min())
        quality_ok = worst_q >= need
    return TraceCheck(growth_ok, quality_ok, state.prefix_violations == 0, slack, worst_q)
