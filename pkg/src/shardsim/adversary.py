"""Corruption models and the concrete attacks."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .assignment import Assignment, assign_uniform, check_a_honest, reshuffle_full
from .core import PartyView, RecordKind, ShardLedger, Transaction, conflicts, report_position
from .workload import MASK64, ids_in_shard, mix64_array


class AdversaryKind(str, enum.Enum):
    STATIC = "static"
    SLOWLY_ADAPTIVE = "slowly_adaptive"
    FULLY_ADAPTIVE = "fully_adaptive"


class Strategy(str, enum.Enum):
    UNIFORM = "uniform"
    TARGET_SMALLEST = "target_smallest"


class BudgetExceeded(AssertionError):
    pass


@dataclass(frozen=True)
class AdversaryModel:
    kind: AdversaryKind
    f: int
    strategy: Strategy = Strategy.TARGET_SMALLEST

    def __post_init__(self) -> None:
        if self.f < 0:
            raise ValueError("f must be >= 0")

    @property
    def can_corrupt_mid_epoch(self) -> bool:
        return self.kind is AdversaryKind.FULLY_ADAPTIVE


def assert_budget(corrupt: Sequence[int] | frozenset, f: int) -> None:
    if len(corrupt) > f:
        raise BudgetExceeded(f"{len(corrupt)} corrupt parties exceed budget f={f}")


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([seed & MASK64, *tags])


def corrupt_for_epoch(model: AdversaryModel, epoch: int, party_ids: Sequence[int], seed: int,
                      assignment: Optional[Assignment] = None) -> frozenset[int]:
    """The corrupt set chosen at the start of ``epoch``.

    Static draws one set for the whole run. The slowly adaptive targeting
    strategy fills the currently smallest shards first, member by member.
    """
    parties = np.asarray(party_ids, dtype=np.int64)
    f = min(model.f, parties.size)
    if f == 0:
        return frozenset()
    if model.kind is AdversaryKind.STATIC or model.strategy is Strategy.UNIFORM or assignment is None:
        tag = 0 if model.kind is AdversaryKind.STATIC else epoch + 1
        chosen = _rng(seed, 0xBAD, tag).choice(parties, size=f, replace=False)
        out = frozenset(int(x) for x in chosen)
    else:
        sizes = assignment.shard_sizes
        order = sorted(range(assignment.m), key=lambda s: (int(sizes[s]), s))
        picked: list[int] = []
        for s in order:
            if len(picked) >= f:
                break
            members = np.sort(assignment.members(s))
            picked.extend(int(x) for x in members[: f - len(picked)])
        out = frozenset(picked)
    assert_budget(out, model.f)
    return out


def worst_shard_fraction(assignment: Assignment, corrupt: frozenset[int]) -> float:
    report = check_a_honest(assignment, corrupt, 0.5)
    return max((1 - s.honest_fraction for s in report.shards if s.size), default=0.0)


@dataclass(frozen=True)
class MiningSplit:
    """Monoxide hash power: m_p mines every shard (Chu-ko-nu), m_d one shard."""

    m_p: float
    m_d: float
    m_a: float = 0.0

    def __post_init__(self) -> None:
        if not math.isclose(self.m_p + self.m_d, 1.0, abs_tol=1e-12):
            raise ValueError("need m_p + m_d = 1")
        if min(self.m_p, self.m_d, self.m_a) < 0:
            raise ValueError("fractions must be >= 0")

    def per_shard_honest(self, m: int) -> float:
        return self.m_d / m + self.m_p


class MonoxideBound(NamedTuple):
    max_adversary: float
    without_chukonu: float
    relies_on_chukonu: bool


def monoxide_resilience(m: int, m_p: float, m_d: float) -> MonoxideBound:
    """Largest adversary hash fraction that cannot outmine one shard.

    ``relies_on_chukonu`` says the bound exceeds 1/(2m) only because some
    miners work on (and so store) every shard, which defeats storage sharding.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    split = MiningSplit(m_p, m_d)
    bound = 0.5 - split.m_d * (m - 1) / (2 * m * (split.m_d + split.m_p))
    floor = 1 / (2 * m)
    return MonoxideBound(bound, floor, m > 1 and bound > floor + 1e-15)


# -- Elastico -------------------------------------------------------------

SET_SALT = 0xE1A5

def input_set_shard(inputs: Sequence[int], m: int) -> int:
    """Shard chosen from the hash of the whole input set."""
    return int(input_set_shards(np.asarray([sorted(inputs)], dtype=np.uint64), m)[0])


def input_set_shards(rows: np.ndarray, m: int) -> np.ndarray:
    """Vectorised :func:`input_set_shard` for rows of sorted inputs (0 marks padding)."""
    rows = np.asarray(rows, dtype=np.uint64)
    h = np.full(rows.shape[0], np.uint64(SET_SALT))
    for col in range(rows.shape[1]):
        v = rows[:, col]
        nxt = mix64_array(h ^ v)
        h = np.where(v == 0, h, nxt)
    return (mix64_array(h) % np.uint64(m)).astype(np.int64)


def elastico_double_spend(m: int, attempts: int, seed: int) -> int:
    """Attempts where {x} and {x, y} land in different shards (the spends both commit)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if m == 1 or attempts == 0:
        return 0
    rng = _rng(seed, 0xE1A)
    x = rng.integers(1, 1 << 63, size=attempts, dtype=np.int64).astype(np.uint64)
    y = rng.integers(1, 1 << 63, size=attempts, dtype=np.int64).astype(np.uint64)
    single = input_set_shards(np.stack([x, np.zeros_like(x)], axis=1), m)
    pair = input_set_shards(np.sort(np.stack([x, y], axis=1), axis=1), m)
    return int(np.count_nonzero(single != pair))


def elastico_runs_with_success(m: int, attempts_per_run: int, runs: int, seed: int) -> int:
    """Runs in which at least one of ``attempts_per_run`` attempts succeeded."""
    hits = 0
    for r in range(runs):
        hits += elastico_double_spend(m, attempts_per_run, seed * 1_000_003 + r) > 0
    return hits


# -- adaptive takeover ----------------------------------------------------

@dataclass
class ViolationReport:
    violated: bool
    round: Optional[int] = None
    shards: list[int] = field(default_factory=list)
    txids: list[int] = field(default_factory=list)
    parties: list[int] = field(default_factory=list)
    reason: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def no_violation(reason: str) -> ViolationReport:
    return ViolationReport(False, reason=reason)


@dataclass(frozen=True)
class TakeoverSetup:
    n: int
    m: int
    f: int
    kind: AdversaryKind = AdversaryKind.FULLY_ADAPTIVE
    round: int = 1
    seed: int = 0
    balanced: bool = False


def _balanced(n: int, m: int) -> Assignment:
    parties = np.arange(n, dtype=np.int64)
    return Assignment(0, m, parties, parties % m)


def adaptive_takeover_demo(state: TakeoverSetup, assignment: Optional[Assignment] = None) -> ViolationReport:
    """Corrupt a whole smallest shard mid-epoch and double-spend through it.

    The captured shard certifies two spends of one of its UTXOs toward two
    other shards. Those shards accept the cross-shard proof without replaying
    the source ledger, so an honest member of each reports a different,
    conflicting spend as stable.
    """
    if state.kind is not AdversaryKind.FULLY_ADAPTIVE:
        return no_violation("corruption only at epoch boundaries")
    if state.m < 3:
        return no_violation("need a source and two distinct recipient shards")
    if assignment is None:
        assignment = _balanced(state.n, state.m) if state.balanced else assign_uniform(state.n, state.m, state.seed)
    sizes = assignment.shard_sizes
    victim = min(range(state.m), key=lambda s: (int(sizes[s]), s))
    if int(sizes[victim]) > state.f:
        return no_violation(f"budget {state.f} < smallest shard size {int(sizes[victim])}")
    corrupt = frozenset(int(p) for p in assignment.members(victim))
    assert_budget(corrupt, state.f)

    rng = _rng(state.seed, 0x7A4E)
    x = ids_in_shard(rng, victim, state.m, 1)[0]
    others = [s for s in range(state.m) if s != victim and sizes[s] > 0]
    if len(others) < 2:
        return no_violation("fewer than two populated recipient shards")
    j, k = others[0], others[1]
    o1 = ids_in_shard(rng, j, state.m, 1)[0]
    o2 = ids_in_shard(rng, k, state.m, 1)[0]
    tx1 = Transaction(1, (x,), (o1,))
    tx2 = Transaction(2, (x,), (o2,))

    ledgers = {s: ShardLedger(s) for s in range(state.m)}
    # recipients only check the certificate of the captured shard
    ledgers[j].append([Transaction(11, (), (o1,), RecordKind.CREATE, "proof", ref=tx1.txid)])
    ledgers[k].append([Transaction(12, (), (o2,), RecordKind.CREATE, "proof", ref=tx2.txid)])
    for s in (j, k):
        ledgers[s].append([])

    reporters = []
    for s, tx in ((j, tx1), (k, tx2)):
        honest = [int(p) for p in assignment.members(s) if int(p) not in corrupt]
        if not honest:
            return no_violation(f"shard {s} has no honest member")
        view = PartyView(honest[0], True, {s: ledgers[s]})
        if not report_position(view, tx.txid, k=1):
            return no_violation("recipient record not stable")
        reporters.append(honest[0])
    if not conflicts(tx1, tx2):
        return no_violation("spends do not conflict")
    return ViolationReport(True, state.round, [victim, j, k], [tx1.txid, tx2.txid], reporters,
                           f"shard {victim} fully corrupted mid-epoch")


def slowly_adaptive_epochs(n: int, m: int, f: int, epochs: int, seed: int,
                           strategy: Strategy = Strategy.TARGET_SMALLEST) -> list[ViolationReport]:
    """Same budget, corruption only at epoch starts, full reshuffle after it.

    A takeover needs a whole shard under control; the adversary aims at the
    previous epoch's smallest shard but the reshuffle decides the new one.
    """
    model = AdversaryModel(AdversaryKind.SLOWLY_ADAPTIVE, f, strategy)
    assignment = assign_uniform(n, m, seed)
    found = []
    for e in range(epochs):
        corrupt = corrupt_for_epoch(model, e, assignment.parties, seed, assignment)
        assignment = reshuffle_full(assignment, seed)
        for s in range(m):
            members = assignment.members(s)
            if members.size and all(int(p) in corrupt for p in members):
                found.append(ViolationReport(True, e, [s], [], [], f"shard {s} fully corrupt after reshuffle"))
    return found
