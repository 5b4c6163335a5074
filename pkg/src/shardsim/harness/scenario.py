"""Full epoch-by-epoch simulation of one protocol profile.

Each round every shard runs one consensus step over its pending records.
Records that become stable feed the monitors: consistency (two stable spends
of one UTXO by different user txs), persistence (the stable prefix of a shard
changed), liveness (a valid record took longer than the wait bound),
atomicity (a cross-shard tx ended partially applied or stuck) and the chain
growth / chain quality trace checks. Monitors only assert while the
shard involved is a-honest; events in other shards are counted as excused.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from ..adversary import AdversaryKind, AdversaryModel, Strategy, corrupt_for_epoch, input_set_shard
from ..assignment import Assignment, assign_uniform, cuckoo_step, reshuffle_full
from ..beacon import run_beacon
from ..consensus import (CensorPolicy, ConsensusAdversary, ShardConsensusState, advance_rounds,
                         check_trace, liveness_deadline, reorg)
from ..core import RecordKind, ShardLedger, Transaction
from ..crossshard import LedgerCommit, Outcome, TxShape, open_commit
from ..metrics import Compaction, EpochFactors, FactorReport, PartyCounters, omega_m, scaling_factor
from ..workload import WorkloadSpec, generate, make_genesis, random_ids, utxo_shard
from .config import ScenarioConfig
from .profiles import ProtocolProfile, get_profile

EFFECTIVE_SPENDS = frozenset({RecordKind.ORDINARY, RecordKind.RELAY, RecordKind.COMMIT})
REORG_RATE = 0.05


@dataclass
class Violation:
    kind: str
    round: int
    shards: list[int]
    txids: list[int] = field(default_factory=list)
    parties: list[int] = field(default_factory=list)
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ScenarioResult:
    profile: str
    n: int
    m: int
    f: int
    epochs: int
    seed: int
    report: FactorReport
    violations: list[Violation]
    excused: Counter
    checks: dict[str, bool]
    outcomes: Counter
    user_txs: int
    stable_user_txs: int
    rejected_user_txs: int
    attack_pairs: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "profile": self.profile, "n": self.n, "m": self.m, "f": self.f, "epochs": self.epochs,
            "seed": self.seed, "factors": self.report.to_dict(),
            "violations": [v.to_dict() for v in self.violations],
            "excused": dict(sorted(self.excused.items())), "checks": dict(sorted(self.checks.items())),
            "outcomes": dict(sorted(self.outcomes.items())), "user_txs": self.user_txs,
            "stable_user_txs": self.stable_user_txs, "rejected_user_txs": self.rejected_user_txs,
            "attack_pairs": self.attack_pairs,
        }


class _Run:
    def __init__(self, profile: ProtocolProfile, cfg: ScenarioConfig, seed: int):
        self.profile = profile
        self.cfg = cfg
        self.seed = seed
        self.n = cfg.n
        self.m = cfg.m if cfg.m is not None else profile.shard_count(cfg.n)
        if not self.n >= self.m >= 1:
            raise ValueError(f"need n >= m >= 1 (n={self.n}, m={self.m})")
        self.p = cfg.p if cfg.p is not None else profile.p
        self.f = math.floor(self.p * self.n)
        self.params = profile.consensus
        self.k = self.params.k
        self.deadline = liveness_deadline(self.params.wait_blocks, self.params.tau, self.k)
        self.rng = np.random.default_rng([seed & ((1 << 64) - 1), 0x5CE0])
        self.routed = profile.cross_shard is None

        self.tx_per_epoch = cfg.workload.tx_per_epoch or 16 * self.m
        self._build_workload()
        open_inputs = self.routed and self.m > 1
        self.states = [
            ShardConsensusState(s, ShardLedger(s, frozenset(self.genesis[s]), cfg.block_capacity, open_inputs),
                                self.params, 0, id_base=s << 32)
            for s in range(self.m)]
        self.pending: list[list[Transaction]] = [[] for _ in range(self.m)]
        self.stable_ptr = [0] * self.m
        self.counters = PartyCounters(self.n)
        self.full_parties = np.arange(0)
        if profile.storage == "light" and profile.full_fraction > 0:
            count = math.ceil(profile.full_fraction * self.n)
            self.full_parties = np.sort(self.rng.choice(self.n, size=count, replace=False))

        self.violations: list[Violation] = []
        self.excused: Counter = Counter()
        self.outcomes: Counter = Counter()
        self.submitted: dict[int, tuple[int, int]] = {}  # record id -> (shard, round)
        self.drivers: dict[int, LedgerCommit] = {}  # record id -> driver
        self.active: list[LedgerCommit] = []
        self.spent_by: dict[int, tuple[int, int]] = {}  # utxo -> (user txid, shard)
        self.saturated: list[list[int]] = [[] for _ in range(self.m)]
        self.unsafe_rounds: list[set[int]] = [set() for _ in range(self.m)]
        self.stable_user = 0
        self.rejected_user = 0
        self.round = 0
        self.frozen = np.zeros((self.n, self.m), dtype=np.int64)
        self.cur = np.zeros(self.n, dtype=np.int64)
        self.epoch_start_counts = np.zeros(self.m, dtype=np.int64)
        self.corrupt: frozenset[int] = frozenset()
        self.assignment: Optional[Assignment] = None
        self.t_seen = 0
        self.t_epoch = 0

    # -- setup ---------------------------------------------------------------

    def _build_workload(self) -> None:
        cfg = self.cfg
        total = cfg.epochs * self.tx_per_epoch
        per_shard = math.ceil(1.5 * total * cfg.workload.inputs / self.m) + 8
        self.genesis = make_genesis(self.m, per_shard, self.seed)
        spec = WorkloadSpec(total, cfg.workload.inputs, cfg.workload.outputs, seed=self.seed,
                            placement=cfg.workload.placement,
                            inject_conflicts=cfg.workload.inject_conflicts)
        wl = generate(spec, self.genesis, self.m)
        self.user_txs = wl.txs
        self.attack: list[Transaction] = []
        if cfg.attack:
            # double-spend attempts: {x} and {x, y}, submitted together
            base = len(wl.txs) + 1
            attempts = max(8, self.m)
            ids = random_ids(self.rng, 2 * attempts + attempts * 2)
            for i in range(attempts):
                x, y = ids[2 * i], ids[2 * i + 1]
                o1, o2 = ids[2 * attempts + 2 * i], ids[2 * attempts + 2 * i + 1]
                for u in (x, y):
                    self.genesis[utxo_shard(u, self.m)].append(u)
                self.attack.append(Transaction(base + 2 * i, (x,), (o1,)))
                self.attack.append(Transaction(base + 2 * i + 1, (x, y), (o2,)))

    def shard_of(self, u: int) -> int:
        return utxo_shard(u, self.m)

    # -- epochs --------------------------------------------------------------

    def _reassign(self, epoch: int) -> None:
        prof = self.profile
        static = prof.assignment_rule == "static"
        model = AdversaryModel(AdversaryKind.SLOWLY_ADAPTIVE, self.f,
                               Strategy.UNIFORM if static else Strategy.TARGET_SMALLEST)
        prev = self.assignment
        # corruption is fixed before the epoch's reconfiguration
        self.corrupt = corrupt_for_epoch(model, epoch, np.arange(self.n), self.seed, prev)
        if prev is None:
            new = assign_uniform(self.n, self.m, self.seed)
        elif prof.assignment_rule == "reshuffle":
            new = reshuffle_full(prev, self.seed)
        elif prof.assignment_rule == "cuckoo":
            churn = min(prof.cuckoo_churn, self.n)
            movers = self.rng.choice(self.n, size=churn, replace=False).tolist()
            new = cuckoo_step(prev, movers, movers, prof.cuckoo_evict, self.seed, churn_budget=2 * churn)
        else:
            new = Assignment(epoch, self.m, prev.parties.copy(), prev.shards.copy())
        cur = np.empty(self.n, dtype=np.int64)
        cur[new.parties] = new.shards
        if prev is not None:
            counts = self._stable_counts()
            moved = np.flatnonzero(cur != self.cur)
            self.frozen[moved, self.cur[moved]] = counts[self.cur[moved]]
        self.cur = cur
        self.assignment = new
        corrupt_mask = np.zeros(self.n, dtype=bool)
        corrupt_mask[list(self.corrupt)] = True
        sizes = np.bincount(cur, minlength=self.m)
        bad = np.bincount(cur[corrupt_mask], minlength=self.m)
        for s, st in enumerate(self.states):
            st.corrupt_count = int(bad[s])
            st.honest_count = int(sizes[s] - bad[s])
        self.members = [np.flatnonzero(cur == s) for s in range(self.m)]
        self.honest_members = [mem[~corrupt_mask[mem]] for mem in self.members]
        self.epoch_start_counts = self._stable_counts()
        beacon = run_beacon(prof.beacon, epoch, min(self.p, 0.49), self.n, self.seed)
        self.counters.shared_messages += beacon.messages

    def _stable_counts(self) -> np.ndarray:
        return np.array([st.ledger.stable_tx_count(self.k) for st in self.states], dtype=np.int64)

    def _audit_storage(self) -> np.ndarray:
        """Stored stable records per party, recomputed from the shard ledgers."""
        counts = self._stable_counts()
        prof = self.profile
        rows = np.arange(self.n)
        if prof.storage == "all":
            stored = np.full(self.n, counts.sum(), dtype=np.int64)
        elif prof.compaction == Compaction.CHECKPOINT:
            stored = counts[self.cur] - self.epoch_start_counts[self.cur]
        else:
            stored = self.frozen.sum(axis=1) - self.frozen[rows, self.cur] + counts[self.cur]
        if self.full_parties.size:
            stored[self.full_parties] = counts.sum()
        self.counters.set_stored(stored)
        return stored

    # -- records -------------------------------------------------------------

    def _submit(self, shard: int, tx: Transaction, driver: Optional[LedgerCommit] = None) -> None:
        self.pending[shard].append(tx)
        self.submitted[tx.txid] = (shard, self.round)
        if driver is not None:
            self.drivers[tx.txid] = driver

    def _submit_user(self, tx: Transaction) -> None:
        self.t_seen += 1
        self.t_epoch += 1
        if self.routed:
            shard = input_set_shard(tx.inputs, self.m) if self.m > 1 else 0
            self._submit(shard, tx)
            return
        shape = TxShape.from_tx(tx, self.shard_of)
        if not shape.cross_shard:
            self._submit(shape.shards[0], tx)
            return
        stall = int(self.rng.integers(0, 3)) if self.cfg.censor else 0
        drv = open_commit(self.profile.cross_shard, tx, self.shard_of, stall)
        self.active.append(drv)
        for shard, rec in drv.begin(self.round):
            self._submit(shard, rec, drv)

    def _excuse(self, kind: str, shards: list[int], since: int) -> bool:
        for s in shards:
            if any(r >= since for r in self.unsafe_rounds[s]) or not self.states[s].safe:
                self.excused[kind] += 1
                return True
        return False

    def _on_stable(self, shard: int, tx: Transaction) -> None:
        info = self.submitted.pop(tx.txid, None)
        if info is not None:
            _, r0 = info
            if self.round - r0 > self.deadline and not any(r >= r0 for r in self.saturated[shard]):
                if not self._excuse("liveness", [shard], r0):
                    self.violations.append(Violation(
                        "liveness", self.round, [shard], [tx.user_txid], [],
                        f"record {tx.txid} stable after {self.round - r0} rounds (bound {self.deadline})"))
        if tx.kind in EFFECTIVE_SPENDS:
            user = tx.user_txid
            for u in tx.inputs:
                prev = self.spent_by.get(u)
                if prev is None:
                    self.spent_by[u] = (user, shard)
                elif prev[0] != user:
                    shards = sorted({prev[1], shard})
                    if not self._excuse("consistency", shards, 0):
                        reporters = [int(self.honest_members[s][0]) for s in shards
                                     if self.honest_members[s].size]
                        self.violations.append(Violation(
                            "consistency", self.round, shards, sorted([prev[0], user]), reporters,
                            f"utxo {u} spent by two stable txs"))
        if tx.ref is None:
            self.stable_user += 1
        drv = self.drivers.pop(tx.txid, None)
        if drv is not None:
            drv.resolve(tx.txid, True)

    def _on_rejected(self, tx: Transaction) -> None:
        self.submitted.pop(tx.txid, None)
        if tx.ref is None:
            self.rejected_user += 1
        drv = self.drivers.pop(tx.txid, None)
        if drv is not None:
            drv.resolve(tx.txid, False)

    # -- rounds --------------------------------------------------------------

    def _step(self, adversary: Optional[ConsensusAdversary]) -> None:
        self.round += 1
        light = self.full_parties
        for s, st in enumerate(self.states):
            if not st.safe:
                self.unsafe_rounds[s].add(self.round)
            res = advance_rounds(st, self.pending[s], 1, adversary, self.seed)
            if res.blocks:
                mem = self.members[s]
                if st.size:
                    self.counters.add_messages(mem, res.messages // st.size)
                    self.counters.add_oracle_calls(mem, res.tx_count)
                if light.size:
                    self.counters.add_messages(light, len(res.blocks))
                    self.counters.add_oracle_calls(light, res.tx_count)
                cap = st.ledger.capacity
                if any(b.producer_honest and len(b.txs) >= cap for b in res.blocks):
                    self.saturated[s].append(self.round)
            for tx, _ in res.rejected:
                self._on_rejected(tx)
            if self.k > 1 and st.safe and len(st.ledger) > self.k and self.rng.random() < REORG_RATE:
                reorg(st, int(self.rng.integers(1, self.k + 1)), self.pending[s])
        for s, st in enumerate(self.states):
            top = st.ledger.stable_len(self.k)
            for b in st.ledger.chain[self.stable_ptr[s]:top]:
                for tx in b.txs:
                    self._on_stable(s, tx)
            self.stable_ptr[s] = max(self.stable_ptr[s], top)
        still = []
        for drv in self.active:
            for shard, rec in drv.poll(self.round):
                self._submit(shard, rec, drv)
            if drv.done:
                self.outcomes[drv.outcome.value] += 1
                if drv.outcome is Outcome.MIXED and not self._excuse("atomicity", list(drv.shape.shards), 0):
                    self.violations.append(Violation("atomicity", self.round, list(drv.shape.shards),
                                                     [drv.tx.txid], [], "cross-shard tx partially applied"))
            else:
                still.append(drv)
        self.active = still

    def _factors(self, epoch: int, rounds: int) -> EpochFactors:
        t = max(self.t_seen, 1)
        t_store = max(self.t_epoch, 1) if self.profile.compaction == Compaction.CHECKPOINT else t
        om = omega_m(self.counters, self.n, rounds)
        os_ = float(self.counters.stored.sum()) / t_store
        oc = float(self.counters.oracle_calls.sum()) / t
        return EpochFactors(epoch, om, os_, oc, scaling_factor(self.n, om, os_, oc))

    def run(self) -> ScenarioResult:
        cfg = self.cfg
        adversary = ConsensusAdversary(CensorPolicy(censor_all=True)) if cfg.censor else None
        rounds_r = cfg.rounds_per_epoch
        feed_rounds = max(1, rounds_r // 2)
        series: list[EpochFactors] = []
        for e in range(cfg.epochs):
            self._reassign(e)
            self.t_epoch = 0
            batch = self.user_txs[e * self.tx_per_epoch:(e + 1) * self.tx_per_epoch]
            if e == cfg.epochs - 1:
                batch = batch + self.user_txs[cfg.epochs * self.tx_per_epoch:]
            per_round = math.ceil(len(batch) / feed_rounds) if batch else 0
            for r in range(rounds_r):
                if e == 0 and r == 0:
                    for tx in self.attack:
                        self._submit_user(tx)
                for tx in batch[r * per_round:(r + 1) * per_round]:
                    self._submit_user(tx)
                self._step(adversary)
            if e == cfg.epochs - 1:
                # drain: no new submissions until every commit settles
                for _ in range(8 * self.deadline + 16):
                    if not self.active and not any(self.pending):
                        break
                    self._step(adversary)
            self._audit_storage()
            series.append(self._factors(e, self.round))
        self._final_checks()
        m_prime = self.m / self._mean_shards_touched()
        report = FactorReport.build(
            self.counters, max(self.t_seen, 1), self.round, self.params.mu, self.params.tau, m_prime, series,
            t_storage=max(self.t_epoch, 1) if self.profile.compaction == Compaction.CHECKPOINT else None)
        for drv in self.active:
            if not self._excuse("atomicity", list(drv.shape.shards), 0):
                self.violations.append(Violation("atomicity", self.round, list(drv.shape.shards),
                                                 [drv.tx.txid], [], f"cross-shard tx stuck in phase {drv.phase}"))
        kinds = ("consistency", "persistence", "liveness", "growth", "quality", "atomicity")
        checks = {k: not any(v.kind == k for v in self.violations) for k in kinds}
        for drv in self.active:
            self.outcomes[Outcome.UNRESOLVED.value] += 1
        return ScenarioResult(self.profile.name, self.n, self.m, self.f, cfg.epochs, self.seed, report,
                              self.violations, self.excused, checks, self.outcomes, self.t_seen,
                              self.stable_user, self.rejected_user, len(self.attack) // 2)

    def _mean_shards_touched(self) -> float:
        txs = self.user_txs + self.attack
        if not txs or self.m == 1:
            return 1.0
        if self.routed:
            return 1.0
        return float(np.mean([len(TxShape.from_tx(tx, self.shard_of).shards) for tx in txs]))

    def _final_checks(self) -> None:
        for s, st in enumerate(self.states):
            shards = [s]
            trace = check_trace(st, max_window=64)
            for ok, kind in ((trace.prefix_ok, "persistence"), (trace.growth_ok, "growth"),
                             (trace.quality_ok, "quality")):
                if not ok and not self._excuse(kind, shards, 0):
                    self.violations.append(Violation(kind, self.round, shards, detail=str(trace)))
        for txid, (s, r0) in sorted(self.submitted.items()):
            if self.round - r0 > self.deadline and not any(r >= r0 for r in self.saturated[s]):
                if not self._excuse("liveness", [s], r0):
                    self.violations.append(Violation("liveness", self.round, [s], [txid], [],
                                                     f"record {txid} never became stable"))


def run_scenario(profile: Union[ProtocolProfile, str], params: ScenarioConfig, seed: int) -> ScenarioResult:
    """Simulate ``params.epochs`` epochs of ``profile`` and collect factors and violations."""
    if isinstance(profile, str):
        profile = get_profile(profile)
    profile = profile.with_p(params.p)
    return _Run(profile, params, seed).run()
