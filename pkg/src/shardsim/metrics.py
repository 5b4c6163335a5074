"""Overhead factors, the scaling factor, throughput and storage growth."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .assignment import Assignment, assign_uniform, min_log_coefficient, reshuffle_full

SCHEMA_VERSION = 1


@dataclass
class PartyCounters:
    """Per-party message, storage and oracle-call counters."""

    n: int
    messages: np.ndarray = field(default=None)  # type: ignore[assignment]
    stored: np.ndarray = field(default=None)  # type: ignore[assignment]
    oracle_calls: np.ndarray = field(default=None)  # type: ignore[assignment]
    shared_messages: int = 0  # beacon traffic not attributed to one party

    def __post_init__(self) -> None:
        for name in ("messages", "stored", "oracle_calls"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.n, dtype=np.int64))

    def add_messages(self, parties: np.ndarray | Sequence[int], each: int | np.ndarray) -> None:
        np.add.at(self.messages, np.asarray(parties, dtype=np.int64), each)

    def add_oracle_calls(self, parties: np.ndarray | Sequence[int], each: int | np.ndarray) -> None:
        np.add.at(self.oracle_calls, np.asarray(parties, dtype=np.int64), each)

    def set_stored(self, stored: np.ndarray) -> None:
        self.stored = np.asarray(stored, dtype=np.int64).copy()


def omega_s(counters: PartyCounters, t: int) -> float:
    if t < 1:
        raise ValueError("t must be >= 1")
    return float(counters.stored.sum()) / t


def omega_c(counters: PartyCounters, t: int) -> float:
    if t < 1:
        raise ValueError("t must be >= 1")
    return float(counters.oracle_calls.sum()) / t


def omega_m(counters: PartyCounters, n: int, rounds: Optional[int] = None) -> float:
    """Messages per party; divided by ``rounds`` when given (per-round amortised)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    total = float(counters.messages.sum() + counters.shared_messages) / n
    return total / rounds if rounds else total


def scaling_factor(n: int, omega_m_value: float, omega_s_value: float, omega_c_value: float) -> float:
    worst = max(omega_m_value, omega_s_value, omega_c_value)
    return math.inf if worst <= 0 else n / worst


@dataclass
class EpochFactors:
    epoch: int
    omega_m: float
    omega_s: float
    omega_c: float
    sigma_scale: float


@dataclass
class FactorReport:
    n: int
    t: int
    rounds: int
    omega_m: float
    omega_m_total: float
    omega_s: float
    omega_c: float
    sigma_scale: float
    m_prime: float
    sigma_throughput: float
    series: list[EpochFactors] = field(default_factory=list)

    @classmethod
    def build(cls, counters: PartyCounters, t: int, rounds: int, mu: float, tau: float,
              m_prime: float, series: Optional[list[EpochFactors]] = None,
              t_storage: Optional[int] = None) -> "FactorReport":
        """``t_storage`` replaces ``t`` in omega_s when older txs were compacted away."""
        om = omega_m(counters, counters.n, rounds)
        os_ = omega_s(counters, t_storage or t)
        oc = omega_c(counters, t)
        return cls(counters.n, t, rounds, om, omega_m(counters, counters.n), os_, oc,
                   scaling_factor(counters.n, om, os_, oc), m_prime, mu * tau * m_prime,
                   list(series or []))

    def identity_holds(self) -> bool:
        return self.sigma_scale == scaling_factor(self.n, self.omega_m, self.omega_s, self.omega_c)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def series_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "omega_m", "omega_s", "omega_c", "sigma_scale"])
        for e in self.series:
            w.writerow([e.epoch, repr(e.omega_m), repr(e.omega_s), repr(e.omega_c), repr(e.sigma_scale)])
        return buf.getvalue()


class ScalingFit(NamedTuple):
    slope: float
    label: str


def classify_scaling(ns: Sequence[float], sigmas: Sequence[float], grows: float = 0.5,
                     flat: float = 0.1) -> ScalingFit:
    """Log-log slope of Sigma against n: >= grows is omega(1), <= flat is Theta(1)."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(sigmas, dtype=float))
    slope = float(np.polyfit(x, y, 1)[0])
    if slope >= grows:
        return ScalingFit(slope, "omega(1)")
    if abs(slope) <= flat:
        return ScalingFit(slope, "Theta(1)")
    return ScalingFit(slope, "inconclusive")


class Throughput(NamedTuple):
    sigma: float
    bound: Optional[float]


def throughput_bound_coefficient(mu: float, tau: float, a: float, p: float, v: float, c: float = 1.0) -> float:
    """The factor K in sigma < K * n / ln n."""
    return mu * tau / (v * min_log_coefficient(a, p, c))


def throughput_factor(mu: float, tau: float, m: int, v: float, n: Optional[int] = None,
                      a: Optional[float] = None, p: Optional[float] = None, c: float = 1.0) -> Throughput:
    """mu * tau * m / v and, given (n, a, p), its upper bound from the safe shard count."""
    if not (0 < mu <= 1 and 0 < tau <= 1 and m >= 1 and v >= 1):
        raise ValueError("parameters out of range")
    bound = None
    if n is not None and a is not None and p is not None:
        bound = throughput_bound_coefficient(mu, tau, a, p, v, c) * n / math.log(n)
    return Throughput(mu * tau * m / v, bound)


class Compaction(str):
    NONE = "none"
    CHECKPOINT = "checkpoint"


@dataclass
class StorageSeries:
    compaction: str
    omega_s: list[float]
    stored_totals: list[int]
    t_totals: list[int]
    distinct_shards: list[float]


def storage_growth(n: int, m: int, epochs: int, compaction: str, txs_per_epoch: int, seed: int,
                   assignments: Optional[Iterable[Assignment]] = None) -> StorageSeries:
    """Space overhead per epoch under uniform reshuffles.

    Transactions are intra-shard and split evenly, ``txs_per_epoch / m`` per
    shard per epoch. Without compaction a party joining a shard downloads its
    whole history and keeps the copies of shards it left; with checkpoints it
    only keeps its current shard's transactions since the last state block.
    The checkpoint denominator is the epoch's transaction count, since older
    transactions are compacted away.
    """
    if compaction not in (Compaction.NONE, Compaction.CHECKPOINT):
        raise ValueError(f"unknown compaction {compaction!r}")
    per_shard = txs_per_epoch / m
    history = np.zeros(m)
    stored = np.zeros((n, m))
    seen = np.zeros((n, m), dtype=bool)
    it = iter(assignments) if assignments is not None else None
    assignment = assign_uniform(n, m, seed)
    out = StorageSeries(compaction, [], [], [], [])
    for e in range(epochs):
        if it is not None:
            assignment = next(it)
        elif e > 0:
            assignment = reshuffle_full(assignment, seed)
        shard = assignment.shards
        rows = assignment.parties
        history += per_shard
        seen[rows, shard] = True
        if compaction == Compaction.NONE:
            stored[rows, shard] = history[shard]
            t = int(round(history.sum()))
        else:
            stored[:] = 0
            stored[rows, shard] = per_shard
            t = txs_per_epoch
        total = int(round(stored.sum()))
        out.stored_totals.append(total)
        out.t_totals.append(t)
        out.omega_s.append(float(stored.sum() / t))
        out.distinct_shards.append(float(seen.sum(axis=1).mean()))
    return out


def distinct_shards_per_party(assignments: Iterable[Assignment]) -> float:
    """Mean number of distinct shards each party has been placed in."""
    visited: dict[int, set[int]] = {}
    for a in assignments:
        for p, s in zip(a.parties.tolist(), a.shards.tolist()):
            visited.setdefault(p, set()).add(s)
    return float(np.mean([len(v) for v in visited.values()])) if visited else 0.0
