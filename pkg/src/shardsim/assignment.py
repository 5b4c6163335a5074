"""Party-to-shard assignment, a-honesty checks and epoch reconfiguration."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import IO, Iterable, NamedTuple, Sequence

import numpy as np
from scipy.signal import fftconvolve
from scipy.stats import binom, poisson


@dataclass(frozen=True)
class Assignment:
    """Parties (``parties[i]``) mapped to shards (``shards[i]``) for one epoch."""

    epoch: int
    m: int
    parties: np.ndarray
    shards: np.ndarray

    @property
    def n(self) -> int:
        return int(self.parties.size)

    @property
    def shard_sizes(self) -> np.ndarray:
        return np.bincount(self.shards, minlength=self.m)

    def party_shard(self) -> dict[int, int]:
        return dict(zip(self.parties.tolist(), self.shards.tolist()))

    def members(self, shard: int) -> np.ndarray:
        return self.parties[self.shards == shard]

    def shard_of(self, party: int) -> int:
        idx = np.flatnonzero(self.parties == party)
        if idx.size == 0:
            raise KeyError(party)
        return int(self.shards[idx[0]])

    def write_csv(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["party_id", "shard_id"])
        for p, s in zip(self.parties.tolist(), self.shards.tolist()):
            w.writerow([p, s])


def read_assignment_csv(fh: IO[str], m: int, epoch: int = 0) -> Assignment:
    rows = list(csv.DictReader(fh))
    parties = np.array([int(r["party_id"]) for r in rows], dtype=np.int64)
    shards = np.array([int(r["shard_id"]) for r in rows], dtype=np.int64)
    return Assignment(epoch, m, parties, shards)


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([seed & ((1 << 64) - 1), tag])


def assign_uniform(n: int, m: int, seed: int, epoch: int = 0) -> Assignment:
    """Every party independently uniform over [m]."""
    if not n >= m >= 1:
        raise ValueError("need n >= m >= 1")
    shards = _rng(seed, 0xA551).integers(0, m, size=n)
    return Assignment(epoch, m, np.arange(n, dtype=np.int64), shards.astype(np.int64))


def reshuffle_full(assignment: Assignment, seed: int) -> Assignment:
    """Fresh uniform assignment for the next epoch, independent of the old one."""
    shards = _rng(seed, 0x5E5F + assignment.epoch + 1).integers(0, assignment.m, size=assignment.n)
    return Assignment(assignment.epoch + 1, assignment.m, assignment.parties.copy(),
                      shards.astype(np.int64))


@dataclass(frozen=True)
class ShardHonesty:
    size: int
    corrupt_count: int

    @property
    def honest_fraction(self) -> float:
        return 1.0 if self.size == 0 else 1.0 - self.corrupt_count / self.size


@dataclass(frozen=True)
class HonestyReport:
    shards: tuple[ShardHonesty, ...]
    a: float
    all_a_honest: bool

    @property
    def violating(self) -> list[int]:
        return [i for i, s in enumerate(self.shards) if not _is_a_honest(s.size, s.corrupt_count, self.a)]


def _frac(a: float) -> Fraction:
    return Fraction(a).limit_denominator(10_000)


def _is_a_honest(size: int, corrupt: int, a: float) -> bool:
    fa = _frac(a)
    return corrupt * fa.denominator <= fa.numerator * size


def check_a_honest(assignment: Assignment, corrupt: Iterable[int], a: float) -> HonestyReport:
    """Per-shard sizes and corrupt counts; a shard passes iff corrupt <= a * size."""
    corrupt_mask = np.isin(assignment.parties, np.fromiter(corrupt, dtype=np.int64))
    sizes = assignment.shard_sizes
    bad = np.bincount(assignment.shards[corrupt_mask], minlength=assignment.m)
    shards = tuple(ShardHonesty(int(s), int(c)) for s, c in zip(sizes, bad))
    ok = all(_is_a_honest(s.size, s.corrupt_count, a) for s in shards)
    return HonestyReport(shards, a, ok)


def violation_counts(sizes: np.ndarray, corrupt: np.ndarray, a: float) -> np.ndarray:
    """Vectorised a-honesty violation mask (``corrupt > a * size``)."""
    fa = _frac(a)
    return corrupt * fa.denominator > fa.numerator * sizes


def min_log_coefficient(a: float, p: float, c: float = 1.0) -> float:
    """Smallest c' for which m = n / (c' ln n) shards stay a-honest w.h.p."""
    if not 0 <= p < a <= 1:
        raise ValueError(f"need 0 <= p < a <= 1 (got p={p}, a={a})")
    if c <= 0:
        raise ValueError("c must be > 0")
    fa, fp = _frac(a), _frac(p)
    return c * float((2 + fa - fp) / (fa - fp) ** 2)


class SafeShards(NamedTuple):
    m: int
    vacuous: bool
    raw: float


def max_safe_shards(n: int, a: float, p: float, c: float = 1.0) -> SafeShards:
    """floor(n / (c' ln n)), clamped to 1 with a flag when the bound is vacuous."""
    if n < 3:
        raise ValueError("n must be >= 3")
    raw = n / (min_log_coefficient(a, p, c) * math.log(n))
    m = math.floor(raw)
    if m < 1:
        return SafeShards(1, True, raw)
    return SafeShards(m, False, raw)


def chernoff_violation_bound(n: int, m: int, a: float, p: float) -> float:
    """exp(-((a-p)^2 / (2+a-p)) * n/m)."""
    return math.exp(-((a - p) ** 2 / (2 + a - p)) * n / m)


def exact_shard_violation_prob(n: int, f: int, m: int, a: float) -> float:
    """P[one fixed shard is not a-honest] under independent uniform placement.

    Honest and corrupt counts of a shard are independent binomials; the sum
    runs over the corrupt count with the honest tail taken from the CDF.
    """
    fa = _frac(a)
    num, den = fa.numerator, fa.denominator
    c = np.arange(f + 1)
    pc = binom.pmf(c, f, 1.0 / m)
    # corrupt*den > num*(h + c)  <=>  h < c*(den - num)/num
    if num == 0:
        return float(pc[1:].sum())
    bound = c * (den - num)
    h_max = np.where(bound % num == 0, bound // num - 1, bound // num)
    ph = np.where(h_max >= 0, binom.cdf(h_max, n - f, 1.0 / m), 0.0)
    return float(np.sum(pc * ph))


def all_honest_union_bound(n: int, f: int, m: int, a: float) -> float:
    """Union-bound estimate of P[all shards a-honest]."""
    return max(0.0, 1.0 - m * exact_shard_violation_prob(n, f, m, a))


def all_honest_exact(n: int, f: int, m: int, a: float, tail_sd: float = 12.0) -> float:
    """P[every shard a-honest] under independent uniform placement, by convolution.

    Honest and corrupt counts are Poissonised: a shard's count pair has
    independent Poisson(h/m), Poisson(f/m) marginals, the product over shards
    is convolved and the joint probability of the totals (h, f) is divided
    out. Only the Poisson tails beyond ``tail_sd`` standard deviations are
    dropped.
    """
    h = n - f
    fa = _frac(a)

    def support(total: int) -> np.ndarray:
        lam = total / m
        return np.arange(min(total, math.ceil(lam + tail_sd * math.sqrt(lam) + tail_sd)) + 1)

    i, j = support(h), support(f)
    ok = j[None, :] * fa.denominator <= fa.numerator * (i[:, None] + j[None, :])
    g = np.outer(poisson.pmf(i, h / m), poisson.pmf(j, f / m)) * ok
    acc = g
    for _ in range(m - 1):
        acc = np.clip(fftconvolve(acc, g)[: h + 1, : f + 1], 0.0, None)
    if acc.shape[0] <= h or acc.shape[1] <= f:
        return 0.0
    return float(acc[h, f] / (poisson.pmf(h, h) * poisson.pmf(f, f)))


class ChurnBudgetExceeded(ValueError):
    pass


def _split_groups(sizes: np.ndarray) -> tuple[list[int], list[int]]:
    m = sizes.size
    order = sorted(range(m), key=lambda i: (-int(sizes[i]), i))
    half = max(1, m // 2) if m > 1 else 1
    active = order[:half]
    inactive = order[half:] or order[:half]
    return active, inactive


def cuckoo_step(assignment: Assignment, joins: Sequence[int], leaves: Sequence[int],
                evict_per_shard: int, seed: int, churn_budget: int = 8) -> Assignment:
    """Bounded Cuckoo-rule reconfiguration.

    Leavers are removed, shards are split by size into a larger half A and a
    smaller half I (lowest index wins ties), joiners go uniformly into A, and
    ``evict_per_shard`` members of every shard move uniformly into I.
    """
    if len(joins) + len(leaves) > churn_budget:
        raise ChurnBudgetExceeded(
            f"{len(joins)} joins + {len(leaves)} leaves exceed churn budget {churn_budget}")
    rng = _rng(seed, 0xC0C0 + assignment.epoch)
    keep = ~np.isin(assignment.parties, np.asarray(leaves, dtype=np.int64))
    parties = assignment.parties[keep]
    shards = assignment.shards[keep].copy()
    m = assignment.m
    a_group, i_group = _split_groups(np.bincount(shards, minlength=m))

    new_parties = np.asarray(joins, dtype=np.int64)
    new_shards = np.asarray(a_group, dtype=np.int64)[rng.integers(0, len(a_group), size=new_parties.size)]

    if evict_per_shard > 0:
        evicted: list[int] = []
        for s in range(m):
            idx = np.flatnonzero(shards == s)
            if idx.size:
                take = min(evict_per_shard, idx.size)
                evicted.extend(rng.choice(idx, size=take, replace=False).tolist())
        if evicted:
            ev = np.asarray(sorted(evicted), dtype=np.int64)
            shards[ev] = np.asarray(i_group, dtype=np.int64)[rng.integers(0, len(i_group), size=ev.size)]

    return Assignment(assignment.epoch + 1, m, np.concatenate([parties, new_parties]),
                      np.concatenate([shards, new_shards]))
