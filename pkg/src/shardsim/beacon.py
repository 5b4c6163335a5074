"""Epoch randomness: an ideal seed plus cost and failure models per protocol family."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np


@dataclass(frozen=True)
class Ideal:
    tag = 0


@dataclass(frozen=True)
class CommitXor:
    """Final committee commits to and reveals random strings, XORed by everyone."""

    committee_size: int
    tag = 1

    def __post_init__(self) -> None:
        if self.committee_size < 1:
            raise ValueError("committee_size must be >= 1")


@dataclass(frozen=True)
class LeaderRandhound:
    """Elected leader runs a group-based PVSS round; a bad leader is retried."""

    group_size: Optional[int] = None
    retry_bound: int = 20
    leader_success: float = 0.5
    tag = 2

    def __post_init__(self) -> None:
        if self.group_size is not None and self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        if self.retry_bound < 1:
            raise ValueError("retry_bound must be >= 1")


@dataclass(frozen=True)
class CommitteeVss:
    """Reference committee runs a Feldman-VSS based generation."""

    committee_size: int
    tag = 3

    def __post_init__(self) -> None:
        if self.committee_size < 1:
            raise ValueError("committee_size must be >= 1")


BeaconKind = Union[Ideal, CommitXor, LeaderRandhound, CommitteeVss]


@dataclass(frozen=True)
class BeaconOutcome:
    seed: int
    rounds_used: int
    messages: int
    succeeded: bool


class Bias(str, enum.Enum):
    UNBIASABLE = "unbiasable"
    BOUNDED_BIAS = "bounded_bias"


def _epoch_seed(kind: BeaconKind, epoch: int, seed: int) -> int:
    ss = np.random.SeedSequence([seed & ((1 << 64) - 1), epoch, kind.tag, 0xBEAC])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def randhound_messages(n: int, group_size: Optional[int] = None) -> int:
    """One RandHound run: n * c^2 messages with group size c (default ceil(ln n))."""
    c = group_size if group_size is not None else max(1, math.ceil(math.log(max(n, 2))))
    return n * c * c


def run_beacon(kind: BeaconKind, epoch: int, p: float, n: int, seed: int) -> BeaconOutcome:
    """Produce the epoch seed and charge its cost."""
    if not 0 <= p < 0.5:
        raise ValueError("need 0 <= p < 1/2")
    value = _epoch_seed(kind, epoch, seed)
    if isinstance(kind, Ideal):
        return BeaconOutcome(value, 1, 0, True)
    if isinstance(kind, CommitXor):
        c = kind.committee_size
        return BeaconOutcome(value, 3, c * c + c * n, True)
    if isinstance(kind, CommitteeVss):
        c = kind.committee_size
        return BeaconOutcome(value, 3, c * c, True)
    if isinstance(kind, LeaderRandhound):
        rng = np.random.default_rng([seed & ((1 << 64) - 1), epoch, 0x1EAD])
        per_attempt = randhound_messages(n, kind.group_size)
        attempts = 0
        while attempts < kind.retry_bound:
            attempts += 1
            if rng.random() < kind.leader_success:
                return BeaconOutcome(value, attempts, attempts * per_attempt, True)
        return BeaconOutcome(0, attempts, attempts * per_attempt, False)
    raise TypeError(f"unknown beacon kind {kind!r}")


def bias_resistance_check(kind: BeaconKind) -> Bias:
    if isinstance(kind, CommitXor):
        return Bias.BOUNDED_BIAS
    return Bias.UNBIASABLE
