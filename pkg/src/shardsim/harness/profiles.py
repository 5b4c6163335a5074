"""Built-in protocol profiles."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

from ..assignment import min_log_coefficient
from ..beacon import BeaconKind, CommitteeVss, CommitXor, Ideal, LeaderRandhound
from ..consensus import ConsensusParams, CostModel
from ..crossshard import Protocol
from ..metrics import Compaction

ASSIGNMENT_RULES = ("reshuffle", "cuckoo", "static")
STORAGE_RULES = ("own", "all", "light")


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolProfile:
    """Everything a scenario needs to know about one sharding protocol.

    ``cross_shard`` is None when txs are routed whole to the shard given by
    the hash of their input set. Storage ``light`` means every party keeps the
    header chain of every shard (not counted as stored txs) plus the full
    ledger of its own shard; a ``full_fraction`` of parties keeps every full
    ledger.
    """

    name: str
    beacon: BeaconKind
    assignment_rule: str
    consensus: ConsensusParams
    cross_shard: Optional[Protocol]
    compaction: str
    storage: str
    a: float
    p: float
    c: float = 1.0
    full_fraction: float = 0.0
    fixed_m: Optional[int] = None
    cuckoo_churn: int = 2
    cuckoo_evict: int = 1

    def __post_init__(self) -> None:
        if self.assignment_rule not in ASSIGNMENT_RULES:
            raise ProfileError(f"{self.name}: unknown assignment rule {self.assignment_rule!r}")
        if self.storage not in STORAGE_RULES:
            raise ProfileError(f"{self.name}: unknown storage rule {self.storage!r}")
        if self.compaction not in (Compaction.NONE, Compaction.CHECKPOINT):
            raise ProfileError(f"{self.name}: unknown compaction {self.compaction!r}")
        if self.cross_shard is Protocol.RELAY and self.storage != "light":
            raise ProfileError(f"{self.name}: relay txs need every shard's header chain (storage 'light')")
        if self.cross_shard is None and self.fixed_m != 1 and self.storage != "all":
            raise ProfileError(f"{self.name}: input-set routing needs every party to store every shard")
        if not 0 <= self.full_fraction <= 1:
            raise ProfileError(f"{self.name}: full_fraction must lie in [0, 1]")
        if not 0 <= self.p < self.a:
            raise ProfileError(f"{self.name}: need 0 <= p < a")

    @property
    def log_coefficient(self) -> float:
        return min_log_coefficient(self.a, self.p, self.c)

    def shard_count(self, n: int) -> int:
        """max(2, floor(n / (c' ln n))) unless the profile pins m."""
        if self.fixed_m is not None:
            return self.fixed_m
        return max(2, math.floor(n / (self.log_coefficient * math.log(n))))

    def with_p(self, p: Optional[float]) -> "ProtocolProfile":
        return self if p is None else replace(self, p=p)


def _profiles() -> dict[str, ProtocolProfile]:
    bft = ConsensusParams(tau=1.0, mu=1.0, k=1, a=1 / 3, cost_model=CostModel.QUADRATIC_BFT)
    return {
        "elastico": ProtocolProfile(
            "elastico", CommitXor(committee_size=32), "reshuffle", bft, None,
            Compaction.NONE, "all", a=1 / 3, p=1 / 4),
        "monoxide": ProtocolProfile(
            "monoxide", Ideal(), "static",
            ConsensusParams(tau=0.5, mu=0.5, k=3, a=1 / 2, cost_model=CostModel.GOSSIP),
            Protocol.RELAY, Compaction.NONE, "light", a=1 / 2, p=1 / 3, full_fraction=0.5),
        "omniledger": ProtocolProfile(
            "omniledger", LeaderRandhound(), "reshuffle", bft, Protocol.ATOMIX,
            Compaction.CHECKPOINT, "own", a=1 / 3, p=1 / 4),
        "rapidchain": ProtocolProfile(
            "rapidchain", CommitteeVss(committee_size=32), "cuckoo",
            ConsensusParams(tau=1 / 8, mu=1 / 2, k=1, a=1 / 2, cost_model=CostModel.SYNC_FOUR_ROUND),
            Protocol.DUMMY_TX, Compaction.NONE, "own", a=1 / 2, p=1 / 3),
        "baseline": ProtocolProfile(
            "baseline", Ideal(), "static", bft, None, Compaction.NONE, "own",
            a=1 / 3, p=1 / 4, fixed_m=1),
    }


PROFILES = _profiles()


def get_profile(name: str) -> ProtocolProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ProfileError(f"unknown profile {name!r} (known: {', '.join(sorted(PROFILES))})") from None
