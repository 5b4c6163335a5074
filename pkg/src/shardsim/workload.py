"""Transaction workloads, the UTXO-to-shard map and cross-shard statistics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Optional, Union

import numpy as np

from .core import Transaction, UtxoId

MASK64 = (1 << 64) - 1
ID_BITS = 63

CountDist = Union[int, Mapping[int, float]]


def mix64(x: int) -> int:
    # splitmix64 finalizer
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def utxo_shard(u: UtxoId, m: int, salt: int = 0) -> int:
    """Deterministic, uniform map from a UTXO id to a shard index in [0, m)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if m == 1:
        return 0
    return mix64((u ^ salt) & MASK64) % m


def mix64_array(x: np.ndarray) -> np.ndarray:
    """Vectorised :func:`mix64` over uint64 values."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = x + np.uint64(0x9E3779B97F4A7C15)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return x ^ (x >> np.uint64(31))


def utxo_shards(ids: np.ndarray, m: int, salt: int = 0) -> np.ndarray:
    """Vectorised :func:`utxo_shard` over a uint64 array."""
    if m < 1:
        raise ValueError("m must be >= 1")
    x = mix64_array(np.asarray(ids, dtype=np.uint64) ^ np.uint64(salt & MASK64))
    return (x % np.uint64(m)).astype(np.int64)


def shard_matrix(txs: list[Transaction], m: int, salt: int = 0) -> np.ndarray:
    """Shard labels of every UTXO of equally sized txs, one row per tx."""
    ids = np.array([(*tx.inputs, *tx.outputs) for tx in txs], dtype=np.uint64)
    return utxo_shards(ids, m, salt).reshape(ids.shape)


def tx_shards(tx: Transaction, m: int, salt: int = 0) -> set[int]:
    return {utxo_shard(u, m, salt) for u in (*tx.inputs, *tx.outputs)}


def is_cross_shard(tx: Transaction, m: int, salt: int = 0) -> bool:
    """True iff the UTXOs of ``tx`` do not all map to the same shard."""
    if m == 1:
        return False
    return len(tx_shards(tx, m, salt)) > 1


def expected_cross_fraction(m: int, v: int) -> float:
    """Probability that a size-``v`` transaction touches more than one shard."""
    if m < 1 or v < 2:
        raise ValueError("need m >= 1 and v >= 2")
    return 1.0 - float(m) ** (-(v - 1))


def expected_shard_degree(m: int, t: int) -> float:
    """Mean shard degree of the random edge-sampling graph with self-loops."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if m < 2:
        return 0.0
    return (m - 1) * (1.0 - (1.0 - 2.0 / (m * (m + 1))) ** t)


def expected_shard_degree_utxo(m: int, t: int) -> float:
    """Same statistic when both endpoints are drawn independently from [m].

    Under a uniform UTXO map a given unordered pair of distinct shards is hit
    with probability 2/m^2 per v=2 transaction, not 2/(m(m+1)).
    """
    if m < 2:
        return 0.0
    return (m - 1) * (1.0 - (1.0 - 2.0 / (m * m)) ** t)


def shard_degree_std(m: int, t: int, q: Optional[float] = None) -> float:
    """Exact standard deviation of the mean shard degree in one trial.

    Edges are occupancy indicators over ``t`` independent draws, each hitting a
    fixed non-loop edge with probability ``q``. Pairs of distinct edges are
    negatively correlated: P(both absent) = (1 - 2q)^t.
    """
    if m < 2 or t == 0:
        return 0.0
    if q is None:
        q = 2.0 / (m * (m + 1))
    e = m * (m - 1) // 2
    p_absent = (1.0 - q) ** t
    p_edge = 1.0 - p_absent
    cov = (1.0 - 2.0 * q) ** t - p_absent * p_absent
    var_edges = e * p_edge * (1.0 - p_edge) + e * (e - 1) * cov
    return (2.0 / m) * math.sqrt(max(var_edges, 0.0))


@dataclass(frozen=True)
class WorkloadSpec:
    """Parameters of the transaction distribution.

    ``placement`` selects how UTXOs land in shards:

    * ``uniform``: inputs uniform from the live pool, outputs fresh uniform ids
    * ``intra``: every tx stays inside one uniformly chosen shard
    * ``edge``: v=2 txs whose (input shard, output shard) pair is uniform over
      unordered shard pairs including self-loops
    """

    tx_count: int
    inputs: CountDist = 2
    outputs: CountDist = 3
    seed: int = 0
    placement: str = "uniform"
    inject_conflicts: int = 0
    reuse_outputs: bool = False

    def __post_init__(self) -> None:
        if self.tx_count < 0:
            raise ValueError("tx_count must be >= 0")
        if self.placement not in ("uniform", "intra", "edge"):
            raise ValueError(f"unknown placement {self.placement!r}")
        if self.placement == "edge" and (self.inputs != 1 or self.outputs != 1):
            raise ValueError("edge placement needs 1 input and 1 output")


class PoolExhausted(Exception):
    pass


@dataclass
class GeneratedWorkload:
    txs: list[Transaction]
    v_avg: float
    m: int
    salt: int = 0
    conflict_pairs: list[tuple[int, int]] = field(default_factory=list)

    def shard_of(self, u: UtxoId) -> int:
        return utxo_shard(u, self.m, self.salt)

    def write_jsonl(self, fh: IO[str]) -> None:
        for tx in self.txs:
            fh.write(json.dumps({"txid": tx.txid, "inputs": list(tx.inputs),
                                 "outputs": list(tx.outputs)}) + "\n")


def read_jsonl(lines: Iterable[str]) -> list[Transaction]:
    out = []
    for line in lines:
        line = line.strip()
        if line:
            rec = json.loads(line)
            out.append(Transaction(rec["txid"], tuple(rec["inputs"]), tuple(rec["outputs"])))
    return out


def _draw_count(rng: np.random.Generator, dist: CountDist) -> int:
    if isinstance(dist, int):
        return dist
    values = sorted(dist)
    probs = np.array([dist[v] for v in values], dtype=float)
    return int(values[rng.choice(len(values), p=probs / probs.sum())])


def random_ids(rng: np.random.Generator, count: int) -> list[int]:
    return [int(x) for x in rng.integers(0, 1 << ID_BITS, size=count, dtype=np.int64)]


def ids_in_shard(rng: np.random.Generator, shard: int, m: int, count: int, salt: int = 0) -> list[int]:
    """Fresh uniform ids that map to ``shard`` (rejection sampling)."""
    out: list[int] = []
    while len(out) < count:
        batch = rng.integers(0, 1 << ID_BITS, size=max(8, (count - len(out)) * m * 2), dtype=np.int64)
        hit = batch[utxo_shards(batch.astype(np.uint64), m, salt) == shard]
        out.extend(int(x) for x in hit[: count - len(out)])
    return out


def make_genesis(m: int, per_shard: int, seed: int, salt: int = 0) -> dict[int, list[UtxoId]]:
    """``per_shard`` uniform genesis UTXOs for every shard."""
    rng = np.random.default_rng([seed, 0x6E6E])
    return {s: ids_in_shard(rng, s, m, per_shard, salt) for s in range(m)}


def generate(spec: WorkloadSpec, genesis: Mapping[int, list[UtxoId]], m: Optional[int] = None,
             salt: int = 0, txid_base: int = 1) -> GeneratedWorkload:
    """Draw ``spec.tx_count`` transactions spending from ``genesis``.

    Pure function of its arguments. Raises :class:`PoolExhausted` when the live
    pool cannot cover an input draw.
    """
    if m is None:
        m = max(len(genesis), 1)
    rng = np.random.default_rng([spec.seed & MASK64, 0x7778])
    per_shard = {s: list(genesis.get(s, ())) for s in range(m)}
    txs: list[Transaction] = []
    spent: list[int] = []
    conflict_pairs: list[tuple[int, int]] = []
    total_size = 0
    edges = [(i, j) for i in range(m) for j in range(i, m)]

    def take(shard: Optional[int], count: int, tx_index: int) -> list[int]:
        if shard is None:
            sizes = np.array([len(per_shard[s]) for s in range(m)])
            avail = int(sizes.sum())
            if avail < count:
                raise PoolExhausted(f"tx {tx_index}: need {count} inputs, live pool has {avail}")
            flat = rng.choice(avail, size=count, replace=False)
            bounds = np.cumsum(sizes)
            picks = []
            for idx in sorted(int(x) for x in flat):
                s = int(np.searchsorted(bounds, idx, side="right"))
                off = idx - (int(bounds[s - 1]) if s else 0)
                picks.append((s, off))
            # pop from the back so earlier offsets stay valid
            chosen = []
            for s, off in sorted(picks, key=lambda p: -p[1]):
                pool = per_shard[s]
                pool[off], pool[-1] = pool[-1], pool[off]
                chosen.append(pool.pop())
            rng.shuffle(chosen)
            return chosen
        pool = per_shard[shard]
        if len(pool) < count:
            raise PoolExhausted(f"tx {tx_index}: need {count} inputs in shard {shard}, pool has {len(pool)}")
        chosen = []
        for _ in range(count):
            off = int(rng.integers(len(pool)))
            pool[off], pool[-1] = pool[-1], pool[off]
            chosen.append(pool.pop())
        return chosen

    fast = (spec.placement == "uniform" and not spec.reuse_outputs
            and isinstance(spec.inputs, int) and isinstance(spec.outputs, int))
    if fast and spec.tx_count:
        flat = np.array([u for s in range(m) for u in per_shard[s]], dtype=np.int64)
        need = spec.tx_count * spec.inputs
        if need > len(flat):
            raise PoolExhausted(f"need {need} inputs, live pool has {len(flat)}")
        picked = rng.choice(len(flat), size=need, replace=False)
        ins_all = flat[picked].reshape(spec.tx_count, spec.inputs).tolist()
        outs_all = rng.integers(0, 1 << ID_BITS, size=(spec.tx_count, spec.outputs),
                                dtype=np.int64).tolist()
        mask = np.ones(len(flat), dtype=bool)
        mask[picked] = False
        left = set(flat[mask].tolist())
        for s in range(m):
            per_shard[s] = [u for u in per_shard[s] if u in left]
        for i in range(spec.tx_count):
            txs.append(Transaction(txid_base + i, tuple(ins_all[i]), tuple(outs_all[i])))
        total_size = spec.tx_count * (spec.inputs + spec.outputs)

    fast_edge = spec.placement == "edge" and not spec.reuse_outputs
    if fast_edge and spec.tx_count:
        pick = rng.integers(len(edges), size=spec.tx_count)
        pairs = np.asarray(edges, dtype=np.int64)[pick]
        flip = rng.random(spec.tx_count) < 0.5
        src = np.where(flip, pairs[:, 1], pairs[:, 0])
        dst = np.where(flip, pairs[:, 0], pairs[:, 1])
        ins = np.zeros(spec.tx_count, dtype=np.int64)
        outs = np.zeros(spec.tx_count, dtype=np.int64)
        for s in range(m):
            rows = np.flatnonzero(src == s)
            if rows.size:
                pool = per_shard[s]
                if len(pool) < rows.size:
                    raise PoolExhausted(f"need {rows.size} inputs in shard {s}, pool has {len(pool)}")
                chosen = rng.choice(len(pool), size=rows.size, replace=False)
                ins[rows] = np.asarray(pool, dtype=np.int64)[chosen]
                gone = set(chosen.tolist())
                per_shard[s] = [u for j, u in enumerate(pool) if j not in gone]
            rows = np.flatnonzero(dst == s)
            if rows.size:
                outs[rows] = ids_in_shard(rng, s, m, rows.size, salt)
        for i, (u, o) in enumerate(zip(ins.tolist(), outs.tolist())):
            txs.append(Transaction(txid_base + i, (u,), (o,)))
        spent.extend(ins.tolist())
        total_size = 2 * spec.tx_count

    for i in range(0 if fast or fast_edge else spec.tx_count):
        if spec.placement == "edge":
            a, b = edges[int(rng.integers(len(edges)))]
            if rng.random() < 0.5:
                a, b = b, a
            ins = take(a, 1, i)
            outs = ids_in_shard(rng, b, m, 1, salt)
        elif spec.placement == "intra":
            s = int(rng.integers(m))
            ins = take(s, _draw_count(rng, spec.inputs), i)
            outs = ids_in_shard(rng, s, m, _draw_count(rng, spec.outputs), salt)
        else:
            ins = take(None, _draw_count(rng, spec.inputs), i)
            outs = random_ids(rng, _draw_count(rng, spec.outputs))
        tx = Transaction(txid_base + i, tuple(ins), tuple(outs))
        txs.append(tx)
        spent.extend(ins)
        total_size += tx.size
        if spec.reuse_outputs:
            for o in outs:
                per_shard[utxo_shard(o, m, salt)].append(o)

    # Conflicting twins: each spends one input of an earlier tx plus, when
    # available, one fresh input (the x / {x, y} shape).
    for j in range(min(spec.inject_conflicts, len(txs))):
        victim = txs[int(rng.integers(len(txs)))]
        x = victim.inputs[int(rng.integers(len(victim.inputs)))]
        extra: list[int] = []
        try:
            extra = take(None, 1, spec.tx_count + j)
        except PoolExhausted:
            pass
        twin = Transaction(txid_base + spec.tx_count + j, (x, *extra), tuple(random_ids(rng, 1)))
        txs.append(twin)
        conflict_pairs.append((victim.txid, twin.txid))
        total_size += twin.size

    v_avg = total_size / len(txs) if txs else 0.0
    return GeneratedWorkload(txs, v_avg, m, salt, conflict_pairs)


@dataclass(frozen=True)
class GammaReport:
    per_shard: tuple[int, ...]
    mean: float
    self_loops: int
    cross_shard: int


def measure_gamma(txs: Iterable[Transaction], m: int, salt: int = 0) -> GammaReport:
    """Distinct counterpart shards of every shard over a window of txs.

    Intra-shard transactions are self-loops and do not add to any degree.
    """
    neighbours: list[set[int]] = [set() for _ in range(m)]
    loops = cross = 0
    for tx in txs:
        shards = tx_shards(tx, m, salt)
        if len(shards) == 1:
            loops += 1
            continue
        cross += 1
        for s in shards:
            neighbours[s].update(shards - {s})
    per = tuple(len(nb) for nb in neighbours)
    return GammaReport(per, sum(per) / m if m else 0.0, loops, cross)
