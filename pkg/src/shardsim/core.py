"""UTXO transactions, blocks, per-shard ledgers and the verification oracle.

A transaction is an abstract spend/create record: it destroys its input UTXOs
and creates fresh output UTXOs. Amounts are not modelled.

Cross-shard protocols leave *records* on the ledgers they touch. A record is a
:class:`Transaction` whose ``kind`` says what it does on this shard and whose
``ref`` names the original (user) transaction. The per-ledger UTXO index tracks
the effect of every record so validity and conflict checks are O(inputs).
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional

UtxoId = int
TxId = int

DEFAULT_BLOCK_CAPACITY = 100


class RecordKind(str, enum.Enum):
    ORDINARY = "ordinary"  # spend local inputs, create local outputs
    LOCK = "lock"  # lock local inputs pending a cross-shard decision
    COMMIT = "commit"  # locked inputs become permanently spent
    ABORT = "abort"  # locked inputs become spendable again
    CREATE = "create"  # create local outputs admitted by a cross-shard proof
    RELAY = "relay"  # relay record on the input shard (spend + forward)
    RELAY_IN = "relay_in"  # relay inclusion on the output shard
    ROLLBACK = "rollback"  # invalidates outputs created from a reverted relay


SPENDING_KINDS = frozenset({RecordKind.ORDINARY, RecordKind.RELAY})


@dataclass(frozen=True)
class Transaction:
    txid: TxId
    inputs: tuple[UtxoId, ...]
    outputs: tuple[UtxoId, ...]
    kind: RecordKind = RecordKind.ORDINARY
    origin: str = "user"
    ref: Optional[TxId] = None

    def __post_init__(self) -> None:
        if len(set(self.inputs)) != len(self.inputs):
            raise ValueError(f"tx {self.txid}: duplicate inputs")
        if len(set(self.outputs)) != len(self.outputs):
            raise ValueError(f"tx {self.txid}: duplicate outputs")
        if self.kind is RecordKind.ORDINARY and (not self.inputs or not self.outputs):
            raise ValueError(f"tx {self.txid}: needs at least one input and one output")

    @property
    def size(self) -> int:
        return len(self.inputs) + len(self.outputs)

    @property
    def user_txid(self) -> TxId:
        """Identifier of the user transaction this record belongs to."""
        return self.txid if self.ref is None else self.ref


@dataclass(frozen=True)
class Block:
    height: int
    txs: tuple[Transaction, ...]
    producer_honest: bool = True
    block_id: int = 0

    def __post_init__(self) -> None:
        if self.height < 0:
            raise ValueError("block height must be >= 0")


def conflicts(tx1: Transaction, tx2: Transaction) -> bool:
    """True iff the two (distinct) transactions spend a common input."""
    if tx1.user_txid == tx2.user_txid:
        return False
    return not set(tx1.inputs).isdisjoint(tx2.inputs)


class VerifyStatus(str, enum.Enum):
    VALID = "valid"
    CONFLICTING = "conflicting"
    MISSING_INPUT = "missing_input"


@dataclass(frozen=True)
class VerifyResult:
    status: VerifyStatus
    with_txid: Optional[TxId] = None
    utxo: Optional[UtxoId] = None

    @property
    def ok(self) -> bool:
        return self.status is VerifyStatus.VALID


VALID = VerifyResult(VerifyStatus.VALID)


class InvalidBlock(Exception):
    """Raised when appending a block would break ledger validity."""


class _Status(enum.Enum):
    ACTIVE = 0
    LOCKED = 1
    SPENT = 2


@dataclass
class ShardLedger:
    """Chain of blocks of one shard plus a UTXO index derived from it.

    ``genesis`` holds the UTXOs mapped to this shard at start. ``open_inputs``
    lets a profile accept any input as locally available (Elastico keeps the
    full chain everywhere and validates each shard's txs in isolation).
    """

    shard_id: int
    genesis: frozenset[UtxoId] = frozenset()
    capacity: int = DEFAULT_BLOCK_CAPACITY
    open_inputs: bool = False
    chain: list[Block] = field(default_factory=list)
    _status: dict[UtxoId, _Status] = field(default_factory=dict, repr=False)
    _holder: dict[UtxoId, TxId] = field(default_factory=dict, repr=False)
    _spender: dict[UtxoId, Transaction] = field(default_factory=dict, repr=False)
    _tx_count: int = field(default=0, repr=False)

    def __post_init__(self) -> None:
        for u in self.genesis:
            self._status[u] = _Status.ACTIVE

    def __len__(self) -> int:
        return len(self.chain)

    @property
    def tx_count(self) -> int:
        return self._tx_count

    def txs(self) -> Iterator[Transaction]:
        for block in self.chain:
            yield from block.txs

    def utxo_active(self, u: UtxoId) -> bool:
        st = self._status.get(u)
        if st is None:
            return self.open_inputs and u not in self._spender
        return st is _Status.ACTIVE

    def spender_of(self, u: UtxoId) -> Optional[Transaction]:
        return self._spender.get(u)

    def check(self, tx: Transaction) -> VerifyResult:
        """Validity of ``tx`` against the current chain (no counters touched)."""
        kind = tx.kind
        if kind in SPENDING_KINDS or kind is RecordKind.LOCK:
            for u in tx.inputs:
                st = self._status.get(u)
                if st is None:
                    if self.open_inputs and u not in self._spender:
                        continue
                    if u in self._spender:
                        return VerifyResult(VerifyStatus.CONFLICTING, self._spender[u].user_txid, u)
                    return VerifyResult(VerifyStatus.MISSING_INPUT, utxo=u)
                if st is _Status.SPENT:
                    return VerifyResult(VerifyStatus.CONFLICTING, self._spender[u].user_txid, u)
                if st is _Status.LOCKED and self._holder.get(u) != tx.user_txid:
                    return VerifyResult(VerifyStatus.CONFLICTING, self._holder[u], u)
        elif kind in (RecordKind.COMMIT, RecordKind.ABORT):
            for u in tx.inputs:
                if self._status.get(u) is not _Status.LOCKED or self._holder.get(u) != tx.user_txid:
                    return VerifyResult(VerifyStatus.MISSING_INPUT, utxo=u)
        for o in tx.outputs:
            if kind is RecordKind.ROLLBACK:
                break
            if o in self._status or o in self._spender:
                return VerifyResult(VerifyStatus.CONFLICTING, utxo=o)
        return VALID

    def _apply(self, tx: Transaction) -> None:
        kind = tx.kind
        if kind in SPENDING_KINDS:
            for u in tx.inputs:
                self._status[u] = _Status.SPENT
                self._spender[u] = tx
                self._holder.pop(u, None)
        elif kind is RecordKind.LOCK:
            for u in tx.inputs:
                self._status[u] = _Status.LOCKED
                self._holder[u] = tx.user_txid
        elif kind is RecordKind.COMMIT:
            for u in tx.inputs:
                self._status[u] = _Status.SPENT
                self._spender[u] = tx
                self._holder.pop(u, None)
        elif kind is RecordKind.ABORT:
            for u in tx.inputs:
                self._status[u] = _Status.ACTIVE
                self._holder.pop(u, None)
        if kind is RecordKind.ROLLBACK:
            for o in tx.outputs:
                self._status.pop(o, None)
        else:
            for o in tx.outputs:
                self._status[o] = _Status.ACTIVE

    def append(self, txs: Iterable[Transaction], producer_honest: bool = True,
               block_id: int = 0, validate: bool = True) -> Block:
        txs = tuple(txs)
        if len(txs) > self.capacity:
            raise InvalidBlock(f"shard {self.shard_id}: {len(txs)} txs exceed capacity {self.capacity}")
        for tx in txs:
            if validate:
                res = self.check(tx)
                if not res.ok:
                    raise InvalidBlock(f"shard {self.shard_id}: tx {tx.txid} rejected ({res.status.value})")
            self._apply(tx)
        block = Block(len(self.chain), txs, producer_honest, block_id)
        self.chain.append(block)
        self._tx_count += len(txs)
        return block

    def truncate(self, new_len: int) -> list[Block]:
        """Drop blocks past ``new_len`` and rebuild the index. Returns the dropped blocks."""
        dropped = self.chain[new_len:]
        kept = self.chain[:new_len]
        self.chain = []
        self._status = {u: _Status.ACTIVE for u in self.genesis}
        self._holder.clear()
        self._spender.clear()
        self._tx_count = 0
        for b in kept:
            for tx in b.txs:
                self._apply(tx)
            self.chain.append(b)
            self._tx_count += len(b.txs)
        return dropped

    def stable_len(self, k: int) -> int:
        return max(0, len(self.chain) - k)

    def stable_tx_count(self, k: int) -> int:
        n = len(self.chain) - k
        if n <= 0:
            return 0
        if k == 0:
            return self._tx_count
        return self._tx_count - sum(len(b.txs) for b in self.chain[n:])


OracleHook = Callable[[int], None]


def oracle_verify(tx: Transaction, ledger: ShardLedger, party: Optional[int] = None,
                  hook: Optional[OracleHook] = None) -> VerifyResult:
    """The verification oracle V: check ``tx`` against ``ledger``.

    Every call is charged to ``party`` through ``hook`` (the q_i counter).
    """
    if hook is not None and party is not None:
        hook(party)
    # A record that shares an input with an effective spend conflicts with it.
    for u in tx.inputs:
        prior = ledger.spender_of(u)
        if prior is not None and prior.user_txid != tx.user_txid:
            return VerifyResult(VerifyStatus.CONFLICTING, prior.user_txid, u)
    return ledger.check(tx)


def stable_prefix(ledger: ShardLedger, k: int) -> list[Transaction]:
    """Transactions of all blocks except the last ``k`` (the pruned ledger)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    n = len(ledger.chain) - k
    return [tx for b in ledger.chain[:max(0, n)] for tx in b.txs]


@dataclass
class PartyView:
    """The collection of ledgers a party keeps (SL_j).

    Values are either the live ledger of a shard or a frozen length of it: a
    party that left a shard keeps the copy it had downloaded.
    """

    party_id: int
    honest: bool = True
    ledgers: dict[int, ShardLedger] = field(default_factory=dict)
    frozen: dict[int, int] = field(default_factory=dict)

    def visible_len(self, shard_id: int) -> int:
        if shard_id in self.frozen:
            return self.frozen[shard_id]
        return len(self.ledgers[shard_id])


Position = tuple[int, int, int]


def report_position(view: PartyView, txid: TxId, k: int) -> list[Position]:
    """All stable (shard, block, offset) positions of ``txid`` in the view.

    Matches both the record id and the user tx it refers to, so a cross-shard
    transaction reports every ledger that holds one of its records.
    """
    found: list[Position] = []
    for sid, ledger in sorted(view.ledgers.items()):
        upto = view.visible_len(sid) - k
        for b in ledger.chain[:max(0, upto)]:
            for off, tx in enumerate(b.txs):
                if tx.txid == txid or tx.ref == txid:
                    found.append((sid, b.height, off))
    return found


@dataclass(frozen=True)
class SystemParams:
    n: int
    f: int
    m: int
    k: int = 1
    u: int = 1
    R: int = 10
    B_max: int = DEFAULT_BLOCK_CAPACITY
    a: float = 1 / 3

    def __post_init__(self) -> None:
        if not 0 <= self.f < self.n:
            raise ValueError("need 0 <= f < n")
        if self.m < 1 or self.k < 1 or self.u < 1 or self.R < 1 or self.B_max < 1:
            raise ValueError("m, k, u, R, B_max must be >= 1")
        if not (self.p < self.a <= 0.5):
            raise ValueError(f"need p = f/n < a <= 1/2 (p={self.p:.4f}, a={self.a})")

    @property
    def p(self) -> float:
        return self.f / self.n


_ids = itertools.count(1)


def fresh_id() -> int:
    """Process-local counter, for tests and ad hoc construction only."""
    return next(_ids)
