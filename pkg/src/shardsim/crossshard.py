"""Cross-shard atomic commit protocols as message-passing state machines.

Each protocol is a set of handlers that take one shard's object store and one
message and return the messages it emits. A :class:`World` freezes the stores,
the client state and the in-flight messages into a hashable value so the same
handlers serve two drivers:

* :class:`XTxInstance` steps one transaction round by round, delivering the
  messages of a round in an adversarial order;
* :func:`enumerate_schedules` explores every interleaving of deliveries,
  replays, duplicate submissions, client stalls and forks with memoisation.

Stores map ``("obj", utxo)`` to a status: ``ACTIVE`` or ``(state, txid)`` with
state one of locked/spent/relayed. Shard-local bookkeeping (verdicts, votes,
sessions) lives in the same store under other keys and stands for the records
that the shard's ledger would hold.
"""

from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .core import RecordKind, ShardLedger, Transaction, UtxoId
from .workload import mix64, utxo_shard

ACTIVE = "active"
CLIENT = -1


class Protocol(str, enum.Enum):
    ATOMIX = "atomix"
    SBAC = "sbac"
    RELAY = "relay"
    DUMMY_TX = "dummy_tx"


class Outcome(str, enum.Enum):
    COMMITTED = "committed"
    ABORTED = "aborted"
    UNRESOLVED = "unresolved"
    MIXED = "mixed"


class InstructSingleShard(ValueError):
    """The transaction touches one shard only; commit it through ordinary consensus."""


class Verdict(str, enum.Enum):
    ACCEPT = "accept"
    REJECT = "reject"


@dataclass(frozen=True)
class ShardProof:
    """Proof of acceptance or rejection signed by ``quorum`` members of a shard."""

    shard_id: int
    verdict: Verdict
    quorum: int

    def valid(self, shard_size: int, a: float) -> bool:
        if self.verdict is Verdict.ACCEPT:
            return self.quorum > a * shard_size
        return self.quorum >= 1


def issue_proof(shard_id: int, verdict: Verdict, honest_count: int, shard_size: int,
                a: float) -> Optional[ShardProof]:
    proof = ShardProof(shard_id, verdict, honest_count)
    return proof if proof.valid(shard_size, a) else None


@dataclass(frozen=True)
class TxShape:
    txid: int
    inputs: tuple[tuple[UtxoId, int], ...]
    outputs: tuple[tuple[UtxoId, int], ...]

    @classmethod
    def from_tx(cls, tx: Transaction, shard_of: Callable[[UtxoId], int]) -> "TxShape":
        return cls(tx.txid, tuple((u, shard_of(u)) for u in tx.inputs),
                   tuple((o, shard_of(o)) for o in tx.outputs))

    @property
    def input_shards(self) -> tuple[int, ...]:
        return tuple(sorted({s for _, s in self.inputs}))

    @property
    def output_shards(self) -> tuple[int, ...]:
        return tuple(sorted({s for _, s in self.outputs}))

    @property
    def shards(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.input_shards) | set(self.output_shards)))

    @property
    def home(self) -> int:
        """Shard coordinating the output side (first output's shard)."""
        return self.outputs[0][1]

    def inputs_at(self, s: int) -> list[UtxoId]:
        return [u for u, sh in self.inputs if sh == s]

    def outputs_at(self, s: int) -> list[UtxoId]:
        return [o for o, sh in self.outputs if sh == s]

    @property
    def cross_shard(self) -> bool:
        return len(self.shards) > 1


def dummy_id(u: UtxoId) -> int:
    """Identifier of the output-shard copy of input ``u`` (DummyTx)."""
    return ~u


class Msg(NamedTuple):
    dest: int
    kind: str
    tx: int
    src: int
    data: tuple = ()
    seq: int = 0


Store = tuple


def _freeze(d: dict) -> Store:
    return tuple(sorted(d.items()))


class World(NamedTuple):
    shards: tuple[Store, ...]
    client: Store
    inflight: tuple[Msg, ...]
    seen: tuple[Msg, ...]
    replays: int = 0
    duplicates: int = 0
    forks: int = 0
    rogue: int = 0

    def store(self, s: int) -> dict:
        return dict(self.shards[s])


@dataclass(frozen=True)
class AdversaryChoices:
    """Budgets and behaviours the schedule adversary may use."""

    client: str = "honest"  # honest | stall | partial
    replays: int = 0
    duplicates: int = 0
    forks: int = 0
    malicious_leader: bool = False

    def __post_init__(self) -> None:
        if self.client not in ("honest", "stall", "partial"):
            raise ValueError(f"unknown client behaviour {self.client!r}")


class _Machine:
    protocol: Protocol

    def __init__(self, shapes: Sequence[TxShape], m: int, choices: AdversaryChoices,
                 replay_fix: bool = True) -> None:
        self.shapes = {sh.txid: sh for sh in shapes}
        self.m = m
        self.choices = choices
        self.replay_fix = replay_fix

    # -- construction --------------------------------------------------
    def initial_stores(self) -> list[dict]:
        stores: list[dict] = [dict() for _ in range(self.m)]
        for sh in self.shapes.values():
            for u, s in sh.inputs:
                stores[s][("obj", u)] = ACTIVE
        return stores

    def initial(self, stores: Optional[list[dict]] = None) -> World:
        stores = self.initial_stores() if stores is None else stores
        inflight: list[Msg] = []
        for txid in sorted(self.shapes):
            inflight.extend(self.submit(txid))
        c = self.choices
        return World(tuple(_freeze(s) for s in stores), (), tuple(sorted(inflight)), (),
                     c.replays, c.duplicates, c.forks, 1 if c.malicious_leader else 0)

    def submit(self, txid: int) -> list[Msg]:
        raise NotImplementedError

    # -- handlers ------------------------------------------------------
    def on_shard(self, s: int, st: dict, msg: Msg) -> list[Msg]:
        raise NotImplementedError

    def on_client(self, st: dict, msg: Msg) -> list[Msg]:
        return []

    def recover(self, world: World, txid: int) -> Optional[tuple[list[dict], dict, list[Msg]]]:
        """Resume a stalled client from on-ledger state; None when not needed."""
        return None

    def fork(self, world: World, s: int, txid: int) -> Optional[tuple[dict, list[Msg]]]:
        return None

    def rogue_action(self, world: World, txid: int) -> Optional[tuple[list[dict], list[Msg]]]:
        return None

    # -- evaluation ----------------------------------------------------
    def input_state(self, st: dict, u: UtxoId, txid: int) -> str:
        v = st.get(("obj", u))
        if v == ACTIVE:
            return "active"
        if isinstance(v, tuple) and v[1] == txid:
            return "locked" if v[0] == "locked" else "spent"
        if v is None:
            return "missing"
        return "other"

    def refunded(self, world: World, sh: TxShape, u: UtxoId) -> bool:
        return False

    def classify(self, world: World, txid: int) -> "TxOutcome":
        sh = self.shapes[txid]
        states = []
        for u, s in sh.inputs:
            state = self.input_state(world.store(s), u, txid)
            if state == "spent" and self.refunded(world, sh, u):
                state = "refunded"
            states.append(state)
        created = [world.store(s).get(("created", o), 0) for o, s in sh.outputs]
        live = [world.store(s).get(("obj", o)) == ACTIVE for o, s in sh.outputs]
        locks = sum(1 for x in states if x == "locked")
        if all(x == "spent" for x in states) and all(live):
            outcome = Outcome.COMMITTED
        elif all(x in ("active", "refunded", "other", "missing") for x in states) and not any(live):
            outcome = Outcome.ABORTED
        elif locks and not any(live) and not any(x == "spent" for x in states):
            outcome = Outcome.UNRESOLVED
        elif self._pending(world, sh):
            outcome = Outcome.UNRESOLVED
        else:
            outcome = Outcome.MIXED
        per_shard = []
        for s in sh.shards:
            labels = {states[i] for i, (_, si) in enumerate(sh.inputs) if si == s}
            labels |= {"created" if live[i] else "absent" for i, (_, so) in enumerate(sh.outputs) if so == s}
            per_shard.append((s, "/".join(sorted(labels))))
        return TxOutcome(txid, outcome, locks, max(created, default=0) >= 2, tuple(per_shard))

    def _pending(self, world: World, sh: TxShape) -> bool:
        return any(msg.tx == sh.txid for msg in world.inflight)

    def phase(self, world: World, txid: int) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class TxOutcome:
    txid: int
    outcome: Outcome
    residual_locks: int
    double_created: bool
    per_shard: tuple[tuple[int, str], ...]


def _create(st: dict, outs: Iterable[UtxoId], always: bool = False) -> None:
    for o in outs:
        if always or ("obj", o) not in st:
            st[("obj", o)] = ACTIVE
            st[("created", o)] = st.get(("created", o), 0) + 1


def _set_if(st: dict, utxos: Iterable[UtxoId], expect, value) -> None:
    for u in utxos:
        if st.get(("obj", u)) == expect:
            st[("obj", u)] = value


class Atomix(_Machine):
    """Client-driven lock/unlock with per-shard proofs recorded on the ledger."""

    protocol = Protocol.ATOMIX

    def submit(self, txid: int) -> list[Msg]:
        sh = self.shapes[txid]
        return [Msg(s, "lock", txid, CLIENT) for s in sh.input_shards]

    def on_shard(self, s: int, st: dict, msg: Msg) -> list[Msg]:
        sh = self.shapes[msg.tx]
        tx = msg.tx
        if msg.kind == "lock":
            key = ("verdict", tx)
            if key not in st:
                ins = sh.inputs_at(s)
                ok = all(st.get(("obj", u)) == ACTIVE for u in ins)
                if ok:
                    _set_if(st, ins, ACTIVE, ("locked", tx))
                st[key] = Verdict.ACCEPT.value if ok else Verdict.REJECT.value
            return [Msg(CLIENT, "proof", tx, s, (st[key],))]
        proofs = dict(msg.data)
        if set(proofs) != set(sh.input_shards):
            return []
        mine = st.get(("verdict", tx))
        if s in proofs and mine is not None and proofs[s] != mine:
            return []
        if msg.kind == "commit" and all(v == Verdict.ACCEPT.value for v in proofs.values()):
            _set_if(st, sh.inputs_at(s), ("locked", tx), ("spent", tx))
            _create(st, sh.outputs_at(s))
        elif msg.kind == "abort" and any(v == Verdict.REJECT.value for v in proofs.values()):
            _set_if(st, sh.inputs_at(s), ("locked", tx), ACTIVE)
        return []

    def _finish(self, txid: int, proofs: dict[int, str], only: Optional[int] = None) -> list[Msg]:
        sh = self.shapes[txid]
        data = tuple(sorted(proofs.items()))
        if all(v == Verdict.ACCEPT.value for v in proofs.values()):
            kind, dests = "commit", sh.shards
        else:
            kind, dests = "abort", sh.input_shards
        if only is not None:
            dests = dests[:1]
        return [Msg(d, kind, txid, CLIENT, data) for d in dests]

    def on_client(self, st: dict, msg: Msg) -> list[Msg]:
        tx = msg.tx
        sh = self.shapes[tx]
        st[("proof", tx, msg.src)] = msg.data[0]
        if ("done", tx) in st or ("stalled", tx) in st:
            return []
        proofs = {s: st.get(("proof", tx, s)) for s in sh.input_shards}
        if any(v is None for v in proofs.values()):
            return []
        mode = self.choices.client
        if mode == "honest":
            st[("done", tx)] = 1
            return self._finish(tx, proofs)
        st[("stalled", tx)] = 1
        return self._finish(tx, proofs, only=0) if mode == "partial" else []

    def recover(self, world: World, txid: int):
        client = dict(world.client)
        if ("stalled", txid) not in client or ("done", txid) in client:
            return None
        sh = self.shapes[txid]
        proofs = {s: world.store(s).get(("verdict", txid)) for s in sh.input_shards}
        if any(v is None for v in proofs.values()):
            return None
        client[("done", txid)] = 1
        return [world.store(s) for s in range(self.m)], client, self._finish(txid, proofs)

    def phase(self, world: World, txid: int) -> str:
        out = self.classify(world, txid).outcome
        if out in (Outcome.COMMITTED, Outcome.ABORTED):
            return out.value.capitalize()
        sh = self.shapes[txid]
        if all(("verdict", txid) in world.store(s) for s in sh.input_shards):
            return "InputsLogged"
        return "Init"


class SBac(_Machine):
    """Shard-led locking with pre-accept/pre-abort votes.

    With ``replay_fix`` every vote carries the session number of the input
    shard that cast it, decided sessions are remembered, and output creation
    consumes a per-transaction dummy object so it can happen only once.
    """

    protocol = Protocol.SBAC

    def initial_stores(self) -> list[dict]:
        stores = super().initial_stores()
        if self.replay_fix:
            for sh in self.shapes.values():
                for s in sh.output_shards:
                    stores[s][("dummy", sh.txid)] = ACTIVE
        return stores

    def submit(self, txid: int) -> list[Msg]:
        sh = self.shapes[txid]
        if self.choices.client == "stall":
            return []
        dests = sh.input_shards[:1] if self.choices.client == "partial" else sh.input_shards
        return [Msg(s, "submit", txid, CLIENT) for s in dests]

    def on_shard(self, s: int, st: dict, msg: Msg) -> list[Msg]:
        sh = self.shapes[msg.tx]
        tx = msg.tx
        if msg.kind == "submit":
            ins = sh.inputs_at(s)
            session = st.get(("session", tx), 0)
            decided = st.get(("outcome", tx))
            if self.replay_fix and decided is not None:
                # a decided tx is final here; repeat the stale vote, never re-lock
                return [Msg(d, "vote", tx, s, (decided,), session) for d in sh.shards]
            if ins and all(st.get(("obj", u)) in (("locked", tx), ("spent", tx)) for u in ins):
                # inputs already held or consumed by this tx: repeat the earlier vote
                verdict = Verdict.ACCEPT.value
            elif all(st.get(("obj", u)) == ACTIVE for u in ins):
                _set_if(st, ins, ACTIVE, ("locked", tx))
                verdict = Verdict.ACCEPT.value
                session += 1
            else:
                verdict = Verdict.REJECT.value
                session += 1
            if self.replay_fix:
                st[("session", tx)] = session
            seq = session if self.replay_fix else 0
            return [Msg(d, "vote", tx, s, (verdict,), seq) for d in sh.shards]
        if msg.kind != "vote":
            return []
        if self.replay_fix and msg.seq <= st.get(("decided", tx, msg.src), 0):
            return []
        st[("vote", tx, msg.src)] = (msg.data[0], msg.seq)
        votes = {src: st.get(("vote", tx, src)) for src in sh.input_shards}
        if any(v is None for v in votes.values()):
            return []
        commit = all(v[0] == Verdict.ACCEPT.value for v in votes.values())
        if commit:
            _set_if(st, sh.inputs_at(s), ("locked", tx), ("spent", tx))
            outs = sh.outputs_at(s)
            if outs:
                if not self.replay_fix:
                    _create(st, outs, always=True)
                elif st.get(("dummy", tx)) == ACTIVE:
                    st[("dummy", tx)] = ("spent", tx)
                    _create(st, outs)
        else:
            _set_if(st, sh.inputs_at(s), ("locked", tx), ACTIVE)
        if self.replay_fix and sh.inputs_at(s):
            st[("outcome", tx)] = Verdict.ACCEPT.value if commit else Verdict.REJECT.value
        for src, v in votes.items():
            del st[("vote", tx, src)]
            if self.replay_fix:
                st[("decided", tx, src)] = max(v[1], st.get(("decided", tx, src), 0))
        return []

    def recover(self, world: World, txid: int):
        if self.choices.client == "honest":
            return None
        client = dict(world.client)
        if ("recovered", txid) in client:
            return None
        client[("recovered", txid)] = 1
        sh = self.shapes[txid]
        msgs = [Msg(s, "submit", txid, CLIENT) for s in sh.input_shards]
        return [world.store(s) for s in range(self.m)], client, msgs

    def phase(self, world: World, txid: int) -> str:
        out = self.classify(world, txid).outcome
        if out in (Outcome.COMMITTED, Outcome.ABORTED):
            return "Decided"
        if any(k[0] in ("vote", "decided") and k[1] == txid
               for s in range(self.m) for k, _ in world.shards[s]):
            return "PreDecided"
        return "Init"


class Relay(_Machine):
    """Input shards spend and relay; the home output shard includes or rolls back."""

    protocol = Protocol.RELAY

    def submit(self, txid: int) -> list[Msg]:
        sh = self.shapes[txid]
        return [Msg(s, "relay_req", txid, CLIENT) for s in sh.input_shards]

    def on_shard(self, s: int, st: dict, msg: Msg) -> list[Msg]:
        sh = self.shapes[msg.tx]
        tx = msg.tx
        home = sh.home
        if msg.kind == "relay_req":
            key = ("relay", tx)
            if key not in st:
                ins = sh.inputs_at(s)
                ok = all(st.get(("obj", u)) == ACTIVE for u in ins)
                if ok:
                    _set_if(st, ins, ACTIVE, ("relayed", tx))
                st[key] = "ok" if ok else "reject"
            return [Msg(home, "notice", tx, s, (st[key],))]
        if msg.kind == "rollback":
            _set_if(st, sh.inputs_at(s), ("relayed", tx), ACTIVE)
            st.pop(("relay", tx), None)
            return []
        if msg.kind == "create":
            _create(st, sh.outputs_at(s))
            return []
        if msg.kind == "uncreate":
            for o in sh.outputs_at(s):
                st.pop(("obj", o), None)
            return []
        # home shard
        out: list[Msg] = []
        if msg.kind == "notice":
            if ("rolledback", tx) in st:
                return [Msg(msg.src, "rollback", tx, s)] if msg.data[0] == "ok" else []
            if ("decided", tx) in st:
                return []
            st[("notice", tx, msg.src)] = msg.data[0]
        elif msg.kind == "revoke":
            # a fork erased the relay: the transaction is dead for good
            if ("rolledback", tx) in st:
                return []
            st[("decided", tx)] = 1
            return self._rollback(s, st, sh)
        notices = {src: st.get(("notice", tx, src)) for src in sh.input_shards}
        if any(v is None for v in notices.values()):
            return out
        st[("decided", tx)] = 1
        if all(v == "ok" for v in notices.values()):
            st[("included", tx)] = 1
            _create(st, sh.outputs_at(s))
            return [Msg(d, "create", tx, s) for d in sh.output_shards if d != s]
        return self._rollback(s, st, sh)

    def _rollback(self, s: int, st: dict, sh: TxShape) -> list[Msg]:
        tx = sh.txid
        st[("rolledback", tx)] = 1
        out = []
        if ("included", tx) in st:
            for o in sh.outputs_at(s):
                st.pop(("obj", o), None)
            out.extend(Msg(d, "uncreate", tx, s) for d in sh.output_shards if d != s)
        for src in sh.input_shards:
            if src == s:
                _set_if(st, sh.inputs_at(s), ("relayed", tx), ACTIVE)
                st.pop(("relay", tx), None)
            else:
                out.append(Msg(src, "rollback", tx, s))
        return out

    def fork(self, world: World, s: int, txid: int):
        sh = self.shapes[txid]
        st = world.store(s)
        ins = sh.inputs_at(s)
        if not ins or not all(st.get(("obj", u)) == ("relayed", txid) for u in ins):
            return None
        _set_if(st, ins, ("relayed", txid), ACTIVE)
        st.pop(("relay", txid), None)
        return st, [Msg(sh.home, "revoke", txid, s)]

    def phase(self, world: World, txid: int) -> str:
        home = world.store(self.shapes[txid].home)
        if ("rolledback", txid) in home:
            return "RolledBack"
        if ("included", txid) in home:
            return "OutputCommitted"
        if any(("relay", txid) in world.store(s) for s in self.shapes[txid].input_shards):
            return "RelayPending"
        return "InputCommitted"


class DummyTx(_Machine):
    """Output-shard leader moves each input into its shard, then commits locally."""

    protocol = Protocol.DUMMY_TX

    def submit(self, txid: int) -> list[Msg]:
        sh = self.shapes[txid]
        return [Msg(s, "move", txid, sh.home) for s in sh.input_shards]

    def synthesized(self, txid: int) -> list[Transaction]:
        """tx_j moving input I_j to I'_j for every input, plus the final tx."""
        sh = self.shapes[txid]
        moves = [Transaction(txid * 16 + j + 1, (u,), (dummy_id(u),), ref=txid)
                 for j, (u, _) in enumerate(sh.inputs)]
        final = Transaction(txid * 16, tuple(dummy_id(u) for u, _ in sh.inputs),
                            tuple(o for o, _ in sh.outputs), ref=txid)
        return moves + [final]

    def on_shard(self, s: int, st: dict, msg: Msg) -> list[Msg]:
        sh = self.shapes[msg.tx]
        tx = msg.tx
        if msg.kind == "move":
            key = ("moved", tx)
            if key not in st:
                ins = sh.inputs_at(s)
                ok = all(st.get(("obj", u)) == ACTIVE for u in ins)
                if ok:
                    _set_if(st, ins, ACTIVE, ("spent", tx))
                st[key] = "ok" if ok else "reject"
            return [Msg(sh.home, "notice", tx, s, (st[key],))]
        if msg.kind == "create":
            _create(st, sh.outputs_at(s))
            return []
        if msg.kind != "notice":
            return []
        if msg.data[0] == "ok":
            for u in sh.inputs_at(msg.src):
                if ("obj", dummy_id(u)) not in st:
                    st[("obj", dummy_id(u))] = ACTIVE
        st[("notice", tx, msg.src)] = msg.data[0]
        if ("final", tx) in st or ("refunded", tx) in st:
            return []
        notices = {src: st.get(("notice", tx, src)) for src in sh.input_shards}
        if any(v is None for v in notices.values()):
            return []
        if all(v == "ok" for v in notices.values()):
            return self._final(s, st, sh)
        st[("refunded", tx)] = 1
        return []

    def _final(self, s: int, st: dict, sh: TxShape) -> list[Msg]:
        tx = sh.txid
        st[("final", tx)] = 1
        _set_if(st, [dummy_id(u) for u, _ in sh.inputs], ACTIVE, ("spent", tx))
        _create(st, sh.outputs_at(s))
        return [Msg(d, "create", tx, s) for d in sh.output_shards if d != s]

    def rogue_action(self, world: World, txid: int):
        sh = self.shapes[txid]
        st = world.store(sh.home)
        if ("final", txid) in st:
            return None
        stores = [world.store(s) for s in range(self.m)]
        msgs = self._final(sh.home, stores[sh.home], sh)
        return stores, msgs

    def refunded(self, world: World, sh: TxShape, u: UtxoId) -> bool:
        return world.store(sh.home).get(("obj", dummy_id(u))) == ACTIVE

    def phase(self, world: World, txid: int) -> str:
        home = world.store(self.shapes[txid].home)
        if ("final", txid) in home:
            return "Tx3Committed"
        if ("refunded", txid) in home:
            return "Refunded"
        sh = self.shapes[txid]
        if all(("notice", txid, s) in home for s in sh.input_shards):
            return "InputsSettled"
        return "Tx1Tx2Issued"


_MACHINES = {Protocol.ATOMIX: Atomix, Protocol.SBAC: SBac,
             Protocol.RELAY: Relay, Protocol.DUMMY_TX: DummyTx}


def make_machine(protocol: Protocol, shapes: Sequence[TxShape], m: int,
                 choices: AdversaryChoices = AdversaryChoices(), replay_fix: bool = True) -> _Machine:
    return _MACHINES[Protocol(protocol)](shapes, m, choices, replay_fix)


# -- world transitions -----------------------------------------------------

def _with(world: World, stores: Optional[list[dict]] = None, client: Optional[dict] = None,
          inflight: Optional[list[Msg]] = None, seen: Optional[set] = None, **budgets) -> World:
    world = world._replace(
        shards=world.shards if stores is None else tuple(_freeze(s) for s in stores),
        client=world.client if client is None else _freeze(client),
        inflight=world.inflight if inflight is None else tuple(sorted(inflight)),
        seen=world.seen if seen is None else tuple(sorted(seen)),
        **budgets)
    if world.replays <= 0 and world.seen:
        # replays exhausted: what was seen can no longer matter
        world = world._replace(seen=())
    return world


def deliver(machine: _Machine, world: World, msg: Msg, replay: bool = False) -> World:
    """Deliver ``msg`` (removing one copy from flight unless it is a replay)."""
    inflight = list(world.inflight)
    if not replay:
        inflight.remove(msg)
    shards = world.shards
    client = world.client
    if msg.dest == CLIENT:
        st = dict(client)
        out = machine.on_client(st, msg)
        client = _freeze(st)
    else:
        st = dict(shards[msg.dest])
        out = machine.on_shard(msg.dest, st, msg)
        shards = shards[:msg.dest] + (_freeze(st),) + shards[msg.dest + 1:]
    replays = world.replays - 1 if replay else world.replays
    seen = world.seen
    if replays > 0 and msg not in seen:
        seen = tuple(sorted(seen + (msg,)))
    elif replays <= 0:
        seen = ()
    return World(shards, client, tuple(sorted(inflight + out)), seen, replays,
                 world.duplicates, world.forks, world.rogue)


Action = tuple[str, World]


def actions(machine: _Machine, world: World) -> tuple[list[Action], list[Action]]:
    """(required, optional) successor worlds.

    Required actions are deliveries and recoveries, which some party eventually
    performs; optional ones spend adversary budget.
    """
    required: list[Action] = []
    for msg in sorted(set(world.inflight)):
        required.append((f"deliver {msg.kind} {msg.src}->{msg.dest} tx{msg.tx}", deliver(machine, world, msg)))
    for txid in sorted(machine.shapes):
        rec = machine.recover(world, txid)
        if rec is not None:
            stores, client, msgs = rec
            required.append((f"recover tx{txid}",
                             _with(world, stores, client, list(world.inflight) + msgs)))
    optional: list[Action] = []
    if world.replays > 0:
        for msg in world.seen:
            optional.append((f"replay {msg.kind} {msg.src}->{msg.dest} tx{msg.tx}",
                             deliver(machine, world, msg, replay=True)))
    if world.duplicates > 0:
        for txid in sorted(machine.shapes):
            optional.append((f"duplicate tx{txid}",
                             _with(world, inflight=list(world.inflight) + machine.submit(txid),
                                   duplicates=world.duplicates - 1)))
    if world.forks > 0:
        for txid in sorted(machine.shapes):
            for s in machine.shapes[txid].input_shards:
                res = machine.fork(world, s, txid)
                if res is not None:
                    st, msgs = res
                    stores = [dict(x) for x in world.shards]
                    stores[s] = st
                    optional.append((f"fork shard {s} tx{txid}",
                                     _with(world, stores, inflight=list(world.inflight) + msgs,
                                           forks=world.forks - 1)))
    if world.rogue > 0:
        for txid in sorted(machine.shapes):
            res = machine.rogue_action(world, txid)
            if res is not None:
                stores, msgs = res
                optional.append((f"rogue final tx{txid}",
                                 _with(world, stores, inflight=list(world.inflight) + msgs, rogue=0)))
    return required, optional


# -- exhaustive enumeration ------------------------------------------------

@dataclass
class EnumerationResult:
    protocol: Protocol
    replay_fix: bool
    states: int = 0
    terminals: int = 0
    outcomes: Counter = field(default_factory=Counter)
    per_shard: set = field(default_factory=set)
    mixed: int = 0
    residual_locks: int = 0
    double_creations: int = 0
    conflicting_commits: int = 0
    witness: Optional[list[str]] = None

    @property
    def atomic(self) -> bool:
        return self.mixed == 0 and self.residual_locks == 0 and self.conflicting_commits == 0

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol.value, "replay_fix": self.replay_fix,
            "states": self.states, "terminals": self.terminals,
            "outcomes": {k.value: v for k, v in sorted(self.outcomes.items())},
            "mixed": self.mixed, "residual_locks": self.residual_locks,
            "double_creations": self.double_creations,
            "conflicting_commits": self.conflicting_commits, "witness": self.witness,
        }


def standard_shapes() -> dict[str, list[TxShape]]:
    """Every bounded layout with at most 3 shards and 2 inputs, one output."""
    return {
        "1in-2shards": [TxShape(1, ((10, 0),), ((20, 1),))],
        "2in-2shards": [TxShape(1, ((10, 0), (11, 1)), ((20, 1),))],
        "2in-3shards": [TxShape(1, ((10, 0), (11, 1)), ((20, 2),))],
        "2in-same-shard": [TxShape(1, ((10, 0), (11, 0)), ((20, 1),))],
        "2in-3shards-rival": [TxShape(1, ((10, 0), (11, 1)), ((20, 2),)),
                              TxShape(2, ((10, 0),), ((21, 2),))],
    }


def _shares_input(a: TxShape, b: TxShape) -> bool:
    return bool({u for u, _ in a.inputs} & {u for u, _ in b.inputs})


def enumerate_schedules(protocol: Protocol, shapes: Sequence[TxShape],
                        choices: AdversaryChoices = AdversaryChoices(), replay_fix: bool = True,
                        max_states: int = 2_000_000) -> EnumerationResult:
    """Explore every schedule and collect the terminal outcomes.

    A world is terminal when nothing is in flight and no recovery is pending;
    budgeted adversary actions may still continue from it, so every quiescent
    point of every schedule is evaluated.
    """
    shapes = list(shapes)
    if len({s for sh in shapes for s in sh.shards}) > 3 or any(len(sh.inputs) > 2 for sh in shapes):
        raise ValueError("bounded instances only: at most 3 shards and 2 inputs")
    m = max(s for sh in shapes for s in sh.shards) + 1
    machine = make_machine(protocol, shapes, m, choices, replay_fix)
    result = EnumerationResult(Protocol(protocol), replay_fix)
    start = machine.initial()
    visited = {start}
    stack: list[tuple[World, list[str]]] = [(start, [])]
    while stack:
        world, path = stack.pop()
        result.states += 1
        if result.states > max_states:
            raise RuntimeError(f"state space exceeds {max_states}")
        required, optional = actions(machine, world)
        if not required:
            result.terminals += 1
            outs = [machine.classify(world, txid) for txid in sorted(machine.shapes)]
            bad = False
            for o in outs:
                result.outcomes[o.outcome] += 1
                result.per_shard.add((o.txid, o.per_shard))
                if o.outcome in (Outcome.MIXED, Outcome.UNRESOLVED):
                    result.mixed += o.outcome is Outcome.MIXED
                    bad = True
                if o.residual_locks:
                    result.residual_locks += 1
                    bad = True
                if o.double_created:
                    result.double_creations += 1
                    bad = True
            committed = [machine.shapes[o.txid] for o in outs if o.outcome is Outcome.COMMITTED]
            if any(_shares_input(a, b) for i, a in enumerate(committed) for b in committed[i + 1:]):
                result.conflicting_commits += 1
                bad = True
            if bad and result.witness is None:
                result.witness = path
        for label, nxt in required + optional:
            if nxt not in visited:
                visited.add(nxt)
                stack.append((nxt, path + [label]))
    return result


CLIENT_MODES = ("honest", "stall", "partial")


def suite_cases() -> list[tuple[Protocol, str, AdversaryChoices]]:
    """Bounded configurations checked for atomicity.

    One adversary budget per case (a replay, a duplicate submission or a
    fork) under every client behaviour. S-BAC on the two-rival-txs shape with
    a partial client and a replay or duplicate budget is left out: its state
    space grows past what a desk run can cover.
    """
    cases = []
    for protocol in Protocol:
        budgets: list[dict] = [{}, {"replays": 1}, {"duplicates": 1}]
        if protocol is Protocol.RELAY:
            budgets.append({"forks": 1})
        for name in standard_shapes():
            for client in CLIENT_MODES:
                for budget in budgets:
                    if (protocol is Protocol.SBAC and name.endswith("rival") and client == "partial"
                            and budget):
                        continue
                    cases.append((protocol, name, AdversaryChoices(client=client, **budget)))
    return cases


def run_suite(max_states: int = 300_000) -> list[tuple[str, EnumerationResult]]:
    shapes = standard_shapes()
    out = []
    for protocol, name, choices in suite_cases():
        budget = ",".join(f"{k}={getattr(choices, k)}" for k in ("replays", "duplicates", "forks")
                          if getattr(choices, k))
        label = f"{protocol.value}/{name}/{choices.client}/{budget or 'none'}"
        out.append((label, enumerate_schedules(protocol, shapes[name], choices, max_states=max_states)))
    return out


def unfixed_double_creation(max_states: int = 300_000) -> list[tuple[str, EnumerationResult]]:
    """S-BAC without replay protection under a single replay, on every shape."""
    return [(name, enumerate_schedules(Protocol.SBAC, shapes, AdversaryChoices(replays=1),
                                       replay_fix=False, max_states=max_states))
            for name, shapes in standard_shapes().items()]


# -- round-stepped instances -----------------------------------------------

@dataclass
class XTxInstance:
    tx: Transaction
    protocol: Protocol
    machine: _Machine
    world: World
    client: str = "honest"
    round: int = 0
    trace: list[dict] = field(default_factory=list)

    @property
    def shape(self) -> TxShape:
        return self.machine.shapes[self.tx.txid]

    @property
    def phase(self) -> str:
        return self.machine.phase(self.world, self.tx.txid)

    @property
    def locks(self) -> set[tuple[int, UtxoId]]:
        txid = self.tx.txid
        return {(s, u) for u, s in self.shape.inputs
                if self.world.store(s).get(("obj", u)) == ("locked", txid)}

    @property
    def sequence_no(self) -> int:
        return max((self.world.store(s).get(("session", self.tx.txid), 0)
                    for s in self.shape.input_shards), default=0)

    @property
    def expected_input_proofs(self) -> int:
        return len(self.shape.input_shards)

    def _log(self, action: str) -> None:
        self.trace.append({"round": self.round, "action": action, "phase": self.phase,
                           "locks": sorted(list(x) for x in self.locks)})


def start(protocol: Protocol, tx: Transaction,
          shard_states: Mapping[int, "ShardLedger | Iterable[UtxoId]"], client: str = "honest",
          shard_of: Optional[Callable[[UtxoId], int]] = None, replay_fix: bool = True,
          malicious_leader: bool = False) -> XTxInstance:
    """Open an instance for a cross-shard ``tx`` over the given shard states."""
    m = max(shard_states) + 1 if shard_states else 1
    if shard_of is None:
        shard_of = lambda u: utxo_shard(u, m)  # noqa: E731
    shape = TxShape.from_tx(tx, shard_of)
    if not shape.cross_shard:
        raise InstructSingleShard(f"tx {tx.txid} lies entirely in shard {shape.shards[0]}")
    m = max(m, max(shape.shards) + 1)
    choices = AdversaryChoices(client=client, replays=1 << 30, duplicates=1 << 30, forks=1 << 30,
                               malicious_leader=malicious_leader)
    machine = make_machine(protocol, [shape], m, choices, replay_fix)
    stores = machine.initial_stores()
    for st in stores:
        for key in [k for k in st if k[0] == "obj"]:
            del st[key]
    for u, s in shape.inputs:
        state = shard_states.get(s)
        active = state.utxo_active(u) if isinstance(state, ShardLedger) else (
            state is not None and u in set(state))
        if active:
            stores[s][("obj", u)] = ACTIVE
    inst = XTxInstance(tx, Protocol(protocol), machine, machine.initial(stores), client)
    inst._log("start")
    return inst


def step(instance: XTxInstance, round_events: Iterable[str] = (),
         adversary: Optional[Callable[[list[Msg]], list[Msg]]] = None) -> XTxInstance:
    """Advance one round.

    ``round_events`` may contain ``recover``, ``replay``, ``duplicate``,
    ``fork:<shard>`` and ``rogue``. Messages in flight at the start of the
    round are delivered in the order chosen by ``adversary`` (default: sorted);
    messages they trigger wait for the next round.
    """
    m = instance.machine
    txid = instance.tx.txid
    instance.round += 1
    world = instance.world
    for ev in round_events:
        if ev == "recover":
            rec = m.recover(world, txid)
            if rec is not None:
                stores, client, msgs = rec
                world = _with(world, stores, client, list(world.inflight) + msgs)
                instance.world = world
                instance._log("recover")
        elif ev == "replay":
            for msg in world.seen:
                world = deliver(m, world, msg, replay=True)
            instance.world = world
            instance._log("replay")
        elif ev == "duplicate":
            world = _with(world, inflight=list(world.inflight) + m.submit(txid))
            instance.world = world
            instance._log("duplicate")
        elif ev.startswith("fork:"):
            s = int(ev.split(":", 1)[1])
            res = m.fork(world, s, txid)
            if res is not None:
                st, msgs = res
                stores = [dict(x) for x in world.shards]
                stores[s] = st
                world = _with(world, stores, inflight=list(world.inflight) + msgs)
                instance.world = world
                instance._log(f"fork {s}")
        elif ev == "rogue":
            res = m.rogue_action(world, txid)
            if res is not None:
                stores, msgs = res
                world = _with(world, stores, inflight=list(world.inflight) + msgs)
                instance.world = world
                instance._log("rogue final")
    batch = list(world.inflight)
    order = adversary(batch) if adversary is not None else sorted(batch)
    if sorted(order) != sorted(batch):
        raise ValueError("the adversary may reorder messages but not drop or add them")
    for msg in order:
        world = deliver(m, world, msg)
        instance.world = world
        instance._log(f"deliver {msg.kind} {msg.src}->{msg.dest}")
    return instance


def outcome(instance: XTxInstance) -> Outcome:
    res = instance.machine.classify(instance.world, instance.tx.txid)
    if res.outcome is Outcome.UNRESOLVED or (instance.world.inflight and res.outcome is Outcome.MIXED):
        return Outcome.UNRESOLVED
    return res.outcome


def run_to_end(instance: XTxInstance, max_rounds: int = 64,
               events: Optional[Callable[[int], Iterable[str]]] = None,
               adversary: Optional[Callable[[list[Msg]], list[Msg]]] = None) -> Outcome:
    for r in range(max_rounds):
        step(instance, events(r) if events else (), adversary)
        if not instance.world.inflight and outcome(instance) is not Outcome.UNRESOLVED:
            break
    return outcome(instance)


def export_trace(instance: XTxInstance) -> str:
    return json.dumps({"txid": instance.tx.txid, "protocol": instance.protocol.value,
                       "outcome": outcome(instance).value, "events": instance.trace},
                      sort_keys=True, indent=1)


def shuffle_adversary(seed: int) -> Callable[[list[Msg]], list[Msg]]:
    """Adversary that delivers each round's messages in a seeded random order."""
    rng = np.random.default_rng(seed)

    def order(msgs: list[Msg]) -> list[Msg]:
        msgs = sorted(msgs)
        return [msgs[i] for i in rng.permutation(len(msgs))]

    return order


# -- ledger-level driver ----------------------------------------------------

RECORD_BASE = 1 << 52
_REFUND_SALT = 0x5EF0D

Record = tuple[int, Transaction]  # (shard, record)


def _dummy_key(u: UtxoId) -> int:
    return dummy_id(u) & ((1 << 63) - 1)


def refund_id(u: UtxoId) -> int:
    """Fresh UTXO returned to the owner when a moved input cannot be used."""
    return mix64(u ^ _REFUND_SALT) & ((1 << 63) - 1)


@dataclass
class LedgerCommit:
    """One cross-shard transaction driven through shard ledgers as records.

    Each phase submits records to shards and waits until every one of them is
    stable or rejected; the next phase depends on which succeeded. A ledger
    cannot un-spend, so when a Relay or DummyTx move cannot complete the
    moved inputs are refunded as fresh outputs on the shard holding them.
    """

    protocol: Protocol
    tx: Transaction
    shape: TxShape
    stall: int = 0
    phase: str = "new"
    outcome: Outcome = Outcome.UNRESOLVED
    waiting: dict[int, Record] = field(default_factory=dict)
    ok: dict[int, Record] = field(default_factory=dict)
    failed: dict[int, Record] = field(default_factory=dict)
    ready_at: int = 0
    all_moved: bool = True
    _seq: int = 0

    def _rec(self, shard: int, kind: RecordKind, inputs: Iterable[UtxoId],
             outputs: Iterable[UtxoId]) -> Record:
        self._seq += 1
        txid = RECORD_BASE + self.tx.txid * 64 + self._seq
        return shard, Transaction(txid, tuple(inputs), tuple(outputs), kind,
                                  self.protocol.value, ref=self.tx.txid)

    def _open(self, phase: str, records: list[Record]) -> list[Record]:
        self.phase = phase
        self.ok.clear()
        self.failed.clear()
        self.waiting = {r[1].txid: r for r in records}
        return records

    def _finish(self, outcome: Outcome) -> list[Record]:
        self.phase = "done"
        self.outcome = outcome
        self.waiting = {}
        return []

    @property
    def done(self) -> bool:
        return self.phase == "done"

    def begin(self, now: int) -> list[Record]:
        sh = self.shape
        if self.protocol in (Protocol.ATOMIX, Protocol.SBAC):
            return self._open("lock", [self._rec(s, RecordKind.LOCK, sh.inputs_at(s), ())
                                       for s in sh.input_shards])
        if self.protocol is Protocol.RELAY:
            return self._open("relay", [self._rec(s, RecordKind.RELAY, sh.inputs_at(s), ())
                                        for s in sh.input_shards])
        moves = [self._rec(s, RecordKind.RELAY, sh.inputs_at(s), ())
                 for s in sh.input_shards if s != sh.home]
        if not moves:
            return self._final(now)
        return self._open("move", moves)

    def resolve(self, record_id: int, stable: bool) -> None:
        rec = self.waiting.pop(record_id, None)
        if rec is not None:
            (self.ok if stable else self.failed)[record_id] = rec

    def poll(self, now: int) -> list[Record]:
        """Records of the next phase once the current one has settled."""
        if self.done or self.waiting or self.phase == "new":
            return []
        if self.ready_at == 0 and self.protocol is Protocol.ATOMIX and self.phase == "lock":
            self.ready_at = now + self.stall
        if now < self.ready_at:
            return []
        self.ready_at = 0
        sh = self.shape
        all_ok = not self.failed
        ph = self.phase
        if ph == "lock":
            if all_ok:
                recs = [self._rec(s, RecordKind.COMMIT, sh.inputs_at(s), ()) for s in sh.input_shards]
                recs += [self._rec(s, RecordKind.CREATE, (), sh.outputs_at(s)) for s in sh.output_shards]
                return self._open("commit", recs)
            recs = [self._rec(s, RecordKind.ABORT, tx.inputs, ()) for s, tx in self.ok.values()]
            return self._open("abort", recs) if recs else self._finish(Outcome.ABORTED)
        if ph == "relay":
            if all_ok:
                return self._open("deliver", [self._rec(s, RecordKind.RELAY_IN, (), sh.outputs_at(s))
                                              for s in sh.output_shards])
            return self._refund([(s, tx.inputs) for s, tx in self.ok.values()])
        if ph == "move":
            moved = [u for _, tx in sorted(self.ok.values(), key=lambda r: r[1].txid) for u in tx.inputs]
            if not moved:
                return self._finish(Outcome.ABORTED)
            self.all_moved = all_ok
            return self._open("arrive", [self._rec(sh.home, RecordKind.RELAY_IN, (),
                                                   [_dummy_key(u) for u in moved])])
        if ph == "arrive":
            if not all_ok:
                return self._finish(Outcome.MIXED)
            if not self.all_moved:
                return self._finish(Outcome.ABORTED)  # dummies stay with the owner
            return self._final(now)
        if ph in ("commit", "deliver", "final"):
            if all_ok:
                return self._finish(Outcome.COMMITTED)
            if ph == "final" and all(tx.kind is RecordKind.ORDINARY for _, tx in self.failed.values()):
                return self._finish(Outcome.ABORTED)  # dummies stay with the owner
            return self._finish(Outcome.MIXED)
        if ph in ("abort", "refund"):
            return self._finish(Outcome.ABORTED if all_ok else Outcome.MIXED)
        return []

    def _final(self, now: int) -> list[Record]:
        sh = self.shape
        spent = sh.inputs_at(sh.home) + [_dummy_key(u)
                                         for s in sh.input_shards if s != sh.home
                                         for u in sh.inputs_at(s)]
        recs = [self._rec(sh.home, RecordKind.ORDINARY, spent, sh.outputs_at(sh.home))]
        recs += [self._rec(s, RecordKind.CREATE, (), sh.outputs_at(s))
                 for s in sh.output_shards if s != sh.home]
        return self._open("final", recs)

    def _refund(self, relayed: list[tuple[int, tuple[UtxoId, ...]]]) -> list[Record]:
        recs = [self._rec(s, RecordKind.CREATE, (), [refund_id(u) for u in ins]) for s, ins in relayed]
        return self._open("refund", recs) if recs else self._finish(Outcome.ABORTED)


def open_commit(protocol: Protocol, tx: Transaction, shard_of: Callable[[UtxoId], int],
                stall: int = 0) -> LedgerCommit:
    shape = TxShape.from_tx(tx, shard_of)
    if not shape.cross_shard:
        raise InstructSingleShard(f"tx {tx.txid} lies entirely in shard {shape.shards[0]}")
    return LedgerCommit(Protocol(protocol), tx, shape, stall)
