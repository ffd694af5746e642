"""Consensus number of k-shared asset transfer, both directions.

* :class:`ConsensusFromAssetTransfer` solves consensus among ``k`` processes
  with registers and one k-shared asset-transfer object: every process tries
  to withdraw ``2k - p`` from a shared account holding ``2k``; only one
  withdrawal fits and the remaining balance names the winner.
* :class:`KSharedAssetTransfer` implements a k-shared asset-transfer object
  from registers, an atomic snapshot and k-consensus objects, with helping:
  owners agree round by round on the oldest announced transfer.

All shared accesses are single scheduler steps (see :mod:`at2.scheduler`).
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .core import (
    History,
    Operation,
    ReadOp,
    SequentialSpecState,
    TransferOp,
    UnknownAccountError,
    Verdict,
    check_linearizability,
    sequential_apply,
)
from .scheduler import Scheduler, Step, exhaustive_runs, random_chooser
from .shared_memory import client

BOTTOM = None

SUCCESS = "success"
FAILURE = "failure"


class KConsensusObject:
    """The first ``k`` proposals return the first proposed value; later ones ``BOTTOM``."""

    def __init__(self, k: int):
        self.k = k
        self.decided = BOTTOM
        self.invocation_count = 0

    def propose(self, v):
        self.invocation_count += 1
        if self.invocation_count > self.k:
            return BOTTOM
        if self.decided is BOTTOM:
            self.decided = v
        return self.decided


class SharedRegister:
    def __init__(self, value=BOTTOM):
        self.value = value

    def read(self):
        return self.value

    def write(self, value) -> None:
        self.value = value


def _check_sharing(owners: Mapping[int, frozenset], k: int) -> None:
    for a, o in owners.items():
        if len(o) > k:
            raise ValueError(f"account {a} has {len(o)} owners but the object is {k}-shared")


class AtomicAssetTransfer:
    """Linearizable k-shared asset transfer where every operation is one step."""

    def __init__(self, k: int, owners: Mapping[int, Sequence[int]], q0: Mapping[int, int]):
        self.k = k
        self.owners = {a: frozenset(o) for a, o in owners.items()}
        _check_sharing(self.owners, k)
        self.state = SequentialSpecState.initial(q0)

    def transfer(self, p: int, a: int, b: int, x: int) -> Step:
        yield
        self.state, resp = sequential_apply(self.state, p, TransferOp(a, b, x), self.owners)
        return resp

    def read(self, p: int, a: int) -> Step:
        yield
        return self.state[a]

    def run_op(self, p: int, op: Operation) -> Step:
        if isinstance(op, ReadOp):
            return self.read(p, op.a)
        return self.transfer(p, op.a, op.b, op.x)


@dataclass(frozen=True, order=True)
class ResultTransfer:
    """A transfer request as announced in a register.

    Ordering is ``(round, proposer, ...)`` so ``min`` picks the oldest
    announcement, ties broken by ascending process id.
    """

    round: int
    proposer: int
    source: int
    dest: int
    amount: int


@dataclass
class _OwnerLocal:
    hist: frozenset = frozenset()
    committed: dict = field(default_factory=dict)
    round: dict = field(default_factory=dict)


class KSharedAssetTransfer:
    """k-shared asset transfer from k-consensus objects and an atomic snapshot.

    ``processes`` lists every process id that may invoke operations; each
    owns one snapshot cell.  Announcement registers are never garbage
    collected.
    """

    def __init__(
        self,
        k: int,
        processes: Sequence[int],
        owners: Mapping[int, Sequence[int]],
        q0: Mapping[int, int],
    ):
        self.k = k
        self.processes = list(processes)
        self.owners = {a: frozenset(o) for a, o in owners.items()}
        _check_sharing(self.owners, k)
        self.q0 = dict(q0)
        self.cell = {p: i for i, p in enumerate(self.processes)}
        self.snapshot_cells: list[frozenset] = [frozenset()] * len(self.processes)
        self.announce = {a: {p: SharedRegister() for p in self.processes} for a in self.q0}
        self.kc: dict[int, list[KConsensusObject]] = {a: [] for a in self.q0}
        self.local = {p: _OwnerLocal() for p in self.processes}
        self.fresh_decisions: dict[int, int] = {p: 0 for p in self.processes}

    def _kc(self, a: int, r: int) -> KConsensusObject:
        objs = self.kc[a]
        while len(objs) <= r:
            objs.append(KConsensusObject(self.k))
        return objs[r]

    def balance(self, a: int, snap: Sequence[frozenset]) -> int:
        if a not in self.q0:
            raise UnknownAccountError(a)
        total = self.q0[a]
        # a decision may sit in several owners' cells; count it once
        for tx, result in frozenset().union(*snap):
            if result != SUCCESS:
                continue
            if tx.dest == a:
                total += tx.amount
            if tx.source == a:
                total -= tx.amount
        return total

    def _proposal(self, req: ResultTransfer, snap) -> tuple:
        ok = self.balance(req.source, snap) >= req.amount
        return (req, SUCCESS if ok else FAILURE)

    def _collect(self, a: int) -> Step:
        collected = set()
        for i in self.processes:
            yield
            v = self.announce[a][i].read()
            if v is not BOTTOM:
                collected.add(v)
        return collected

    def transfer(self, p: int, a: int, b: int, x: int) -> Step:
        for acct in (a, b):
            if acct not in self.q0:
                raise UnknownAccountError(acct)
        if p not in self.owners[a]:
            return False
        local = self.local[p]
        committed = local.committed.setdefault(a, set())
        rnd = local.round.get(a, 0)
        tx = ResultTransfer(rnd, p, a, b, x)
        yield
        self.announce[a][p].write(tx)
        collected = (yield from self._collect(a)) - committed
        while tx in collected:
            req = min(collected)
            yield
            prop = self._proposal(req, tuple(self.snapshot_cells))
            yield
            kc = self._kc(a, local.round.get(a, 0))
            if kc.decided is BOTTOM:
                self.fresh_decisions[p] += 1
            decision = kc.propose(prop)
            local.hist = local.hist | {decision}
            yield
            self.snapshot_cells[self.cell[p]] = local.hist
            committed.add(decision[0])
            collected -= committed
            local.round[a] = local.round.get(a, 0) + 1
        return (tx, SUCCESS) in local.hist

    def read(self, p: int, a: int) -> Step:
        if a not in self.q0:
            raise UnknownAccountError(a)
        yield
        return self.balance(a, tuple(self.snapshot_cells))

    def run_op(self, p: int, op: Operation) -> Step:
        if isinstance(op, ReadOp):
            return self.read(p, op.a)
        return self.transfer(p, op.a, op.b, op.x)

    def pending_announcements(self, a: int) -> int:
        """Announced transfers on ``a`` that no snapshot cell has committed yet."""
        decided = {tx for cell in self.snapshot_cells for tx, _ in cell}
        return sum(
            1
            for reg in self.announce[a].values()
            if reg.value is not BOTTOM and reg.value not in decided
        )

    def committed_result(self, tx: ResultTransfer) -> Optional[str]:
        for cell in self.snapshot_cells:
            for t, result in cell:
                if t == tx:
                    return result
        return None


SHARED_ACCOUNT = 0
SINK_ACCOUNT = 1


class ConsensusFromAssetTransfer:
    """Wait-free consensus for processes ``1..k`` from one k-shared asset-transfer object.

    ``backend`` selects the asset-transfer implementation: ``"atomic"`` (one
    step per operation) or ``"kshared"`` (:class:`KSharedAssetTransfer`).
    """

    def __init__(self, k: int, backend: str = "atomic", object_k: Optional[int] = None):
        self.k = k
        owners = {SHARED_ACCOUNT: range(1, k + 1), SINK_ACCOUNT: ()}
        q0 = {SHARED_ACCOUNT: 2 * k, SINK_ACCOUNT: 0}
        object_k = k if object_k is None else object_k
        if backend == "atomic":
            self.at = AtomicAssetTransfer(object_k, owners, q0)
        elif backend == "kshared":
            self.at = KSharedAssetTransfer(object_k, range(1, k + 1), owners, q0)
        else:
            raise ValueError(f"unknown backend {backend!r}")
        self.registers = {i: SharedRegister() for i in range(1, k + 1)}

    def propose(self, p: int, v) -> Step:
        if not 1 <= p <= self.k:
            raise ValueError(f"process {p} outside 1..{self.k}")
        yield
        self.registers[p].write(v)
        yield from self.at.transfer(p, SHARED_ACCOUNT, SINK_ACCOUNT, 2 * self.k - p)
        winner = yield from self.at.read(p, SHARED_ACCOUNT)
        yield
        return self.registers[winner].read()


@dataclass
class ConsensusReport:
    runs: int = 0
    agreement_failures: int = 0
    validity_failures: int = 0
    undecided: int = 0

    @property
    def ok(self) -> bool:
        return self.agreement_failures == 0 and self.validity_failures == 0 and self.undecided == 0


def _judge(report: ConsensusReport, proposals: dict, decided: dict, paused: frozenset) -> None:
    report.runs += 1
    if set(decided) != set(proposals) - paused:
        report.undecided += 1
    if len(set(decided.values())) > 1:
        report.agreement_failures += 1
    if any(v not in proposals.values() for v in decided.values()):
        report.validity_failures += 1


def consensus_exhaustive(k: int, backend: str = "atomic") -> ConsensusReport:
    """Every interleaving of ``k`` concurrent proposals (feasible for small ``k``)."""
    report = ConsensusReport()
    proposals = {p: f"v{p}" for p in range(1, k + 1)}

    def build():
        cons = ConsensusFromAssetTransfer(k, backend)
        return {p: cons.propose(p, v) for p, v in proposals.items()}

    for run, _ in exhaustive_runs(build):
        _judge(report, proposals, run.results, frozenset())
    return report


def consensus_random(
    k: int, schedules: int, seed: int, backend: str = "kshared", crash_prob: float = 0.2
) -> ConsensusReport:
    """Seeded random interleavings; some processes crash (pause forever) midway."""
    rng = random.Random(seed)
    report = ConsensusReport()
    for _ in range(schedules):
        proposals = {p: rng.randrange(1000) for p in range(1, k + 1)}
        cons = ConsensusFromAssetTransfer(k, backend)
        sched = Scheduler({p: cons.propose(p, v) for p, v in proposals.items()})
        crashed = frozenset(p for p in proposals if p != 1 and rng.random() < crash_prob)
        budget = {p: rng.randrange(1, 12) for p in crashed}

        def choose(runnable, budget=budget):
            idx = rng.randrange(len(runnable))
            pid = runnable[idx]
            if pid in budget:
                budget[pid] -= 1
            return idx

        # crashed processes take a few steps, then stop for good
        while sched.enabled:
            runnable = [p for p in sched.enabled if budget.get(p, 1) > 0]
            if not runnable:
                break
            sched.step(runnable[choose(runnable)])
        _judge(report, proposals, sched.results, frozenset(sched.enabled))
    return report


def kshared_history_check(
    owners_count: int, ops: int, schedules: int, seed: int, initial: int = 4
) -> tuple[int, int]:
    """Record histories of :class:`KSharedAssetTransfer` and check linearizability.

    Account 0 is shared by processes ``1..owners_count``; account 1 is owned
    by process 1 alone.  Returns ``(schedules_checked, violations)``.
    """
    rng = random.Random(seed)
    procs_ids = list(range(1, owners_count + 1))
    owners = {0: frozenset(procs_ids), 1: frozenset({1})}
    q0 = {0: initial, 1: initial}
    violations = 0
    for _ in range(schedules):
        obj = KSharedAssetTransfer(owners_count, procs_ids, owners, q0)
        history = History()
        scripts = {}
        for p in procs_ids:
            script: list[Operation] = []
            for _ in range(ops):
                if rng.random() < 0.3:
                    script.append(ReadOp(rng.choice([0, 1])))
                else:
                    script.append(TransferOp(rng.choice([0, 0, 1]), rng.choice([0, 1]), rng.randint(0, 4)))
            scripts[p] = script
        procs = {p: client(obj, p, scripts[p], history) for p in procs_ids}
        Scheduler(procs).run(random_chooser(rng))
        verdict = check_linearizability(history.operations(), owners, q0)
        if verdict is not Verdict.LINEARIZABLE:
            violations += 1
    return schedules, violations
