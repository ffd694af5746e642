"""Wait-free single-owner asset transfer over an atomic snapshot.

Each process keeps the set of its successful outgoing transfers in its own
snapshot cell.  A transfer takes one snapshot, checks the balance and, on
success, performs one update.  Reads take one snapshot.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .core import (
    History,
    Operation,
    ReadOp,
    TransferOp,
    UnknownAccountError,
    check_linearizability,
    Verdict,
)
from .scheduler import Scheduler, Step, exhaustive_runs, random_chooser

EMPTY = frozenset()


class AtomicSnapshot:
    """``n`` cells with atomic ``update`` and ``snapshot``.

    Atomicity comes from the scheduler: each call happens inside one step.
    """

    def __init__(self, n: int):
        self.cells: list[frozenset] = [EMPTY] * n

    def update(self, i: int, value: frozenset) -> None:
        self.cells[i] = value

    def snapshot(self) -> tuple[frozenset, ...]:
        return tuple(self.cells)


@dataclass(frozen=True)
class SmOp:
    """Entry of ``ops_p``.  ``tag`` keeps repeated identical transfers distinct."""

    a: int
    b: int
    x: int
    tag: int


@dataclass
class SmProcessState:
    ops: frozenset = EMPTY
    issued: int = 0


class AT2SM:
    """Asset-transfer object with at most one owner per account.

    ``n`` processes are indexed ``0..n-1``; ``owners`` maps each account to a
    set of at most one process (an empty set makes the account read-only).
    """

    def __init__(self, n: int, owners: Mapping[int, Sequence[int]], q0: Mapping[int, int]):
        for a, owner_set in owners.items():
            if len(set(owner_set)) > 1:
                raise ValueError(f"account {a} has {len(set(owner_set))} owners; at most 1 allowed")
        if set(owners) != set(q0):
            raise ValueError("owners and q0 must cover the same accounts")
        self.n = n
        self.owners = {a: frozenset(o) for a, o in owners.items()}
        self.q0 = dict(q0)
        self.snapshot_object = AtomicSnapshot(n)
        self.local = [SmProcessState() for _ in range(n)]
        self.balances_seen: list[int] = []

    def balance(self, a: int, snap: Sequence[frozenset]) -> int:
        if a not in self.q0:
            raise UnknownAccountError(a)
        total = self.q0[a]
        for cell in snap:
            for op in cell:
                if op.b == a:
                    total += op.x
                if op.a == a:
                    total -= op.x
        return total

    def _observe(self, snap: Sequence[frozenset]) -> None:
        self.balances_seen.extend(self.balance(a, snap) for a in self.q0)

    def transfer(self, p: int, a: int, b: int, x: int) -> Step:
        if a not in self.q0:
            raise UnknownAccountError(a)
        if b not in self.q0:
            raise UnknownAccountError(b)
        yield
        snap = self.snapshot_object.snapshot()
        self._observe(snap)
        if p not in self.owners[a] or self.balance(a, snap) < x:
            return False
        state = self.local[p]
        state.issued += 1
        state.ops = state.ops | {SmOp(a, b, x, state.issued)}
        yield
        self.snapshot_object.update(p, state.ops)
        return True

    def read(self, p: int, a: int) -> Step:
        if a not in self.q0:
            raise UnknownAccountError(a)
        yield
        snap = self.snapshot_object.snapshot()
        self._observe(snap)
        return self.balance(a, snap)

    def run_op(self, p: int, op: Operation) -> Step:
        if isinstance(op, ReadOp):
            return self.read(p, op.a)
        return self.transfer(p, op.a, op.b, op.x)


def client(obj, pid: int, script: Sequence[Operation], history: History) -> Step:
    """Issue ``script`` sequentially, recording invocations and responses."""
    for op in script:
        history.invoke(pid, op)
        resp = yield from obj.run_op(pid, op)
        history.respond(pid, resp)


def random_script(rng: random.Random, pid: int, n_ops: int, accounts: Sequence[int], max_amount: int):
    script: list[Operation] = []
    for _ in range(n_ops):
        if rng.random() < 0.35:
            script.append(ReadOp(rng.choice(accounts)))
        else:
            # mostly own account, occasionally someone else's (must fail)
            a = pid if rng.random() < 0.85 else rng.choice(accounts)
            script.append(TransferOp(a, rng.choice(accounts), rng.randint(0, max_amount)))
    return script


@dataclass
class CheckReport:
    schedules: int = 0
    violations: int = 0
    inconclusive: int = 0
    negative_balances: int = 0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.violations == 0 and self.inconclusive == 0 and self.negative_balances == 0


def _sm_system(n_procs, scripts, q0):
    owners = {a: [a] for a in range(n_procs)}
    obj = AT2SM(n_procs, owners, q0)
    history = History()
    procs = {p: client(obj, p, scripts[p], history) for p in range(n_procs)}
    return obj, history, procs, owners


def sm_check(
    processes: int,
    ops: int,
    schedules: int,
    seed: int,
    max_amount: int = 4,
    initial: int = 5,
    exhaustive: Optional[bool] = None,
) -> CheckReport:
    """Record concurrent histories of :class:`AT2SM` and check each one.

    One account per process, owned by it.  Small systems (<= 2 processes,
    <= 3 ops each) are explored exhaustively unless ``exhaustive`` says
    otherwise; larger ones use ``schedules`` seeded random interleavings, each
    with a freshly drawn workload.
    """
    if exhaustive is None:
        exhaustive = processes <= 2 and ops <= 3
    rng = random.Random(seed)
    accounts = list(range(processes))
    q0 = {a: initial for a in accounts}
    report = CheckReport()

    def check(obj, history, owners):
        report.schedules += 1
        verdict = check_linearizability(history.operations(), owners, q0)
        if verdict is Verdict.NOT_LINEARIZABLE:
            report.violations += 1
            report.failures.append(history.operations())
        elif verdict is Verdict.INCONCLUSIVE:
            report.inconclusive += 1
        if any(v < 0 for v in obj.balances_seen):
            report.negative_balances += 1

    if exhaustive:
        scripts = [random_script(rng, p, ops, accounts, max_amount) for p in accounts]

        def build():
            obj, history, procs, owners = _sm_system(processes, scripts, q0)
            return procs, (obj, history, owners)

        for _, (obj, history, owners) in exhaustive_runs(build):
            check(obj, history, owners)
        return report

    for _ in range(schedules):
        scripts = [random_script(rng, p, ops, accounts, max_amount) for p in accounts]
        obj, history, procs, owners = _sm_system(processes, scripts, q0)
        Scheduler(procs).run(random_chooser(rng))
        check(obj, history, owners)
    return report
