"""Asset-transfer vocabulary: transfers, balances, the sequential type and a
linearizability checker built on it.

Accounts and processes are plain ``int`` ids.  In the message-passing model an
account id is the id of its owning process.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence, Union

MAX_AMOUNT = 2**64 - 1

ProcessId = int
AccountId = int
OwnerMap = Mapping[AccountId, frozenset]


class UnknownAccountError(KeyError):
    """Raised when an operation names an account outside the configured set."""


class LinearizabilityInconclusive(RuntimeError):
    """The linearizability search ran out of budget before reaching a verdict."""


def checked_amount(value: int) -> int:
    if value < 0 or value > MAX_AMOUNT:
        raise OverflowError(f"amount {value} outside [0, {MAX_AMOUNT}]")
    return value


@dataclass(frozen=True, order=True)
class Transfer:
    """One movement of ``amount`` units, identified by ``(source, seq)``."""

    source: AccountId
    dest: AccountId
    amount: int
    seq: int

    def __post_init__(self) -> None:
        if self.amount < 0:
            raise ValueError("amount must be non-negative")
        if self.seq < 1:
            raise ValueError("seq must be >= 1")

    @property
    def ident(self) -> tuple[AccountId, int]:
        return (self.source, self.seq)

    def conflicts_with(self, other: "Transfer") -> bool:
        return self.ident == other.ident and self != other


@dataclass(frozen=True)
class TransferMessage:
    """A transfer plus the incoming transfers it depends on."""

    transfer: Transfer
    deps: frozenset = frozenset()

    def __post_init__(self) -> None:
        for dep in self.deps:
            if dep.dest != self.transfer.source:
                raise ValueError(f"dependency {dep} is not incoming to {self.transfer.source}")


def balance(a: AccountId, history: Iterable[Transfer], q0: Mapping[AccountId, int]) -> int:
    """``q0[a]`` plus incoming minus outgoing amounts over ``history``.

    Self-transfers cancel out; transfers not touching ``a`` contribute nothing.
    The result may be negative for adversarial histories.
    """
    total = q0.get(a, 0)
    for t in history:
        if t.dest == a:
            total += t.amount
        if t.source == a:
            total -= t.amount
    return total


@dataclass
class AccountHistory:
    """Applied transfers involving one account."""

    account: AccountId
    transfers: set = field(default_factory=set)

    def add(self, t: Transfer) -> None:
        if t.source != self.account and t.dest != self.account:
            raise ValueError(f"{t} does not involve account {self.account}")
        for other in self.transfers:
            if other.conflicts_with(t):
                raise ValueError(f"{t} conflicts with {other}")
        self.transfers.add(t)

    def incoming(self) -> list[Transfer]:
        return sorted(t for t in self.transfers if t.dest == self.account)

    def outgoing(self) -> list[Transfer]:
        return sorted(t for t in self.transfers if t.source == self.account)

    def outgoing_contiguous(self) -> bool:
        seqs = [t.seq for t in self.outgoing()]
        return seqs == list(range(1, len(seqs) + 1))


# --- sequential specification --------------------------------------------


class TransferOp(NamedTuple):
    a: AccountId
    b: AccountId
    x: int


class ReadOp(NamedTuple):
    a: AccountId


Operation = Union[TransferOp, ReadOp]


@dataclass(frozen=True)
class SequentialSpecState:
    """Balances of every account; immutable so search states can be memoised."""

    balances: tuple[tuple[AccountId, int], ...]

    @classmethod
    def initial(cls, q0: Mapping[AccountId, int]) -> "SequentialSpecState":
        for a, v in q0.items():
            if v < 0:
                raise ValueError(f"negative initial balance for {a}")
            checked_amount(v)
        return cls(tuple(sorted(q0.items())))

    def as_dict(self) -> dict[AccountId, int]:
        return dict(self.balances)

    def __getitem__(self, a: AccountId) -> int:
        for acct, v in self.balances:
            if acct == a:
                return v
        raise UnknownAccountError(a)


def sequential_apply(
    state: SequentialSpecState, p: ProcessId, op: Operation, owners: OwnerMap
) -> tuple[SequentialSpecState, Union[bool, int]]:
    balances = state.as_dict()
    if isinstance(op, ReadOp):
        if op.a not in balances:
            raise UnknownAccountError(op.a)
        return state, balances[op.a]
    a, b, x = op
    for acct in (a, b):
        if acct not in balances:
            raise UnknownAccountError(acct)
    checked_amount(x)
    if p not in owners.get(a, ()) or balances[a] < x:
        return state, False
    balances[a] -= x
    balances[b] = checked_amount(balances[b] + x)
    assert balances[a] >= 0
    return SequentialSpecState(tuple(sorted(balances.items()))), True


# --- concurrent histories ---------------------------------------------------


@dataclass(frozen=True)
class HistoryOp:
    """A completed or pending operation extracted from an event history.

    ``invoked``/``responded`` are positions in the global event order;
    ``responded`` is ``None`` for pending invocations.
    """

    pid: ProcessId
    op: Operation
    invoked: int
    responded: Optional[int] = None
    response: Union[bool, int, None] = None

    @property
    def complete(self) -> bool:
        return self.responded is not None


class History:
    """Recorder of invocation/response events in real-time order."""

    def __init__(self) -> None:
        self._clock = 0
        self._open: dict[ProcessId, tuple[Operation, int]] = {}
        self._ops: list[HistoryOp] = []

    def invoke(self, pid: ProcessId, op: Operation) -> None:
        if pid in self._open:
            raise RuntimeError(f"process {pid} already has a pending operation")
        self._open[pid] = (op, self._clock)
        self._clock += 1

    def respond(self, pid: ProcessId, response) -> None:
        op, inv = self._open.pop(pid)
        self._ops.append(HistoryOp(pid, op, inv, self._clock, response))
        self._clock += 1

    def operations(self) -> list[HistoryOp]:
        pending = [HistoryOp(pid, op, inv) for pid, (op, inv) in self._open.items()]
        return sorted(self._ops + pending, key=lambda h: h.invoked)


class Verdict(enum.Enum):
    LINEARIZABLE = "linearizable"
    NOT_LINEARIZABLE = "not-linearizable"
    INCONCLUSIVE = "inconclusive"


def check_linearizability(
    ops: Sequence[HistoryOp],
    owners: OwnerMap,
    q0: Mapping[AccountId, int],
    budget: int = 1_000_000,
) -> Verdict:
    """Wing-Gong search with memoisation on (linearized set, state).

    Pending operations may be linearized anywhere after their invocation or
    dropped altogether (the two ways of completing a history).
    """
    ops = list(ops)
    n = len(ops)
    complete_mask = 0
    for i, h in enumerate(ops):
        if h.complete:
            complete_mask |= 1 << i
    seen: set = set()
    nodes = 0

    def search(done: int, state: SequentialSpecState) -> bool:
        nonlocal nodes
        if done & complete_mask == complete_mask:
            return True
        key = (done, state)
        if key in seen:
            return False
        nodes += 1
        if nodes > budget:
            raise LinearizabilityInconclusive
        seen.add(key)
        horizon = min(
            ops[i].responded for i in range(n) if not done >> i & 1 and ops[i].complete
        )
        for i in range(n):
            if done >> i & 1:
                continue
            h = ops[i]
            if h.invoked > horizon:
                continue
            new_state, resp = sequential_apply(state, h.pid, h.op, owners)
            if h.complete and resp != h.response:
                continue
            if search(done | 1 << i, new_state):
                return True
        return False

    try:
        ok = search(0, SequentialSpecState.initial(q0))
    except LinearizabilityInconclusive:
        return Verdict.INCONCLUSIVE
    return Verdict.LINEARIZABLE if ok else Verdict.NOT_LINEARIZABLE


def is_linearizable(
    ops: Sequence[HistoryOp], owners: OwnerMap, q0: Mapping[AccountId, int], budget: int = 1_000_000
) -> bool:
    """Boolean form of :func:`check_linearizability`.

    Raises :class:`LinearizabilityInconclusive` instead of guessing when the
    search budget is exhausted.
    """
    verdict = check_linearizability(ops, owners, q0, budget)
    if verdict is Verdict.INCONCLUSIVE:
        raise LinearizabilityInconclusive(f"budget of {budget} search nodes exhausted")
    return verdict is Verdict.LINEARIZABLE


def brute_force_linearizable(
    ops: Sequence[HistoryOp], owners: OwnerMap, q0: Mapping[AccountId, int]
) -> bool:
    """Enumerate every completion and permutation.  Only for tiny histories."""
    ops = list(ops)
    pending = [h for h in ops if not h.complete]
    complete = [h for h in ops if h.complete]
    for r in range(len(pending) + 1):
        for kept in itertools.combinations(pending, r):
            chosen = complete + list(kept)
            for perm in itertools.permutations(chosen):
                if _respects_real_time(perm) and _legal(perm, owners, q0):
                    return True
    return False


def _respects_real_time(seq: Sequence[HistoryOp]) -> bool:
    for i, later in enumerate(seq):
        for earlier in seq[i + 1 :]:
            # ``earlier`` is placed after ``later``; illegal if it finished first
            if earlier.complete and earlier.responded < later.invoked:
                return False
    return True


def _legal(seq: Sequence[HistoryOp], owners: OwnerMap, q0: Mapping[AccountId, int]) -> bool:
    state = SequentialSpecState.initial(q0)
    for h in seq:
        state, resp = sequential_apply(state, h.pid, h.op, owners)
        if h.complete and resp != h.response:
            return False
    return True
