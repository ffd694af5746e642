"""Consensusless asset transfer over a secure broadcast.

:class:`TransferEngine` is independent of the broadcast: it is handed a
``broadcast(payload)`` function and receives ``deliver(source, payload)``
calls.  :class:`DetNode` plugs it into the quorum broadcast and
:class:`ProbNode` into one sequenced double-echo instance per sender.
"""
from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

from .broadcast_det import DeterministicBroadcast
from .broadcast_prob import EchoParams, SequencedInstance
from .core import Transfer, TransferMessage, balance, checked_amount
from .simnet import ProcessContext


class TransferInProgress(RuntimeError):
    """A process issued a transfer while its previous one is unresolved."""


@dataclass
class PendingTransfer:
    dest: int
    amount: int
    result: Optional[bool] = None
    transfer: Optional[Transfer] = None
    callbacks: list = field(default_factory=list)

    @property
    def done(self) -> bool:
        return self.result is not None

    def _resolve(self, value: bool) -> None:
        self.result = value
        for cb in self.callbacks:
            cb(self)

    def then(self, callback: Callable[["PendingTransfer"], None]) -> None:
        if self.done:
            callback(self)
        else:
            self.callbacks.append(callback)


class TransferEngine:
    """Per-process transfer state: ``seq``, ``rec``, ``hist``, ``deps`` and the
    queue of delivered-but-unvalidated messages."""

    def __init__(self, pid: int, q0: Mapping[int, int], broadcast: Callable[[TransferMessage], None]):
        self.pid = pid
        self.q0 = dict(q0)
        self._broadcast = broadcast
        self.seq: dict[int, int] = defaultdict(int)
        self.rec: dict[int, int] = defaultdict(int)
        self.hist: dict[int, set] = defaultdict(set)
        self.deps: set = set()
        self.to_validate: dict[tuple[int, int], TransferMessage] = {}
        self.pending: Optional[PendingTransfer] = None
        self.applied: list[Transfer] = []
        self.negative_balances = 0

    # -- application API --

    def transfer(self, b: int, x: int) -> PendingTransfer:
        if self.pending is not None:
            raise TransferInProgress(f"process {self.pid} already has a transfer in flight")
        checked_amount(x)
        handle = PendingTransfer(b, x)
        if self.read(self.pid) < x:
            handle._resolve(False)
            return handle
        t = Transfer(self.pid, b, x, self.seq[self.pid] + 1)
        msg = TransferMessage(t, frozenset(self.deps))
        handle.transfer = t
        self.pending = handle
        self.deps = set()
        self._broadcast(msg)
        return handle

    def read(self, a: int) -> int:
        return balance(a, self.hist[a] | self.deps, self.q0)

    # -- broadcast callback --

    def deliver(self, q: int, msg: TransferMessage) -> None:
        if not isinstance(msg, TransferMessage):
            return
        s = msg.transfer.seq
        if s != self.rec[q] + 1:
            return
        self.rec[q] = s
        self.to_validate[(q, s)] = msg
        self._validate()

    def valid(self, q: int, t: Transfer, h: frozenset) -> bool:
        return (
            q == t.source
            and t.seq == self.seq[q] + 1
            and balance(t.source, self.hist[q], self.q0) >= t.amount
            and h <= self.hist[q]
        )

    def _validate(self) -> None:
        progress = True
        while progress:
            progress = False
            for key in sorted(self.to_validate):
                q, s = key
                msg = self.to_validate[key]
                if self.valid(q, msg.transfer, msg.deps):
                    del self.to_validate[key]
                    self._apply(q, msg.transfer)
                    progress = True

    def _apply(self, q: int, t: Transfer) -> None:
        self.hist[t.source].add(t)
        self.hist[t.dest].add(t)
        self.seq[q] = t.seq
        self.applied.append(t)
        for a in {t.source, t.dest}:
            if balance(a, self.hist[a], self.q0) < 0:
                self.negative_balances += 1
        if t.dest == self.pid and t.source != self.pid:
            self.deps.add(t)
        if t.source == self.pid and self.pending is not None and self.pending.transfer == t:
            handle, self.pending = self.pending, None
            handle._resolve(True)

    def all_transfers(self) -> set:
        out: set = set()
        for ts in self.hist.values():
            out |= ts
        return out


# --- workload ---------------------------------------------------------------------


@dataclass
class Workload:
    """Closed-loop client: issue ``count`` transfers one after another."""

    count: int = 3
    max_amount: int = 8
    think_time: int = 3

    def script(self, rng: random.Random, pid: int, n: int) -> list[tuple[int, int]]:
        out = []
        for _ in range(self.count):
            dest = rng.randrange(n)
            out.append((dest, rng.randint(1, self.max_amount)))
        return out


class _ClientMixin:
    ctx: ProcessContext
    engine: TransferEngine

    def _init_client(self, script, think_time: int = 3) -> None:
        self.script = list(script)
        self.think_time = think_time
        self.issued: list[PendingTransfer] = []
        self.successes: list[Transfer] = []

    def start(self) -> None:
        self._next()

    def _next(self) -> None:
        if len(self.issued) == len(self.script):
            return
        dest, amount = self.script[len(self.issued)]
        handle = self.engine.transfer(dest, amount)
        self.issued.append(handle)
        self.ctx.record("invoke", (dest, amount))
        handle.then(self._resolved)

    def _resolved(self, handle: PendingTransfer) -> None:
        self.ctx.record("resolve", (handle.dest, handle.amount, handle.result))
        if handle.result:
            self.successes.append(handle.transfer)
        self.ctx.set_timer(self.think_time, self._next)

    @property
    def unresolved(self) -> int:
        return sum(1 for h in self.issued if not h.done) + len(self.script) - len(self.issued)


class DetNode(_ClientMixin):
    """Transfer engine over the quorum-acknowledged broadcast."""

    def __init__(self, ctx: ProcessContext, q0: Mapping[int, int], script=()):
        self.ctx = ctx
        self.bcast = DeterministicBroadcast(ctx, self._deliver)
        self.engine = TransferEngine(ctx.pid, q0, self.bcast.broadcast)
        self._init_client(script)

    def _deliver(self, source: int, payload) -> None:
        self.engine.deliver(source, payload)

    def on_message(self, src: int, msg) -> None:
        self.bcast.on_message(src, msg)


class ProbNode(_ClientMixin):
    """Transfer engine over one sequenced double-echo instance per sender."""

    def __init__(self, ctx: ProcessContext, q0: Mapping[int, int], params: EchoParams, script=()):
        self.ctx = ctx
        self.engine = TransferEngine(ctx.pid, q0, self._broadcast)
        self.channels = {
            s: SequencedInstance(ctx, s, params, lambda m, s=s: self.engine.deliver(s, m))
            for s in range(ctx.n)
        }
        self._init_client(script)

    def _broadcast(self, msg: TransferMessage) -> None:
        self.channels[self.ctx.pid].broadcast(msg)

    def on_message(self, src: int, msg) -> None:
        inst = getattr(msg, "inst", None)
        if inst is not None and inst[0] in self.channels:
            self.channels[inst[0]].on_message(src, msg)
