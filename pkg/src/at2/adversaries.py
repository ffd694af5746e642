"""Byzantine strategies.  Every Byzantine process is driven by one adversary
object; it may only sign and send as Byzantine ids."""
from __future__ import annotations

from collections import defaultdict
from typing import Any

from .broadcast_det import BcastMessage, Stage, ack_statement, initial_statement, quorum
from .broadcast_prob import (
    Echo,
    EchoSubscribe,
    Gossip,
    GossipSubscribe,
    Ready,
    ReadySubscribe,
    Send,
    echo_statement,
    gossip_statement,
)
from .core import Transfer, TransferMessage
from .simnet import Adversary, AdversaryContext


class CrashAdversary(Adversary):
    """Byzantine processes never send anything."""


class Equivocator(Adversary):
    """Double-spender against the quorum broadcast.

    Each Byzantine process signs two conflicting payloads with sequence number
    1 and sends one to each half of the correct processes.  Byzantine
    processes acknowledge everything they see, including both conflicting
    payloads, and a PROOF is flooded for any payload that reaches a quorum.
    A sub-quorum PROOF for the losing payload is sent as well, to be rejected.

    ``make_payloads(ctx, pid)`` returns the two payloads; by default they are
    conflicting transfers of ``amount`` to two different correct processes.
    """

    def __init__(self, amount: int = 10, make_payloads=None):
        self.amount = amount
        self.make_payloads = make_payloads or self._transfers
        self.acks: dict[tuple[int, Any], dict[int, Any]] = defaultdict(dict)
        self.proved: set = set()
        self.payloads: dict[int, tuple] = {}

    def _transfers(self, ctx: AdversaryContext, pid: int) -> tuple:
        c1, c2 = ctx.rng.sample(ctx.correct, 2) if len(ctx.correct) > 1 else (ctx.correct[0],) * 2
        return (
            TransferMessage(Transfer(pid, c1, self.amount, 1)),
            TransferMessage(Transfer(pid, c2, self.amount, 1)),
        )

    def setup(self, ctx: AdversaryContext) -> None:
        super().setup(ctx)
        self.quorum = quorum(ctx.n)
        for pid in sorted(ctx.byzantine):
            pair = self.make_payloads(ctx, pid)
            self.payloads[pid] = pair
            order = list(ctx.correct)
            ctx.rng.shuffle(order)
            half = len(order) // 2
            for i, dst in enumerate(order):
                payload = pair[0] if i < half else pair[1]
                self._send_initial(pid, dst, 1, payload)
            for payload in pair:
                for acker in sorted(ctx.byzantine):
                    self.acks[(pid, payload)][acker] = ctx.sign(acker, ack_statement(pid, 1, payload))

    def _send_initial(self, pid: int, dst: int, seq: int, payload) -> None:
        sig = self.ctx.sign(pid, initial_statement(pid, seq, payload))
        self.ctx.send(pid, dst, BcastMessage(Stage.INITIAL, pid, seq, payload, sig))

    def on_receive(self, pid: int, src: int, msg) -> None:
        if not isinstance(msg, BcastMessage):
            return
        ctx = self.ctx
        if msg.stage == Stage.INITIAL and msg.sender not in ctx.byzantine:
            sig = ctx.sign(pid, ack_statement(msg.sender, msg.seq, msg.payload))
            ctx.send(pid, msg.sender, BcastMessage(Stage.ACK, msg.sender, msg.seq, msg.payload, sig))
        elif msg.stage == Stage.ACK and msg.sender == pid and pid in self.payloads:
            if msg.payload not in self.payloads[pid] or msg.seq != 1:
                return
            if not ctx.verify(src, ack_statement(pid, 1, msg.payload), msg.sig):
                return
            collected = self.acks[(pid, msg.payload)]
            collected[src] = msg.sig
            if len(collected) >= self.quorum and (pid, msg.payload) not in self.proved:
                self.proved.add((pid, msg.payload))
                self._flood_proof(pid, msg.payload, collected)
                other = next(p for p in self.payloads[pid] if p != msg.payload)
                short = dict(list(self.acks[(pid, other)].items())[: self.quorum - 1])
                self._flood_proof(pid, other, short)

    def _flood_proof(self, pid: int, payload, acks: dict) -> None:
        proof = BcastMessage(Stage.PROOF, pid, 1, payload, acks=frozenset(acks.values()))
        for dst in range(self.ctx.n):
            self.ctx.send(pid, dst, proof)


class _EchoAdversaryBase(Adversary):
    """Shared plumbing for attacks on a double-echo instance with a Byzantine sender."""

    def __init__(self, messages=("m1", "m2")):
        self.messages = tuple(messages)

    def setup(self, ctx: AdversaryContext) -> None:
        super().setup(ctx)
        self.sender = min(ctx.byzantine)
        self.inst = (self.sender, 0)
        self.sends = {}
        self.gossip_sigs = {}
        for m in self.messages:
            send = Send(m, ctx.sign(self.sender, echo_statement(self.inst, m)))
            self.sends[m] = send
            self.gossip_sigs[m] = ctx.sign(self.sender, gossip_statement(self.inst, send))

    def gossip(self, pid: int, dst: int, m) -> None:
        self.ctx.send(pid, dst, Gossip(self.inst, self.sends[m], self.gossip_sigs[m]))

    def echo(self, pid: int, dst: int, m) -> None:
        self.ctx.send(pid, dst, Echo(self.inst, m, self.sends[m].signature))

    def ready(self, pid: int, dst: int, m) -> None:
        self.ctx.send(pid, dst, Ready(self.inst, m, self.sends[m].signature))


class SplitSender(_EchoAdversaryBase):
    """Conflicting-message attack on double echo.

    The Byzantine sender gossips ``m1`` to a ``split`` fraction of the correct
    processes and ``m2`` to the rest.  Every Byzantine process answers echo
    and ready subscriptions with ``favored`` (default ``m2``), acting like a
    correct process that is ready for it.
    """

    def __init__(self, split: float = 0.5, favored: int = 1, messages=("m1", "m2")):
        super().__init__(messages)
        self.split = split
        self.favored = self.messages[favored]
        self.group: dict[int, Any] = {}

    def setup(self, ctx: AdversaryContext) -> None:
        super().setup(ctx)
        order = list(ctx.correct)
        ctx.rng.shuffle(order)
        cut = round(self.split * len(order))
        for i, pid in enumerate(order):
            self.group[pid] = self.messages[0] if i < cut else self.messages[1]
        for pid in ctx.correct:
            self.gossip(self.sender, pid, self.group[pid])

    def on_receive(self, pid: int, src: int, msg) -> None:
        if src in self.ctx.byzantine:
            return
        if isinstance(msg, GossipSubscribe):
            self.gossip(pid, src, self.group[src])
        elif isinstance(msg, EchoSubscribe):
            self.echo(pid, src, self.favored)
        elif isinstance(msg, ReadySubscribe):
            self.ready(pid, src, self.favored)


class ReadyTrickle(_EchoAdversaryBase):
    """Totality attack: grow support for one message a single process at a time.

    The sender never gossips.  Byzantine processes subscribe to every correct
    process's Ready messages; every ``period`` time units they release Echo
    and Ready for ``m`` to one more correct subscriber, and stop as soon as a
    correct process is seen to be ready.
    """

    def __init__(self, period: int = 25, messages=("m",)):
        super().__init__(messages)
        self.period = period
        self.echo_subs: dict[int, set] = defaultdict(set)
        self.ready_subs: dict[int, set] = defaultdict(set)
        self.released: set[int] = set()
        self.observed = False

    def setup(self, ctx: AdversaryContext) -> None:
        super().setup(ctx)
        for pid in sorted(ctx.byzantine):
            for dst in ctx.correct:
                ctx.send(pid, dst, ReadySubscribe(self.inst))
        self.queue = list(ctx.correct)
        ctx.rng.shuffle(self.queue)
        ctx.set_timer(self.period, self._round)

    def _round(self) -> None:
        if self.observed or not self.queue:
            return
        target = self.queue.pop()
        self.released.add(target)
        m = self.messages[0]
        for pid in sorted(self.ctx.byzantine):
            if target in self.echo_subs[pid]:
                self.echo(pid, target, m)
            if target in self.ready_subs[pid]:
                self.ready(pid, target, m)
        self.ctx.set_timer(self.period, self._round)

    def on_receive(self, pid: int, src: int, msg) -> None:
        if src in self.ctx.byzantine:
            return
        if isinstance(msg, EchoSubscribe):
            self.echo_subs[pid].add(src)
            if src in self.released:
                self.echo(pid, src, self.messages[0])
        elif isinstance(msg, ReadySubscribe):
            self.ready_subs[pid].add(src)
            if src in self.released:
                self.ready(pid, src, self.messages[0])
        elif isinstance(msg, Ready):
            self.observed = True


ADVERSARIES = {
    "crash": CrashAdversary,
    "equivocate": Equivocator,
    "split": SplitSender,
    "trickle": ReadyTrickle,
}
