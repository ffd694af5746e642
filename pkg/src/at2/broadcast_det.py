"""Signed, quorum-acknowledged secure broadcast.

A sender tags each payload with the next sequence number and floods it as an
INITIAL.  A process acknowledges the first payload it sees for a given
``(sender, seq)`` once it has accepted everything the sender numbered lower.
With ``floor(2N/3) + 1`` acknowledgements the sender floods a PROOF; every
process re-floods a valid PROOF once and delivers it in sequence order.
"""
from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass
from typing import Any, Callable, Optional

from .simnet import ProcessContext, Signature


def quorum(n: int) -> int:
    return 2 * n // 3 + 1


class Stage(enum.IntEnum):
    INITIAL = 0
    ACK = 1
    PROOF = 2


@dataclass(frozen=True)
class BcastMessage:
    """One wire message.

    ``sig`` is the sender's signature on an INITIAL or the acknowledger's on
    an ACK; ``acks`` holds the acknowledgement signatures carried by a PROOF.
    """

    stage: Stage
    sender: int
    seq: int
    payload: Any
    sig: Optional[Signature] = None
    acks: frozenset = frozenset()


def initial_statement(sender: int, seq: int, payload) -> tuple:
    return ("initial", sender, seq, payload)


def ack_statement(sender: int, seq: int, payload) -> tuple:
    return ("ack", sender, seq, payload)


def proof_is_valid(msg: BcastMessage, n: int, verify: Callable) -> bool:
    statement = ack_statement(msg.sender, msg.seq, msg.payload)
    signers = set()
    for sig in msg.acks:
        if not isinstance(sig, Signature) or not 0 <= sig.signer < n:
            return False
        if not verify(sig.signer, statement, sig):
            return False
        signers.add(sig.signer)
    return len(signers) >= quorum(n)


class DeterministicBroadcast:
    """Per-process state machine.  ``on_deliver(sender, payload)`` fires once per
    ``(sender, seq)`` in per-sender sequence order."""

    def __init__(self, ctx: ProcessContext, on_deliver: Callable[[int, Any], None]):
        self.ctx = ctx
        self.n = ctx.n
        self.on_deliver = on_deliver
        self.next_seq = 0
        # receiver side
        self.first_seen: dict[tuple[int, int], Any] = {}
        self.accepted: dict[int, int] = defaultdict(int)
        # sender side
        self.own: dict[int, Any] = {}
        self.acks: dict[int, dict[int, Signature]] = defaultdict(dict)
        self.proof_sent: set[int] = set()
        # delivery side
        self.proofs_seen: set[tuple[int, int]] = set()
        self.ready: dict[int, dict[int, Any]] = defaultdict(dict)
        self.delivered_upto: dict[int, int] = defaultdict(int)
        self.log: list[tuple[int, int, Any]] = []

    def broadcast(self, payload) -> int:
        self.next_seq += 1
        seq = self.next_seq
        self.own[seq] = payload
        sig = self.ctx.sign(initial_statement(self.ctx.pid, seq, payload))
        self.ctx.send_all(BcastMessage(Stage.INITIAL, self.ctx.pid, seq, payload, sig))
        return seq

    def on_message(self, src: int, msg: BcastMessage) -> None:
        if msg.stage == Stage.INITIAL:
            self._on_initial(msg)
        elif msg.stage == Stage.ACK:
            self._on_ack(src, msg)
        elif msg.stage == Stage.PROOF:
            self._on_proof(msg)

    def _on_initial(self, msg: BcastMessage) -> None:
        if msg.seq < 1 or not 0 <= msg.sender < self.n:
            return
        statement = initial_statement(msg.sender, msg.seq, msg.payload)
        if not self.ctx.verify(msg.sender, statement, msg.sig):
            return
        key = (msg.sender, msg.seq)
        if key in self.first_seen:
            return
        self.first_seen[key] = msg.payload
        self.ctx.send_all(msg)
        self._acknowledge(msg.sender)

    def _acknowledge(self, sender: int) -> None:
        while True:
            seq = self.accepted[sender] + 1
            payload = self.first_seen.get((sender, seq), _MISSING)
            if payload is _MISSING:
                return
            self.accepted[sender] = seq
            sig = self.ctx.sign(ack_statement(sender, seq, payload))
            self.ctx.send(sender, BcastMessage(Stage.ACK, sender, seq, payload, sig))

    def _on_ack(self, src: int, msg: BcastMessage) -> None:
        if msg.sender != self.ctx.pid or msg.seq not in self.own:
            return
        payload = self.own[msg.seq]
        if msg.payload != payload:
            return
        if not self.ctx.verify(src, ack_statement(msg.sender, msg.seq, payload), msg.sig):
            return
        collected = self.acks[msg.seq]
        collected[src] = msg.sig
        if len(collected) >= quorum(self.n) and msg.seq not in self.proof_sent:
            self.proof_sent.add(msg.seq)
            proof = BcastMessage(
                Stage.PROOF, msg.sender, msg.seq, payload, acks=frozenset(collected.values())
            )
            self.ctx.send_all(proof)

    def _on_proof(self, msg: BcastMessage) -> None:
        key = (msg.sender, msg.seq)
        if key in self.proofs_seen or msg.seq < 1:
            return
        if not proof_is_valid(msg, self.n, self.ctx.verify):
            return
        self.proofs_seen.add(key)
        self.ctx.send_all(msg)
        self.ready[msg.sender][msg.seq] = msg.payload
        self._deliver_in_order(msg.sender)

    def _deliver_in_order(self, sender: int) -> None:
        waiting = self.ready[sender]
        while self.delivered_upto[sender] + 1 in waiting:
            seq = self.delivered_upto[sender] + 1
            payload = waiting.pop(seq)
            self.delivered_upto[sender] = seq
            self.log.append((sender, seq, payload))
            self.on_deliver(sender, payload)
        # a delivered payload counts as accepted for acknowledging later ones
        if self.delivered_upto[sender] > self.accepted[sender]:
            self.accepted[sender] = self.delivered_upto[sender]
            self._acknowledge(sender)

    def delivered_from(self, sender: int) -> list:
        return [p for s, _, p in self.log if s == sender]


_MISSING = object()


class BroadcastNode:
    """Bare broadcast process used by tests: broadcasts a fixed list of payloads."""

    def __init__(self, ctx: ProcessContext, payloads=()):
        self.ctx = ctx
        self.payloads = list(payloads)
        self.bcast = DeterministicBroadcast(ctx, self._deliver)
        self.deliveries: list[tuple[int, Any]] = []

    def start(self) -> None:
        for p in self.payloads:
            self.bcast.broadcast(p)

    def on_message(self, src: int, msg) -> None:
        self.bcast.on_message(src, msg)

    def _deliver(self, sender: int, payload) -> None:
        self.deliveries.append((sender, payload))
        self.ctx.record("deliver", (sender, payload))
