"""Sample-based probabilistic broadcasts.

Three layers, each a single-sender state machine driven by simnet messages:

* :class:`GossipInstance`: Erdős-Rényi gossip.  Each process subscribes to a
  Poisson-sized random set of peers; subscriptions are reciprocated and the
  signed message floods the resulting graph.
* :class:`DoubleEchoInstance`: gossip delivers a Send; processes Echo it to
  their echo subscribers, become Ready on enough Echoes (or Readies) from
  their samples, and deliver on enough Readies from their delivery sample.
* :class:`SequencedInstance`: one double-echo instance per index, delivered
  strictly in index order.

Samples for double-echo are drawn with replacement.  A process appearing in
a sample several times fills all of its slots with one reply, so it counts
with multiplicity toward the thresholds.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Any, Callable, Hashable, Optional

from .simnet import ProcessContext, Signature

Instance = tuple[int, int]  # (sender, index)


# --- wire messages ---------------------------------------------------------------


@dataclass(frozen=True)
class GossipSubscribe:
    inst: Instance


@dataclass(frozen=True)
class Gossip:
    inst: Instance
    message: Any
    signature: Signature


@dataclass(frozen=True)
class EchoSubscribe:
    inst: Instance


@dataclass(frozen=True)
class ReadySubscribe:
    inst: Instance


@dataclass(frozen=True)
class Send:
    """The double-echo payload carried by gossip: message plus the sender's signature."""

    message: Any
    signature: Signature


@dataclass(frozen=True)
class Echo:
    inst: Instance
    message: Any
    signature: Signature


@dataclass(frozen=True)
class Ready:
    inst: Instance
    message: Any
    signature: Signature


def gossip_statement(inst: Instance, message) -> tuple:
    return ("pb", inst, message)


def echo_statement(inst: Instance, message) -> tuple:
    return ("pcb", inst, message)


# --- parameters ----------------------------------------------------------------


@dataclass(frozen=True)
class EchoParams:
    G: float
    E: int
    E_hat: int
    R: int
    R_hat: int
    D: int
    D_hat: int

    def __post_init__(self) -> None:
        for size, threshold, name in (
            (self.E, self.E_hat, "E"),
            (self.R, self.R_hat, "R"),
            (self.D, self.D_hat, "D"),
        ):
            if size < 1:
                raise ValueError(f"{name} must be >= 1")
            if not 1 <= threshold <= size:
                raise ValueError(f"{name}_hat must lie in [1, {name}]")
        if self.G < 0:
            raise ValueError("G must be non-negative")


# --- gossip ----------------------------------------------------------------------


class GossipInstance:
    def __init__(
        self,
        ctx: ProcessContext,
        inst: Instance,
        G: float,
        on_deliver: Callable[[Any], None],
    ):
        self.ctx = ctx
        self.inst = inst
        self.sender = inst[0]
        self.on_deliver = on_deliver
        size = min(ctx.poisson(G), ctx.n)
        self.sample: set[int] = set(ctx.omega(size))
        self.delivered: Optional[tuple[Any, Signature]] = None
        for pid in sorted(self.sample):
            ctx.send(pid, GossipSubscribe(inst))

    def on_subscribe(self, src: int) -> None:
        if self.delivered is not None:
            message, signature = self.delivered
            self.ctx.send(src, Gossip(self.inst, message, signature))
        self.sample.add(src)

    def _dispatch(self, message, signature: Signature) -> None:
        if self.delivered is not None:
            return
        self.delivered = (message, signature)
        for pid in sorted(self.sample):
            self.ctx.send(pid, Gossip(self.inst, message, signature))
        self.on_deliver(message)

    def broadcast(self, message) -> None:
        self._dispatch(message, self.ctx.sign(gossip_statement(self.inst, message)))

    def on_gossip(self, msg: Gossip) -> None:
        if self.ctx.verify(self.sender, gossip_statement(self.inst, msg.message), msg.signature):
            self._dispatch(msg.message, msg.signature)

    def on_message(self, src: int, msg) -> None:
        if isinstance(msg, GossipSubscribe):
            self.on_subscribe(src)
        elif isinstance(msg, Gossip):
            self.on_gossip(msg)


# --- double echo -------------------------------------------------------------------


class DoubleEchoInstance:
    def __init__(
        self,
        ctx: ProcessContext,
        inst: Instance,
        params: EchoParams,
        on_deliver: Callable[[Any], None],
    ):
        self.ctx = ctx
        self.inst = inst
        self.sender = inst[0]
        self.params = params
        self.on_deliver = on_deliver
        self.pb = GossipInstance(ctx, inst, params.G, self._on_pb_deliver)

        self.echo: Optional[tuple[Any, Signature]] = None
        self.ready: Optional[tuple[Any, Signature]] = None
        self.delivered = False
        self.delivered_message = None

        self.echo_sample = self._sample(EchoSubscribe(inst), params.E)
        self.ready_sample = self._sample(ReadySubscribe(inst), params.R)
        self.delivery_sample = self._sample(ReadySubscribe(inst), params.D)
        self.replies_echo: dict[int, tuple] = {}
        self.replies_ready: dict[int, tuple] = {}
        self.replies_delivery: dict[int, tuple] = {}
        self.echo_tally: Counter = Counter()
        self.ready_tally: Counter = Counter()
        self.delivery_tally: Counter = Counter()

        self.echo_subscribers: set[int] = set()
        self.ready_subscribers: set[int] = set()

    def _sample(self, subscribe, size: int) -> Counter:
        """Draw ``size`` ids with replacement; subscribe once to each distinct id."""
        drawn = Counter(self.ctx.omega_one() for _ in range(size))
        for pid in sorted(drawn):
            self.ctx.send(pid, subscribe)
        return drawn

    # -- subscriptions --

    def on_echo_subscribe(self, src: int) -> None:
        if self.echo is not None:
            self.ctx.send(src, Echo(self.inst, *self.echo))
        self.echo_subscribers.add(src)

    def on_ready_subscribe(self, src: int) -> None:
        if self.ready is not None:
            self.ctx.send(src, Ready(self.inst, *self.ready))
        self.ready_subscribers.add(src)

    # -- sender --

    def broadcast(self, message) -> None:
        signature = self.ctx.sign(echo_statement(self.inst, message))
        self.pb.broadcast(Send(message, signature))

    # -- echo / ready / deliver --

    def _signed(self, message, signature) -> bool:
        return self.ctx.verify(self.sender, echo_statement(self.inst, message), signature)

    def _on_pb_deliver(self, send) -> None:
        if not isinstance(send, Send) or not self._signed(send.message, send.signature):
            return
        self.echo = (send.message, send.signature)
        for pid in sorted(self.echo_subscribers):
            self.ctx.send(pid, Echo(self.inst, send.message, send.signature))

    def on_echo(self, src: int, msg: Echo) -> None:
        if src not in self.echo_sample or src in self.replies_echo:
            return
        if not self._signed(msg.message, msg.signature):
            return
        pair = (msg.message, msg.signature)
        self.replies_echo[src] = pair
        self.echo_tally[pair] += self.echo_sample[src]
        if self.echo_tally[pair] >= self.params.E_hat:
            self._become_ready(pair)

    def on_ready(self, src: int, msg: Ready) -> None:
        if not self._signed(msg.message, msg.signature):
            return
        pair = (msg.message, msg.signature)
        if src in self.ready_sample and src not in self.replies_ready:
            self.replies_ready[src] = pair
            self.ready_tally[pair] += self.ready_sample[src]
            if self.ready_tally[pair] >= self.params.R_hat:
                self._become_ready(pair)
        if src in self.delivery_sample and src not in self.replies_delivery:
            self.replies_delivery[src] = pair
            self.delivery_tally[pair] += self.delivery_sample[src]
            if self.delivery_tally[pair] >= self.params.D_hat and not self.delivered:
                self.delivered = True
                self.delivered_message = pair[0]
                self.on_deliver(pair[0])

    def _become_ready(self, pair) -> None:
        if self.ready is not None:
            return
        self.ready = pair
        for pid in sorted(self.ready_subscribers):
            self.ctx.send(pid, Ready(self.inst, *pair))

    @property
    def e_ready(self) -> bool:
        """Ready because of Echoes (as opposed to Ready feedback)."""
        return self.ready is not None and self.echo_tally[self.ready] >= self.params.E_hat

    def on_message(self, src: int, msg) -> None:
        if isinstance(msg, (GossipSubscribe, Gossip)):
            self.pb.on_message(src, msg)
        elif isinstance(msg, EchoSubscribe):
            self.on_echo_subscribe(src)
        elif isinstance(msg, ReadySubscribe):
            self.on_ready_subscribe(src)
        elif isinstance(msg, Echo):
            self.on_echo(src, msg)
        elif isinstance(msg, Ready):
            self.on_ready(src, msg)


# --- sequenced double echo -----------------------------------------------------------


class SequencedInstance:
    """Ordered multi-shot broadcast from one sender.

    Messages addressed to an index this process has not initialised yet are
    held back and replayed when that index is initialised.
    """

    def __init__(
        self,
        ctx: ProcessContext,
        sender: int,
        params: EchoParams,
        on_deliver: Callable[[Any], None],
    ):
        self.ctx = ctx
        self.sender = sender
        self.params = params
        self.on_deliver = on_deliver
        self.next = 0
        self.expected = 0
        self.messages: dict[int, Any] = {}
        self.instances: dict[int, DoubleEchoInstance] = {}
        self.held: dict[int, list] = {}
        self.delivered: list = []
        self._init_instance(0)

    def _init_instance(self, index: int) -> None:
        self.instances[index] = DoubleEchoInstance(
            self.ctx, (self.sender, index), self.params, lambda m, i=index: self._on_pcb(i, m)
        )
        for src, msg in self.held.pop(index, ()):
            self.instances[index].on_message(src, msg)

    def _expand(self) -> None:
        self.next += 1
        self._init_instance(self.next)

    def broadcast(self, message) -> None:
        if self.ctx.pid != self.sender:
            raise RuntimeError("only the designated sender broadcasts")
        self.instances[self.next].broadcast(message)
        self._expand()

    def _on_pcb(self, index: int, message) -> None:
        self.messages[index] = message
        while self.expected in self.messages:
            m = self.messages[self.expected]
            self.delivered.append(m)
            self.expected += 1
            self.on_deliver(m)
            if self.ctx.pid != self.sender:
                self._expand()

    def on_message(self, src: int, msg) -> None:
        index = msg.inst[1]
        inst = self.instances.get(index)
        if inst is not None:
            inst.on_message(src, msg)
        elif index > self.next:
            self.held.setdefault(index, []).append((src, msg))


# --- bare nodes used by simulations --------------------------------------------------


class GossipNode:
    """Runs one gossip instance; ``ctx.pid == sender`` broadcasts ``message`` at start."""

    def __init__(self, ctx: ProcessContext, sender: int, G: float, message: Hashable = "m"):
        self.ctx = ctx
        self.message = message
        self.deliveries: list = []
        self.instance = GossipInstance(ctx, (sender, 0), G, self._deliver)

    def start(self) -> None:
        if self.ctx.pid == self.instance.sender:
            self.instance.broadcast(self.message)

    def _deliver(self, message) -> None:
        self.deliveries.append(message)

    def on_message(self, src: int, msg) -> None:
        self.instance.on_message(src, msg)


class DoubleEchoNode:
    def __init__(self, ctx: ProcessContext, sender: int, params: EchoParams, message: Hashable = "m"):
        self.ctx = ctx
        self.message = message
        self.deliveries: list = []
        self.instance = DoubleEchoInstance(ctx, (sender, 0), params, self._deliver)

    def start(self) -> None:
        if self.ctx.pid == self.instance.sender:
            self.instance.broadcast(self.message)

    def _deliver(self, message) -> None:
        self.deliveries.append(message)
        self.ctx.record("deliver", message)

    def on_message(self, src: int, msg) -> None:
        self.instance.on_message(src, msg)


class SequencedNode:
    """One sequenced instance per sender in ``senders``; broadcasts ``script`` if it is one."""

    def __init__(self, ctx: ProcessContext, senders, params: EchoParams, script=()):
        self.ctx = ctx
        self.script = list(script)
        self.deliveries: dict[int, list] = {s: [] for s in senders}
        self.instances = {
            s: SequencedInstance(ctx, s, params, lambda m, s=s: self._deliver(s, m)) for s in senders
        }

    def start(self) -> None:
        if self.ctx.pid in self.instances:
            for m in self.script:
                self.instances[self.ctx.pid].broadcast(m)

    def _deliver(self, sender: int, message) -> None:
        self.deliveries[sender].append(message)
        self.ctx.record("deliver", (sender, message))

    def on_message(self, src: int, msg) -> None:
        inst = self.instances.get(msg.inst[0])
        if inst is not None:
            inst.on_message(src, msg)
