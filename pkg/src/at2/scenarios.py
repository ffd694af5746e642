"""Single-seed simulation trials with their invariant checks.

Each ``*_trial`` function builds one system from a seed, runs it to
quiescence and returns a small outcome record.  The outcome always carries
the trace digest so runs can be compared for reproducibility.
"""
from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

from .adversaries import CrashAdversary, Equivocator, ReadyTrickle, SplitSender
from .at2_mp import DetNode, ProbNode, Workload
from .broadcast_det import BroadcastNode
from .broadcast_prob import DoubleEchoNode, EchoParams, GossipNode, SequencedNode
from .simnet import Adversary, SimConfig, Simulator, auto_byzantine


def _byz_ids(n: int, byzantine) -> frozenset:
    """An int is a count (the highest ids); anything else is an explicit id set."""
    if isinstance(byzantine, int):
        return frozenset(range(n - byzantine, n))
    return frozenset(byzantine)


# --- AT2 over the quorum broadcast ---------------------------------------------------


@dataclass
class TransferOutcome:
    digest: str
    conflicting: int
    negative_balances: int
    hist_agree: bool
    unresolved: int
    order_ok: bool
    balances: dict
    successes: int
    delivered_messages: int
    applied: dict = field(default_factory=dict)

    @property
    def safe(self) -> bool:
        return self.conflicting == 0 and self.negative_balances == 0 and self.order_ok

    @property
    def live(self) -> bool:
        return self.hist_agree and self.unresolved == 0


def conflicting_pairs(engines) -> int:
    """Number of ``(source, seq)`` identities applied with different contents somewhere."""
    seen: dict[tuple[int, int], set] = defaultdict(set)
    for e in engines:
        for t in e.all_transfers():
            seen[t.ident].add(t)
    return sum(1 for ts in seen.values() if len(ts) > 1)


def _hist_view(engine) -> dict:
    return {a: frozenset(ts) for a, ts in engine.hist.items() if ts}


def _order_ok(nodes) -> bool:
    """At every process, the transfers applied from ``p`` are a prefix of what ``p`` issued."""
    for p, node in nodes.items():
        mine = [h.transfer for h in node.issued if h.transfer is not None]
        for other in nodes.values():
            seen = [t for t in other.engine.applied if t.source == p]
            if seen != mine[: len(seen)]:
                return False
    return True


def _transfer_outcome(sim, trace, export=None) -> TransferOutcome:
    if export is not None:
        trace.export(export)
    nodes = sim.handlers
    engines = [n.engine for n in nodes.values()]
    views = [_hist_view(e) for e in engines]
    return TransferOutcome(
        digest=trace.digest,
        conflicting=conflicting_pairs(engines),
        negative_balances=sum(e.negative_balances for e in engines),
        hist_agree=all(v == views[0] for v in views),
        unresolved=sum(n.unresolved for n in nodes.values()),
        order_ok=_order_ok(nodes),
        balances={p: n.engine.read(p) for p, n in sorted(nodes.items())},
        successes=sum(len(n.successes) for n in nodes.values()),
        delivered_messages=trace.delivered_messages,
        applied={p: len(n.engine.applied) for p, n in sorted(nodes.items())},
    )


def at2d_trial(
    n: int,
    byzantine,
    seed: int,
    adversary: str = "equivocate",
    workload: Optional[Workload] = None,
    initial: int = 10,
    trace: str = "hash",
    max_delay: int = 10,
    export: Optional[str] = None,
) -> TransferOutcome:
    """``byzantine`` is a count of highest ids or an explicit id set."""
    workload = workload or Workload()
    config = SimConfig(n=n, byzantine=_byz_ids(n, byzantine), seed=seed, max_delay=max_delay)
    q0 = {p: initial for p in range(n)}
    adv = Equivocator(amount=initial) if adversary == "equivocate" else CrashAdversary()
    sim = Simulator(config, adv, trace)
    rng = random.Random(seed)
    for pid in config.correct:
        script = workload.script(rng, pid, n)
        sim.add_process(pid, lambda ctx, s=script: DetNode(ctx, q0, s))
    return _transfer_outcome(sim, sim.run(), export)


def at2p_trial(
    n: int,
    f: float,
    params: EchoParams,
    seed: int,
    workload: Optional[Workload] = None,
    initial: int = 10,
    trace: str = "hash",
    byzantine=None,
    max_delay: int = 10,
    export: Optional[str] = None,
) -> TransferOutcome:
    """Byzantine processes stay silent; by default they are ``auto_byzantine(n, f)``."""
    workload = workload or Workload(count=2)
    byz = auto_byzantine(n, f) if byzantine is None else _byz_ids(n, byzantine)
    config = SimConfig(n=n, byzantine=byz, seed=seed, f=f, max_delay=max_delay)
    q0 = {p: initial for p in range(n)}
    sim = Simulator(config, CrashAdversary(), trace)
    rng = random.Random(seed)
    for pid in config.correct:
        script = workload.script(rng, pid, n)
        sim.add_process(pid, lambda ctx, s=script: ProbNode(ctx, q0, params, s))
    return _transfer_outcome(sim, sim.run(), export)


# --- bare quorum broadcast ------------------------------------------------------------


@dataclass
class BroadcastOutcome:
    digest: str
    prefix_ok: bool
    agreement: bool
    validity: bool
    duplicates: int


def _equivocating_strings(ctx, pid):
    return (f"x{pid}", f"y{pid}")


def det_broadcast_trial(n: int, byzantine, seed: int, per_sender: int = 3, trace: str = "hash"):
    config = SimConfig(n=n, byzantine=_byz_ids(n, byzantine), seed=seed)
    sim = Simulator(config, Equivocator(make_payloads=_equivocating_strings), trace)
    for pid in config.correct:
        payloads = [f"p{pid}.{i}" for i in range(per_sender)]
        sim.add_process(pid, lambda ctx, ps=payloads: BroadcastNode(ctx, ps))
    out = sim.run()
    nodes = sim.handlers
    prefix_ok = True
    agreement = True
    duplicates = 0
    for source in range(n):
        seqs = [[p for s, p in node.deliveries if s == source] for node in nodes.values()]
        for a in seqs:
            for b in seqs:
                k = min(len(a), len(b))
                if a[:k] != b[:k]:
                    prefix_ok = False
            if a != seqs[0]:
                agreement = False
        for node in nodes.values():
            logged = [(s, q) for s, q, _ in node.bcast.log if s == source]
            duplicates += len(logged) - len(set(logged))
    validity = all(
        [p for s, p in node.deliveries if s == pid] == node.payloads for pid, node in nodes.items()
    )
    return BroadcastOutcome(out.digest, prefix_ok, agreement, validity, duplicates)


# --- probabilistic layers -------------------------------------------------------------


@dataclass
class GossipOutcome:
    digest: str
    delivered: int
    correct: int

    @property
    def totality_violated(self) -> bool:
        return 0 < self.delivered < self.correct


def gossip_trial(n: int, f: float, G: float, seed: int, trace: str = "none") -> GossipOutcome:
    config = SimConfig(n=n, byzantine=auto_byzantine(n, f), seed=seed, f=f)
    sim = Simulator(config, CrashAdversary(), trace)
    for pid in config.correct:
        sim.add_process(pid, lambda ctx: GossipNode(ctx, 0, G))
    out = sim.run()
    delivered = sum(1 for h in sim.handlers.values() if h.deliveries)
    return GossipOutcome(out.digest, delivered, len(config.correct))


@dataclass
class EchoOutcome:
    digest: str
    delivered: dict
    correct: int
    e_ready: dict = field(default_factory=dict)

    @property
    def consistency_violated(self) -> bool:
        return len(set(self.delivered.values())) > 1

    @property
    def totality_violated(self) -> bool:
        return 0 < len(self.delivered) < self.correct

    @property
    def validity_violated(self) -> bool:
        return len(self.delivered) == 0


def echo_trial(
    n: int,
    f: float,
    params: EchoParams,
    seed: int,
    adversary: Optional[Adversary] = None,
    byzantine_sender: bool = False,
    trace: str = "none",
) -> EchoOutcome:
    """One double-echo instance.  The sender is process 0, or the lowest
    Byzantine id when ``byzantine_sender`` is set."""
    byz = auto_byzantine(n, f)
    if byzantine_sender and not byz:
        raise ValueError("a Byzantine sender needs f * n >= 1")
    sender = min(byz) if byzantine_sender else 0
    config = SimConfig(n=n, byzantine=byz, seed=seed, f=f)
    sim = Simulator(config, adversary or CrashAdversary(), trace)
    for pid in config.correct:
        sim.add_process(pid, lambda ctx: DoubleEchoNode(ctx, sender, params))
    out = sim.run()
    delivered = {p: h.deliveries[0] for p, h in sim.handlers.items() if h.deliveries}
    e_ready = {
        p: h.instance.ready[0] for p, h in sim.handlers.items() if h.instance.e_ready
    }
    return EchoOutcome(out.digest, delivered, len(config.correct), e_ready)


def split_trial(n, f, params, seed, split=0.5, trace="none") -> EchoOutcome:
    return echo_trial(n, f, params, seed, SplitSender(split=split), True, trace)


def trickle_trial(n, f, params, seed, period=25, trace="none") -> EchoOutcome:
    return echo_trial(n, f, params, seed, ReadyTrickle(period=period), True, trace)


@dataclass
class SequenceOutcome:
    digest: str
    complete: bool
    identical: bool
    sequences: dict


def sequenced_trial(n: int, params: EchoParams, seed: int, messages: int = 5, trace: str = "none"):
    """All-correct system; process 0 broadcasts ``messages`` payloads."""
    config = SimConfig(n=n, seed=seed)
    script = [f"m{i}" for i in range(messages)]
    sim = Simulator(config, None, trace)
    for pid in config.correct:
        sim.add_process(pid, lambda ctx: SequencedNode(ctx, [0], params, script))
    out = sim.run()
    seqs = {p: tuple(h.deliveries[0]) for p, h in sim.handlers.items()}
    complete = all(list(s) == script for s in seqs.values())
    longest = max(seqs.values(), key=len)
    identical = all(s == longest[: len(s)] for s in seqs.values())
    return SequenceOutcome(out.digest, complete, identical, seqs)
