"""Deterministic discrete-event simulation of an asynchronous Byzantine network.

The harness owns everything the adversary must not touch: signing keys,
correct processes' sampling streams and their message payloads.  Correct
processes run protocol handlers; Byzantine processes are all driven by one
:class:`Adversary`.

Logical time is an integer.  Events are popped in ``(time, sequence)`` order
and each pop runs exactly one handler to completion, so a fixed seed fixes
the whole run.
"""
from __future__ import annotations

import csv
import dataclasses
import enum
import io
import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Protocol

import numpy as np


class SimulationError(RuntimeError):
    pass


class ForgeryError(SimulationError):
    """The adversary tried to act or sign as a correct process."""


class ConfigError(ValueError):
    pass


# --- configuration -----------------------------------------------------------


def correct_count(n: int, f: float) -> int:
    """``ceil((1 - f) * n)``, robust to float noise in ``f * n``."""
    return n - int(np.floor(f * n + 1e-9))


@dataclass
class SimConfig:
    n: int
    byzantine: frozenset = frozenset()
    seed: int = 0
    max_delay: int = 10
    fifo: bool = False
    q0: dict = field(default_factory=dict)
    f: Optional[float] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.byzantine = frozenset(self.byzantine)
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if any(not 0 <= p < self.n for p in self.byzantine):
            raise ConfigError("byzantine ids must lie in [0, n)")
        if self.f is not None:
            if not 0 <= self.f < 1:
                raise ConfigError("f must lie in [0, 1)")
            if len(self.byzantine) > int(np.floor(self.f * self.n + 1e-9)):
                raise ConfigError(f"{len(self.byzantine)} byzantine processes exceed f*n")
        if self.max_delay < 1:
            raise ConfigError("max_delay must be >= 1")

    @property
    def correct(self) -> list[int]:
        return [p for p in range(self.n) if p not in self.byzantine]


def auto_byzantine(n: int, f: float) -> frozenset:
    """The ``floor(f n)`` highest process ids."""
    count = n - correct_count(n, f)
    return frozenset(range(n - count, n))


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_byzantine(value: str, n: int, f: Optional[float]) -> frozenset:
    value = value.strip()
    if value == "auto":
        if f is None:
            raise ConfigError("byzantine=auto needs f")
        return auto_byzantine(n, f)
    if not value:
        return frozenset()
    try:
        return frozenset(int(v) for v in value.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad byzantine list {value!r}") from exc


# --- signatures ----------------------------------------------------------------


@dataclass(frozen=True)
class Signature:
    signer: int
    token: int


class Keyring:
    """Simulated unforgeable signatures.

    ``sign`` draws a token from a stream only the harness holds and files it
    under ``(signer, message)``; ``verify`` is a table lookup.  Messages must
    be hashable.
    """

    def __init__(self, seed: int):
        self._rng = random.Random(_derive(seed, "keyring"))
        self._table: dict[tuple[int, Any], int] = {}

    def sign(self, signer: int, message) -> Signature:
        key = (signer, message)
        token = self._table.get(key)
        if token is None:
            token = self._rng.getrandbits(63)
            self._table[key] = token
        return Signature(signer, token)

    def verify(self, signer: int, message, signature) -> bool:
        if not isinstance(signature, Signature) or signature.signer != signer:
            return False
        return self._table.get((signer, message)) == signature.token


def _derive(seed: int, label: str) -> int:
    digest = hashlib.blake2b(f"{seed}/{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


# --- canonical encoding (trace hashing) ------------------------------------------


def canonical(obj) -> str:
    """Deterministic text form; set members are sorted so iteration order never leaks."""
    if isinstance(obj, (frozenset, set)):
        return "{" + ",".join(sorted(canonical(x) for x in obj)) + "}"
    if isinstance(obj, (tuple, list)):
        return "(" + ",".join(canonical(x) for x in obj) + ")"
    if isinstance(obj, dict):
        items = sorted((canonical(k), canonical(v)) for k, v in obj.items())
        return "{" + ",".join(f"{k}:{v}" for k, v in items) + "}"
    if isinstance(obj, enum.Enum):
        return obj.name
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        inner = ",".join(canonical(getattr(obj, f.name)) for f in dataclasses.fields(obj))
        return f"{type(obj).__name__}[{inner}]"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    return repr(obj)


# --- adversary-facing views ----------------------------------------------------


@dataclass(frozen=True)
class LinkMeta:
    """What the adversary sees of a correct-to-correct message: endpoints, size, time."""

    src: int
    dst: int
    size: int
    time: int


@dataclass(frozen=True)
class ObservedMessage:
    """A message with a Byzantine endpoint, shown in full."""

    src: int
    dst: int
    size: int
    time: int
    payload: Any


class Adversary:
    """Base adversary: Byzantine processes crash at start; default random delays.

    Subclasses override the hooks.  ``delay`` returns ``None`` to keep the
    harness's default delay.
    """

    #: set to ``True`` to have ``delay`` called for every message
    controls_delays = False

    def setup(self, ctx: "AdversaryContext") -> None:
        self.ctx = ctx

    def on_receive(self, pid: int, src: int, msg) -> None:
        """A message reached Byzantine process ``pid``."""

    def delay(self, meta) -> Optional[int]:
        return None


class AdversaryContext:
    """Capabilities handed to the adversary; it cannot act as a correct process."""

    def __init__(self, sim: "Simulator"):
        self._sim = sim
        self.n = sim.config.n
        self.byzantine = sim.config.byzantine
        self.correct = sim.config.correct
        self.rng = random.Random(_derive(sim.config.seed, "adversary"))
        self.params = dict(sim.config.params)

    @property
    def now(self) -> int:
        return self._sim.now

    def _check(self, pid: int) -> None:
        if pid not in self.byzantine:
            raise ForgeryError(f"adversary cannot act as correct process {pid}")

    def send(self, as_pid: int, dst: int, msg) -> None:
        self._check(as_pid)
        self._sim._send(as_pid, dst, msg)

    def sign(self, as_pid: int, message) -> Signature:
        self._check(as_pid)
        return self._sim.keyring.sign(as_pid, message)

    def verify(self, signer: int, message, signature) -> bool:
        return self._sim.keyring.verify(signer, message, signature)

    def set_timer(self, delay: int, callback: Callable[[], None]) -> None:
        self._sim._timer(-1, delay, callback)

    def record(self, kind: str, detail) -> None:
        self._sim.record_app(-1, kind, detail)


# --- correct-process context -----------------------------------------------------


class ProcessContext:
    """Everything a correct protocol handler may use."""

    def __init__(self, sim: "Simulator", pid: int):
        self._sim = sim
        self.pid = pid
        self.n = sim.config.n
        self._rng = np.random.Generator(np.random.PCG64(_derive(sim.config.seed, f"proc{pid}")))
        self.params = dict(sim.config.params)

    @property
    def now(self) -> int:
        return self._sim.now

    def send(self, dst: int, msg) -> None:
        self._sim._send(self.pid, dst, msg)

    def send_all(self, msg) -> None:
        for dst in range(self.n):
            self._sim._send(self.pid, dst, msg)

    def sign(self, message) -> Signature:
        return self._sim.keyring.sign(self.pid, message)

    def verify(self, signer: int, message, signature) -> bool:
        return self._sim.keyring.verify(signer, message, signature)

    def omega(self, count: int) -> list[int]:
        """``count`` distinct ids uniformly from all processes (private stream)."""
        if count > self.n:
            raise ValueError(f"cannot sample {count} distinct ids from {self.n}")
        if count < 0:
            raise ValueError("count must be non-negative")
        return [int(x) for x in self._rng.choice(self.n, size=count, replace=False)]

    def omega_one(self) -> int:
        return int(self._rng.integers(self.n))

    def poisson(self, mean: float) -> int:
        return int(self._rng.poisson(mean))

    def set_timer(self, delay: int, callback: Callable[[], None]) -> None:
        self._sim._timer(self.pid, delay, callback)

    def record(self, kind: str, detail) -> None:
        self._sim.record_app(self.pid, kind, detail)


def omega(ctx: ProcessContext, n: int) -> list[int]:
    return ctx.omega(n)


class Handler(Protocol):
    def start(self) -> None: ...

    def on_message(self, src: int, msg) -> None: ...


# --- the event loop --------------------------------------------------------------

_MSG = 0
_TIMER = 1


@dataclass
class SimTrace:
    digest: str
    events: list[tuple]
    app_events: list[tuple]
    delivered_messages: int
    end_time: int
    handlers: dict[int, Any]

    def lines(self) -> list[str]:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerows(self.events)
        return buf.getvalue().splitlines()

    def export(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("time", "from", "to", "kind", "detail"))
            writer.writerows(self.events)


class Simulator:
    """Event loop.  ``trace`` is ``"full"`` (keep records), ``"hash"`` or ``"none"``."""

    def __init__(self, config: SimConfig, adversary: Optional[Adversary] = None, trace: str = "hash"):
        if trace not in ("full", "hash", "none"):
            raise ValueError(f"unknown trace level {trace!r}")
        self.config = config
        self.adversary = adversary or Adversary()
        self.keyring = Keyring(config.seed)
        self.now = 0
        self._queue: list = []
        self._seq = 0
        self._delay_rng = random.Random(_derive(config.seed, "delays"))
        self._last_on_link: dict[tuple[int, int], int] = {}
        self._trace = trace
        self._hash = hashlib.sha256()
        self.events: list[tuple] = []
        self.app_events: list[tuple] = []
        self.delivered = 0
        self.handlers: dict[int, Any] = {}
        # message objects are often sent to many destinations; encode each once
        self._encoded: dict[int, tuple[Any, str]] = {}
        self.contexts: dict[int, ProcessContext] = {}
        self.adversary_ctx = AdversaryContext(self)

    def add_process(self, pid: int, factory: Callable[[ProcessContext], Any]) -> Any:
        if pid in self.config.byzantine:
            raise ConfigError(f"process {pid} is byzantine")
        ctx = ProcessContext(self, pid)
        self.contexts[pid] = ctx
        handler = factory(ctx)
        self.handlers[pid] = handler
        return handler

    # -- internals used by contexts --

    def _push(self, at: int, kind: int, a, b, c) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (at, self._seq, kind, a, b, c))

    def _send(self, src: int, dst: int, msg) -> None:
        if not 0 <= dst < self.config.n:
            raise SimulationError(f"no such process {dst}")
        delay = None
        adv = self.adversary
        if adv.controls_delays:
            byz = self.config.byzantine
            size = len(self._encode(msg))
            if src in byz or dst in byz:
                meta = ObservedMessage(src, dst, size, self.now, msg)
            else:
                meta = LinkMeta(src, dst, size, self.now)
            delay = adv.delay(meta)
        if delay is None:
            delay = self._delay_rng.randint(1, self.config.max_delay)
        elif not isinstance(delay, (int, np.integer)) or isinstance(delay, bool) or delay < 0:
            raise SimulationError(f"adversary returned invalid delay {delay!r}")
        at = self.now + int(delay)
        if self.config.fifo:
            link = (src, dst)
            at = max(at, self._last_on_link.get(link, 0))
            self._last_on_link[link] = at
        self._push(at, _MSG, src, dst, msg)

    def _timer(self, pid: int, delay: int, callback) -> None:
        if delay < 0:
            raise SimulationError("negative timer delay")
        self._push(self.now + delay, _TIMER, pid, pid, callback)

    def record_app(self, pid: int, kind: str, detail) -> None:
        rec = (self.now, pid, pid, kind, canonical(detail))
        self._note(rec)
        self.app_events.append(rec)

    def _encode(self, payload) -> str:
        hit = self._encoded.get(id(payload))
        if hit is not None and hit[0] is payload:
            return hit[1]
        text = canonical(payload)
        self._encoded[id(payload)] = (payload, text)
        return text

    def _note(self, rec: tuple) -> None:
        if self._trace == "none":
            return
        self._hash.update(("|".join(str(x) for x in rec) + "\n").encode())
        if self._trace == "full":
            self.events.append(rec)

    # -- running --

    def start(self) -> None:
        self.adversary.setup(self.adversary_ctx)
        for pid in sorted(self.handlers):
            start = getattr(self.handlers[pid], "start", None)
            if start is not None:
                start()

    def run(self, max_events: Optional[int] = None, until: Optional[Callable[[], bool]] = None) -> SimTrace:
        """Pop events until the queue is empty (quiescence), ``until()`` holds,
        or ``max_events`` is reached (which raises)."""
        self.start()
        queue = self._queue
        byz = self.config.byzantine
        handlers = self.handlers
        tracing = self._trace != "none"
        adversary = self.adversary
        count = 0
        while queue:
            if until is not None and until():
                break
            at, _, kind, src, dst, payload = heapq.heappop(queue)
            self.now = at
            count += 1
            if max_events is not None and count > max_events:
                raise SimulationError(f"event budget {max_events} exhausted at time {at}")
            if kind == _TIMER:
                if tracing:
                    self._note((at, src, dst, "timer", ""))
                payload()
                continue
            self.delivered += 1
            if tracing:
                self._note((at, src, dst, type(payload).__name__, self._encode(payload)))
            if dst in byz:
                adversary.on_receive(dst, src, payload)
            else:
                handlers[dst].on_message(src, payload)
        return SimTrace(
            digest=self._hash.hexdigest(),
            events=self.events,
            app_events=self.app_events,
            delivered_messages=self.delivered,
            end_time=self.now,
            handlers=handlers,
        )

    @property
    def quiescent(self) -> bool:
        return not self._queue


def run(
    config: SimConfig,
    protocol_factory: Callable[[ProcessContext], Any],
    adversary: Optional[Adversary] = None,
    stop: Optional[Callable[[], bool]] = None,
    trace: str = "hash",
    max_events: Optional[int] = None,
) -> SimTrace:
    """Build one handler per correct process and run to quiescence (or ``stop``)."""
    sim = Simulator(config, adversary, trace)
    for pid in config.correct:
        sim.add_process(pid, protocol_factory)
    return sim.run(max_events=max_events, until=stop)
