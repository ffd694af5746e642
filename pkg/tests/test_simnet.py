import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from at2.simnet import (
    Adversary,
    ConfigError,
    ForgeryError,
    Keyring,
    LinkMeta,
    ObservedMessage,
    SimConfig,
    SimulationError,
    Simulator,
    auto_byzantine,
    canonical,
    parse_byzantine,
    parse_config_text,
    run,
)


class Pinger:
    """Sends one message to every peer at start and logs what arrives."""

    def __init__(self, ctx, payload="hi"):
        self.ctx = ctx
        self.payload = payload
        self.inbox = []

    def start(self):
        for dst in range(self.ctx.n):
            if dst != self.ctx.pid:
                self.ctx.send(dst, (self.ctx.pid, self.payload))

    def on_message(self, src, msg):
        self.inbox.append((src, msg))


class Once:
    def __init__(self, ctx):
        self.ctx = ctx
        self.got = []

    def start(self):
        if self.ctx.pid == 0:
            self.ctx.send(1, {"x": 1})

    def on_message(self, src, msg):
        self.got.append((src, msg))


def test_single_send_is_delivered_once_intact():
    trace = run(SimConfig(n=2, seed=1), Once)
    assert trace.delivered_messages == 1
    assert trace.handlers[1].got == [(0, {"x": 1})]


def test_same_seed_same_digest_different_seed_differs():
    cfg = SimConfig(n=5, seed=42)
    a = run(cfg, Pinger)
    b = run(SimConfig(n=5, seed=42), Pinger)
    c = run(SimConfig(n=5, seed=43), Pinger)
    assert a.digest == b.digest
    assert a.digest != c.digest


def test_full_trace_records_match_hash_mode():
    full = run(SimConfig(n=4, seed=9), Pinger, trace="full")
    hashed = run(SimConfig(n=4, seed=9), Pinger, trace="hash")
    assert full.digest == hashed.digest
    assert len(full.events) == 12 and not hashed.events


class Reverser(Adversary):
    """Delays earlier sends longer, so delivery order is reversed."""

    controls_delays = True

    def __init__(self):
        self.remaining = 100

    def delay(self, meta):
        self.remaining -= 1
        return self.remaining


def test_reordered_messages_are_all_delivered():
    trace = run(SimConfig(n=3, seed=0), Pinger, Reverser())
    for pid, h in trace.handlers.items():
        assert sorted(src for src, _ in h.inbox) == [p for p in range(3) if p != pid]


class BadDelay(Adversary):
    controls_delays = True

    def __init__(self, value):
        self.value = value

    def delay(self, meta):
        return self.value


@pytest.mark.parametrize("value", [-1, float("inf"), 2.5, "soon", True])
def test_invalid_adversary_delay_is_a_hard_error(value):
    with pytest.raises(SimulationError):
        run(SimConfig(n=2, seed=0), Pinger, BadDelay(value))


class Recorder(Adversary):
    controls_delays = True

    def __init__(self):
        self.seen = []

    def delay(self, meta):
        self.seen.append(meta)
        return None


def test_adversary_never_sees_correct_payloads():
    adv = Recorder()
    run(SimConfig(n=4, byzantine={3}, seed=2), Pinger, adv)
    for meta in adv.seen:
        if 3 in (meta.src, meta.dst):
            assert type(meta) is ObservedMessage
        else:
            assert type(meta) is LinkMeta
            assert not hasattr(meta, "payload")
    assert any(type(m) is LinkMeta for m in adv.seen)


class Forger(Adversary):
    def __init__(self, action):
        self.action = action

    def setup(self, ctx):
        super().setup(ctx)
        self.action(ctx)


@pytest.mark.parametrize(
    "action",
    [lambda ctx: ctx.sign(0, "pay me"), lambda ctx: ctx.send(0, 1, "spoof")],
)
def test_adversary_cannot_act_as_correct_process(action):
    with pytest.raises(ForgeryError):
        run(SimConfig(n=3, byzantine={2}, seed=0), Pinger, Forger(action))


def test_keyring_rejects_foreign_and_altered_signatures():
    ring = Keyring(7)
    sig = ring.sign(1, ("msg", 1))
    assert ring.verify(1, ("msg", 1), sig)
    assert not ring.verify(2, ("msg", 1), sig)
    assert not ring.verify(1, ("msg", 2), sig)
    assert not ring.verify(1, ("msg", 1), type(sig)(1, sig.token ^ 1))
    assert not ring.verify(1, ("msg", 1), "not a signature")


def test_fifo_option_preserves_link_order():
    class Burst:
        def __init__(self, ctx):
            self.ctx = ctx
            self.got = []

        def start(self):
            if self.ctx.pid == 0:
                for i in range(50):
                    self.ctx.send(1, i)

        def on_message(self, src, msg):
            self.got.append(msg)

    fifo = run(SimConfig(n=2, seed=3, fifo=True), Burst)
    assert fifo.handlers[1].got == list(range(50))
    loose = run(SimConfig(n=2, seed=3), Burst)
    assert sorted(loose.handlers[1].got) == list(range(50))
    assert loose.handlers[1].got != list(range(50))


def _context(n=10, seed=0):
    sim = Simulator(SimConfig(n=n, seed=seed))
    sim.add_process(0, lambda ctx: None)
    return sim.contexts[0]


def test_omega_edge_cases():
    ctx = _context()
    assert ctx.omega(0) == []
    assert sorted(ctx.omega(10)) == list(range(10))
    with pytest.raises(ValueError):
        ctx.omega(11)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 20), st.integers(0, 2**31))
def test_omega_returns_distinct_ids(k, seed):
    ctx = _context(20, seed)
    ids = ctx.omega(k)
    assert len(ids) == k == len(set(ids))
    assert all(0 <= i < 20 for i in ids)


def test_omega_single_draws_are_uniform():
    ctx = _context(10, seed=5)
    counts = [0] * 10
    for _ in range(100_000):
        counts[ctx.omega(1)[0]] += 1
    freqs = [c / 100_000 for c in counts]
    assert all(abs(f - 0.1) <= 0.01 for f in freqs)
    assert stats.chisquare(counts).pvalue > 0.001


def test_config_parsing_and_validation():
    text = "n=7  # seven\n\nbyzantine=auto\nf=0.3\nE_hat=4\n"
    cfg = parse_config_text(text)
    assert cfg == {"n": "7", "byzantine": "auto", "f": "0.3", "E_hat": "4"}
    assert parse_byzantine("auto", 7, 0.3) == frozenset({5, 6})
    assert parse_byzantine("1,4", 7, None) == frozenset({1, 4})
    with pytest.raises(ConfigError):
        parse_config_text("n 7")
    with pytest.raises(ConfigError):
        parse_byzantine("one", 7, None)
    with pytest.raises(ConfigError):
        SimConfig(n=4, byzantine={9})
    with pytest.raises(ConfigError):
        SimConfig(n=10, byzantine={1, 2}, f=0.1)
    with pytest.raises(ConfigError):
        SimConfig(n=10, f=1.0)


def test_auto_byzantine_takes_highest_ids():
    assert auto_byzantine(10, 0.1) == frozenset({9})
    assert auto_byzantine(50, 0.1) == frozenset(range(45, 50))
    assert auto_byzantine(4, 0.0) == frozenset()


def test_canonical_form_ignores_set_order():
    a = frozenset(["b", "a", "c"])
    b = frozenset(["c", "b", "a"])
    assert canonical(a) == canonical(b)
    assert canonical({2: "x", 1: "y"}) == canonical({1: "y", 2: "x"})


def test_event_budget_raises():
    class Echoer(Pinger):
        def on_message(self, src, msg):
            self.ctx.send(src, msg)

    with pytest.raises(SimulationError):
        run(SimConfig(n=2, seed=0), Echoer, max_events=100)
