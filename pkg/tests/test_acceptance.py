"""End-to-end acceptance runs, one test (or group) per criterion.

Each test records its verdict through the ``criterion`` fixture; the
terminal summary prints one PASS/FAIL line per criterion.  Tolerances are
the stated ones: 3 sigma of the Monte Carlo estimate around the exact or
bounded value.
"""
import math
import time

import numpy as np
import pytest

from at2 import analysis as an
from at2.analysis import ContagionParams, EchoSetting
from at2.broadcast_prob import EchoParams
from at2.kshared import consensus_exhaustive, consensus_random
from at2.scenarios import (
    at2d_trial,
    det_broadcast_trial,
    gossip_trial,
    sequenced_trial,
    split_trial,
)
from at2.shared_memory import sm_check
from test_analysis import brute_force_connectivity
from test_kshared import paused_owner_is_helped

SEEDS = range(1000)

# double echo at N=50, f=0.1, tuned so every bound is below 1%
ECHO_N, ECHO_F = 50, 0.1
ECHO_PARAMS = EchoParams(G=10, E=60, E_hat=45, R=40, R_hat=12, D=60, D_hat=42)

# all-correct sequenced system for the multi-message run
SEQ_N, SEQ_MESSAGES, SEQ_RUNS = 20, 5, 500
SEQ_PARAMS = EchoParams(G=8, E=12, E_hat=9, R=12, R_hat=4, D=12, D_hat=9)

AT2D_SYSTEMS = [(4, 1), (7, 2), (10, 3)]


def three_sigma(p: float, runs: int) -> float:
    return 3.0 * math.sqrt(p * (1.0 - p) / runs)


# --- 1 -----------------------------------------------------------------------------


def test_shared_memory_linearizability(criterion):
    start = time.perf_counter()
    report = sm_check(processes=3, ops=4, schedules=10_000, seed=1)
    elapsed = time.perf_counter() - start
    ok = report.schedules == 10_000 and report.ok and elapsed < 120
    criterion(
        1, ok,
        f"{report.schedules} schedules, {report.violations} non-linearizable, "
        f"{report.inconclusive} inconclusive, {elapsed:.1f}s",
    )
    assert ok


# --- 2 -----------------------------------------------------------------------------


@pytest.mark.parametrize("backend", ["atomic", "kshared"])
def test_consensus_exhaustive_k2(criterion, backend):
    report = consensus_exhaustive(2, backend)
    criterion(2, report.ok, f"k=2 exhaustive/{backend}: {report.runs} schedules ok={report.ok}")
    assert report.ok


@pytest.mark.parametrize("k", [3, 4])
def test_consensus_random_schedules(criterion, k):
    report = consensus_random(k, 10_000, seed=k)
    ok = report.ok and report.runs == 10_000
    criterion(
        2, ok,
        f"k={k}: {report.runs} schedules, agreement failures {report.agreement_failures}, "
        f"validity failures {report.validity_failures}",
    )
    assert ok


def test_paused_owner_is_helped(criterion):
    runs = 1000
    helped = sum(paused_owner_is_helped(s) for s in range(runs))
    criterion(2, helped == runs, f"helping {helped}/{runs}")
    assert helped == runs


# --- 3 and 4 -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def at2d_outcomes():
    return {(n, b): [at2d_trial(n, b, seed) for seed in SEEDS] for n, b in AT2D_SYSTEMS}


@pytest.mark.parametrize("n,byz", AT2D_SYSTEMS)
def test_at2d_safety_under_equivocation(criterion, at2d_outcomes, n, byz):
    outs = at2d_outcomes[(n, byz)]
    conflicting = sum(o.conflicting > 0 for o in outs)
    negative = sum(o.negative_balances > 0 for o in outs)
    ok = conflicting == 0 and negative == 0 and all(o.order_ok for o in outs)
    criterion(3, ok, f"N={n}: {conflicting} conflicting, {negative} negative of {len(outs)}")
    assert ok


@pytest.mark.parametrize("n,byz", AT2D_SYSTEMS)
def test_at2d_agreement_and_liveness(criterion, at2d_outcomes, n, byz):
    outs = at2d_outcomes[(n, byz)]
    agree = sum(o.hist_agree for o in outs)
    resolved = sum(o.unresolved == 0 for o in outs)
    ok = agree == resolved == len(outs)
    criterion(4, ok, f"N={n}: agree {agree}/{len(outs)}, resolved {resolved}/{len(outs)}")
    assert ok


# --- 5 -----------------------------------------------------------------------------


def test_deterministic_broadcast_source_order(criterion):
    outs = [det_broadcast_trial(7, 2, seed) for seed in SEEDS]
    good = sum(o.prefix_ok and o.duplicates == 0 for o in outs)
    criterion(5, good == len(outs), f"N=7, 2 Byzantine: {good}/{len(outs)} seeds with identical prefixes")
    assert good == len(outs)


# --- 6 -----------------------------------------------------------------------------


def test_gossip_totality_bound(criterion):
    start = time.perf_counter()
    eps, freqs, oks = [], [], []
    for G in (5, 10, 15):
        bound = an.gossip_totality_bound(G, 0.1, 100).epsilon
        bad = sum(gossip_trial(100, 0.1, G, seed).totality_violated for seed in SEEDS)
        freq = bad / len(SEEDS)
        eps.append(bound)
        freqs.append(freq)
        oks.append(freq <= bound + three_sigma(bound, len(SEEDS)))
    elapsed = time.perf_counter() - start
    decreasing = eps[0] > eps[1] > eps[2]
    ok = all(oks) and decreasing and elapsed < 600
    detail = ", ".join(f"G={G}: {f:.4f} vs eps {e:.3g}" for G, f, e in zip((5, 10, 15), freqs, eps))
    criterion(6, ok, f"{detail}; strictly decreasing={decreasing}; {elapsed:.0f}s")
    assert ok


# --- 7 -----------------------------------------------------------------------------


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_er_exact_vs_enumeration(criterion, n):
    worst = max(
        abs(an.er_connectivity(n, p) - brute_force_connectivity(n, p)) for p in (0.1, 0.3, 0.5, 0.7, 0.95)
    )
    criterion(7, worst <= 1e-12, f"n={n} max |exact - enumeration| = {worst:.1e}")
    assert worst <= 1e-12


@pytest.mark.parametrize("n,p", [(6, 0.4), (10, 0.35), (15, 0.25), (20, 0.2)])
def test_er_exact_vs_monte_carlo(criterion, n, p):
    samples = 100_000
    exact = an.er_connectivity(n, p)
    mc = an.er_connectivity(n, p, "monte-carlo", samples=samples, rng=np.random.default_rng(n))
    ok = abs(mc - exact) <= three_sigma(exact, samples)
    criterion(7, ok, f"n={n}: mc {mc:.4f} vs exact {exact:.4f}")
    assert ok


# --- 8 -----------------------------------------------------------------------------

CONTAGION_GRID = [(c, R, R_hat) for c in (3, 6, 10) for R in (1, 2, 4) for R_hat in range(1, R + 1)]


def test_threshold_contagion_markov_vs_monte_carlo(criterion):
    games = 100_000
    points = bad = 0
    for c, R, R_hat in CONTAGION_GRID:
        params = ContagionParams(c, R, R_hat, rounds=2)
        exact = an.threshold_contagion(params)
        mc = an.threshold_contagion(params, "monte-carlo", games, seed=c * 100 + R * 10 + R_hat)
        for e, m in zip(exact, mc):
            points += len(e)
            bad += int(np.sum(np.abs(e - m) > 3 * np.sqrt(e * (1 - e) / games) + 1e-12))
    criterion(8, bad == 0, f"{len(CONTAGION_GRID)} configs, {points} support points, {bad} outside 3 sigma")
    assert bad == 0


# --- 9 -----------------------------------------------------------------------------


def test_double_echo_consistency_under_split_sender(criterion):
    setting = EchoSetting(ECHO_N, ECHO_F, *(getattr(ECHO_PARAMS, k) for k in ("G", "E", "E_hat", "R", "R_hat", "D", "D_hat")))
    eps = an.pde_property_bounds(setting)["consistency"].epsilon
    bad = sum(split_trial(ECHO_N, ECHO_F, ECHO_PARAMS, seed).consistency_violated for seed in SEEDS)
    freq = bad / len(SEEDS)
    limit = eps + three_sigma(eps, len(SEEDS))
    criterion(9, freq <= limit, f"violations {bad}/{len(SEEDS)} vs eps {eps:.4g} (limit {limit:.4g})")
    assert freq <= limit


# --- 10 ----------------------------------------------------------------------------


def test_sequenced_multi_message(criterion):
    setting = EchoSetting(SEQ_N, 0.0, *(getattr(SEQ_PARAMS, k) for k in ("G", "E", "E_hat", "R", "R_hat", "D", "D_hat")))
    bounds = an.pde_property_bounds(setting)
    eps_pcb = min(1.0, sum(b.epsilon for b in bounds.values()))
    expected = (1.0 - eps_pcb) ** SEQ_MESSAGES
    outs = [sequenced_trial(SEQ_N, SEQ_PARAMS, seed, SEQ_MESSAGES) for seed in range(SEQ_RUNS)]
    complete = sum(o.complete for o in outs) / SEQ_RUNS
    floor = expected - three_sigma(expected, SEQ_RUNS)
    identical = all(o.identical for o in outs if o.complete)
    ok = complete >= floor and identical
    criterion(
        10, ok,
        f"full delivery {complete:.3f} vs floor {floor:.4f} (eps_pcb {eps_pcb:.3g}); "
        f"identical sequences in all complete seeds={identical}",
    )
    assert ok


# --- 11 ----------------------------------------------------------------------------

REPLAY_SEEDS = range(20)

REPLAYS = {
    "at2d N=10": lambda s: at2d_trial(10, 3, s).digest,
    "quorum broadcast N=7": lambda s: det_broadcast_trial(7, 2, s).digest,
    "gossip N=100": lambda s: gossip_trial(100, 0.1, 10, s, trace="hash").digest,
    "double echo split": lambda s: split_trial(ECHO_N, ECHO_F, ECHO_PARAMS, s, trace="hash").digest,
    "sequenced": lambda s: sequenced_trial(SEQ_N, SEQ_PARAMS, s, SEQ_MESSAGES, trace="hash").digest,
}


@pytest.mark.parametrize("name", list(REPLAYS))
def test_simulation_traces_reproducible(criterion, name):
    replay = REPLAYS[name]
    first = [replay(s) for s in REPLAY_SEEDS]
    second = [replay(s) for s in REPLAY_SEEDS]
    ok = first == second and len(set(first)) == len(first)
    criterion(11, ok, f"{name}: {len(first)} seeds replayed")
    assert ok


def test_schedule_and_sampling_runs_reproducible(criterion):
    a = sm_check(3, 4, 300, seed=1)
    b = sm_check(3, 4, 300, seed=1)
    c1 = consensus_random(3, 300, seed=3)
    c2 = consensus_random(3, 300, seed=3)
    params = ContagionParams(6, 2, 1, rounds=2)
    m1 = an.threshold_contagion(params, "monte-carlo", 5000, seed=9)
    m2 = an.threshold_contagion(params, "monte-carlo", 5000, seed=9)
    e1 = an.er_connectivity(10, 0.3, "monte-carlo", 5000, np.random.default_rng(4))
    e2 = an.er_connectivity(10, 0.3, "monte-carlo", 5000, np.random.default_rng(4))
    ok = a == b and c1 == c2 and all(np.array_equal(x, y) for x, y in zip(m1, m2)) and e1 == e2
    criterion(11, ok, "schedulers and Monte Carlo replayed")
    assert ok
