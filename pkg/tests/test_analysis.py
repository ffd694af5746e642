import csv
import io
import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import special, stats

from at2 import analysis as an
from at2.analysis import ContagionChain, ContagionParams, EchoSetting, EpsilonBound, ModelRangeError


def brute_force_connectivity(n: int, p: float) -> float:
    """Sum the probability of every connected labelled graph on ``n`` nodes."""
    pairs = list(itertools.combinations(range(n), 2))
    total = 0.0
    for mask in range(1 << len(pairs)):
        adj = {v: [] for v in range(n)}
        edges = 0
        for i, (u, v) in enumerate(pairs):
            if mask >> i & 1:
                adj[u].append(v)
                adj[v].append(u)
                edges += 1
        seen = {0}
        stack = [0]
        while stack:
            for w in adj[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if len(seen) == n:
            total += p**edges * (1 - p) ** (len(pairs) - edges)
    return total


# --- binomial helpers ---------------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 300), st.floats(0, 1), st.integers(-2, 305))
def test_binomial_tail_matches_scipy(n, p, k):
    ours = an.binom_sf(n, p, k)
    ref = float(stats.binom.sf(k - 1, n, p))
    assert ours == pytest.approx(ref, rel=1e-9, abs=1e-300)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 200), st.floats(0.001, 0.999), st.integers(1, 200))
def test_log_cdf_below_matches_scipy(n, p, k):
    assume(k <= n)
    # scipy's logcdf underflows to -inf far in the tail; sum log-pmf terms instead
    ref = float(special.logsumexp(stats.binom.logpmf(np.arange(k), n, p)))
    assert an.binom_log_cdf_below(n, p, k) == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_binomial_pmf_sums_to_one():
    pmf = an.binom_pmf(50, 0.3)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-12)
    assert pmf[15] == pytest.approx(stats.binom.pmf(15, 50, 0.3), rel=1e-10)


# --- Erdős-Rényi ---------------------------------------------------------------------


def test_er_trivial_and_hand_values():
    assert an.er_connectivity(1, 0.3) == 1.0
    assert an.er_connectivity(2, 0.3) == pytest.approx(0.3)
    assert an.er_connectivity(3, 0.5) == pytest.approx(0.5)
    assert an.er_connectivity(10, 1.0) == 1.0
    assert an.er_connectivity(10, 0.0) == 0.0


@pytest.mark.parametrize("n", [2, 3, 4, 5])
@pytest.mark.parametrize("p", [0.05, 0.3, 0.5, 0.9])
def test_er_exact_matches_enumeration(n, p):
    assert an.er_connectivity(n, p) == pytest.approx(brute_force_connectivity(n, p), abs=1e-12)


def test_er_rejects_bad_arguments():
    with pytest.raises(ValueError):
        an.er_connectivity(5, 1.5)
    with pytest.raises(ValueError):
        an.er_connectivity(5, 0.5, method="guess")
    with pytest.raises(ValueError):
        an.er_disconnection(an.EXACT_CONNECTIVITY_CAP + 1, 0.5)


def test_er_monte_carlo_close_to_exact():
    rng = np.random.default_rng(1)
    exact = an.er_connectivity(8, 0.3)
    mc = an.er_connectivity(8, 0.3, "monte-carlo", samples=20_000, rng=rng)
    sigma = math.sqrt(exact * (1 - exact) / 20_000)
    assert abs(mc - exact) <= 3 * sigma


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_er_connectivity_monotone_in_p(n, p1, p2):
    lo, hi = sorted((p1, p2))
    assert an.er_connectivity(n, lo) <= an.er_connectivity(n, hi) + 1e-12


# --- gossip bound ---------------------------------------------------------------------


def test_gossip_bound_examples():
    assert an.gossip_totality_bound(100, 0.1, 100).epsilon == 0.0
    eps = [an.gossip_totality_bound(G, 0.1, 100).epsilon for G in (5, 10, 15)]
    assert eps[0] > eps[1] > eps[2] > 0


@settings(max_examples=60, deadline=None)
@given(st.floats(0.5, 30), st.floats(0.5, 30), st.floats(0, 0.3))
def test_gossip_bound_non_increasing_in_G(g1, g2, f):
    lo, hi = sorted((g1, g2))
    assert an.gossip_totality_bound(hi, f, 60).epsilon <= an.gossip_totality_bound(lo, f, 60).epsilon + 1e-15


@settings(max_examples=60, deadline=None)
@given(st.floats(0.5, 30), st.floats(0, 0.3), st.floats(0, 0.3))
def test_gossip_bound_non_decreasing_in_f(G, f1, f2):
    lo, hi = sorted((f1, f2))
    assert an.gossip_totality_bound(G, hi, 60).epsilon >= an.gossip_totality_bound(G, lo, 60).epsilon - 1e-15


# --- threshold bounds -----------------------------------------------------------------


def test_threshold_bound_examples():
    assert an.e_ready_prob_bounds(10, 0, 3, 9, 10, 0.1) == (1.0, 1.0)
    assert an.e_ready_prob_bounds(5, 2, 0, 10, 10, 0.0) == (0.0, 0.0)
    lower, _ = an.e_ready_prob_bounds(4, 4, 5, 10, 10, 0.0)
    assert lower == pytest.approx(0.0625, abs=1e-12)
    lower, _ = an.delivery_prob_bounds(10, 8, 9, 10, 10, 0.0)
    assert lower == pytest.approx(stats.binom.sf(7, 10, 0.9), abs=1e-12)
    assert lower == pytest.approx(0.9298, abs=1e-4)
    lower, _ = an.delivery_prob_bounds(6, 6, 7, 7, 10, 0.0)
    assert lower == pytest.approx(0.7**6, rel=1e-12)


def test_probability_over_one_is_clamped_with_warning():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        lower, upper = an.e_ready_prob_bounds(5, 5, 10, 10, 10, 0.2)
    assert upper == 1.0 and lower == 1.0
    assert caught


@settings(max_examples=150, deadline=None)
@given(
    st.integers(1, 60), st.data(), st.integers(10, 100), st.floats(0, 0.3)
)
def test_lower_bound_never_exceeds_upper(size, data, N, f):
    threshold = data.draw(st.integers(0, size))
    C = an.correct_count(N, f)
    supporters = data.draw(st.integers(0, C))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lo, hi = an.e_ready_prob_bounds(size, threshold, supporters, C, N, f)
    assert 0.0 <= lo <= hi <= 1.0


# --- threshold contagion --------------------------------------------------------------


def test_three_node_chain_by_hand():
    dist = ContagionChain(ContagionParams(3, 1, 1, pool=3)).run()[0]
    assert dist == pytest.approx([0, 4 / 9, 2 / 9, 3 / 9], abs=1e-12)


def test_zero_threshold_infects_everyone():
    dist = an.threshold_contagion(ContagionParams(6, 3, 0))[0]
    assert dist[6] == pytest.approx(1.0)


def test_player_infecting_everyone_ends_at_c():
    dist = an.threshold_contagion(ContagionParams(5, 3, 3, per_round=5))[0]
    assert dist[5] == pytest.approx(1.0)


def test_markov_matches_monte_carlo_small():
    params = ContagionParams(6, 3, 2, rounds=2)
    exact = an.threshold_contagion(params)
    mc = an.threshold_contagion(params, "monte-carlo", samples=40_000, seed=3)
    for e, m in zip(exact, mc):
        sigma = np.sqrt(e * (1 - e) / 40_000)
        assert np.all(np.abs(e - m) <= 3 * sigma + 1e-9)


def test_per_round_distributions_are_distributions():
    for dist in an.threshold_contagion(ContagionParams(8, 4, 2, rounds=4, byzantine_infected=2)):
        assert dist.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(dist >= -1e-15)


def test_contagion_parameter_validation():
    with pytest.raises(ValueError):
        ContagionParams(3, 2, 3)
    with pytest.raises(ValueError):
        ContagionParams(3, 2, 1, pool=2)
    with pytest.raises(ValueError):
        ContagionChain(ContagionParams(an.EXACT_CONTAGION_CAP + 1, 2, 1))


# --- composed bounds ------------------------------------------------------------------


TUNED = EchoSetting(50, 0.1, 10, 60, 45, 40, 12, 60, 42)


def test_tuned_setting_bounds_are_small():
    b = an.pde_property_bounds(TUNED)
    for prop in ("validity", "totality", "consistency"):
        assert 0.0 <= b[prop].epsilon < 0.01
    assert b["consistency"].terms["early"] > 0


def test_adversary_free_validity_has_no_byzantine_terms():
    s = EchoSetting(20, 0.0, 8, 12, 9, 12, 4, 12, 9)
    b = an.pde_property_bounds(s)
    pb = an.gossip_totality_bound(8, 0.0, 20).epsilon
    assert b["validity"].terms["pb_totality"] == pb
    assert b["validity"].epsilon == pytest.approx(pb + b["validity"].terms["pipeline"])
    assert b["consistency"].epsilon == 0.0


def test_echo_threshold_at_half_is_out_of_range():
    with pytest.raises(ModelRangeError):
        an.pde_property_bounds(EchoSetting(50, 0.1, 10, 60, 30, 40, 12, 60, 42))


def test_consistency_non_increasing_in_delivery_threshold():
    eps = [
        an.pde_property_bounds(EchoSetting(50, 0.1, 10, 60, 45, 40, 12, 60, d))["consistency"].epsilon
        for d in range(30, 61, 5)
    ]
    assert all(b <= a + 1e-12 for a, b in zip(eps, eps[1:]))


@settings(max_examples=25, deadline=None)
@given(
    st.integers(20, 40), st.sampled_from([0.0, 0.05, 0.1]), st.integers(8, 40),
    st.floats(0.55, 0.95), st.integers(4, 30), st.floats(0.1, 0.9), st.integers(8, 40), st.floats(0.3, 1.0),
)
def test_every_epsilon_is_a_probability(N, f, E, e_frac, R, r_frac, D, d_frac):
    s = EchoSetting(
        N, f, 6, E, max(E // 2 + 1, math.ceil(e_frac * E)), R, max(1, round(r_frac * R)), D,
        max(1, round(d_frac * D)),
    )
    for bound in an.pde_property_bounds(s).values():
        assert 0.0 <= bound.epsilon <= 1.0


# --- multi-message bound and export ----------------------------------------------------


def test_multi_bound_examples():
    assert an.multi_bound(0.3, 0) == 0.0
    assert an.multi_bound(0.0, 50) == 0.0
    assert an.multi_bound(0.01, 10) == pytest.approx(1 - 0.99**10, rel=1e-12)
    assert an.multi_bound(0.01, 10) == pytest.approx(0.09562, abs=1e-5)
    with pytest.raises(ValueError):
        an.multi_bound(1.5, 2)


@given(st.floats(0, 1), st.integers(0, 1000))
def test_multi_bound_in_range_and_monotone(eps, n):
    v = an.multi_bound(eps, n)
    assert 0.0 <= v <= 1.0
    assert an.multi_bound(eps, n + 1) >= v - 1e-15


def test_epsilon_bound_range_enforced():
    with pytest.raises(ValueError):
        EpsilonBound("x", 1.5)
    with pytest.raises(ValueError):
        EpsilonBound("x", float("nan"))


def test_csv_export_schema():
    text = an.write_csv([an.gossip_totality_bound(10, 0.1, 100), an.pde_property_bounds(TUNED)["totality"]])
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == an.CSV_HEADER
    assert rows[1][0] == "gossip-totality" and rows[1][4] == ""
    assert rows[2][:10] == ["totality", "50", "0.1", "10", "60", "45", "40", "12", "60", "42"]
    assert float(rows[2][10]) == an.pde_property_bounds(TUNED)["totality"].epsilon
