"""Security bounds for the sample-based broadcasts.

All exact work is done in double precision with log-space binomial terms.
Probabilities of "bad" events are computed directly (never as ``1 - good``)
wherever the good event is close to certain.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Optional

import numpy as np

from .simnet import correct_count

EXACT_CONNECTIVITY_CAP = 2000
EXACT_CONTAGION_CAP = 200

CSV_HEADER = ["property", "N", "f", "G", "E", "E_hat", "R", "R_hat", "D", "D_hat", "epsilon", "method", "samples"]


class ModelRangeError(ValueError):
    """Parameters outside the regime in which a bound's argument holds."""


# --- binomial helpers --------------------------------------------------------------


@lru_cache(maxsize=None)
def _log_factorials(n: int) -> np.ndarray:
    return np.concatenate(([0.0], np.cumsum(np.log(np.arange(1, n + 1)))))


def log_comb(n: int, k) -> np.ndarray:
    lf = _log_factorials(n)
    k = np.asarray(k)
    return lf[n] - lf[k] - lf[n - k]


def binom_logpmf(n: int, p: float) -> np.ndarray:
    """``log P[Bin(n, p) = k]`` for ``k = 0..n``; ``-inf`` where the mass is zero."""
    k = np.arange(n + 1)
    out = np.full(n + 1, -np.inf)
    if p <= 0.0:
        out[0] = 0.0
        return out
    if p >= 1.0:
        out[n] = 0.0
        return out
    return log_comb(n, k) + k * math.log(p) + (n - k) * math.log1p(-p)


def binom_pmf(n: int, p: float) -> np.ndarray:
    return np.exp(binom_logpmf(n, p))


def _logsumexp(values: np.ndarray) -> float:
    if values.size == 0:
        return -math.inf
    top = float(np.max(values))
    if top == -math.inf:
        return -math.inf
    return top + math.log(float(np.sum(np.exp(values - top))))


def binom_sf(n: int, p: float, k: int) -> float:
    """``P[Bin(n, p) >= k]``."""
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    return min(1.0, math.exp(_logsumexp(binom_logpmf(n, p)[k:])))


def binom_log_cdf_below(n: int, p: float, k: int) -> float:
    """``log P[Bin(n, p) < k]``."""
    if k <= 0:
        return -math.inf
    if k > n:
        return 0.0
    return min(0.0, _logsumexp(binom_logpmf(n, p)[:k]))


def _clamped(p: float, what: str) -> float:
    if p > 1.0:
        warnings.warn(f"{what} probability {p:.6g} exceeds 1; clamped", RuntimeWarning, stacklevel=3)
        return 1.0
    return p


# --- records -------------------------------------------------------------------------


@dataclass(frozen=True)
class EpsilonBound:
    property: str
    epsilon: float
    method: str = "exact"
    params: dict = field(default_factory=dict)
    samples: int = 0
    terms: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon <= 1.0 or math.isnan(self.epsilon):
            raise ValueError(f"epsilon {self.epsilon} outside [0, 1]")

    def csv_row(self) -> list:
        row = [self.property]
        for key in CSV_HEADER[1:10]:
            value = self.params.get(key, "")
            row.append("" if value is None else value)
        row += [repr(float(self.epsilon)), self.method, self.samples]
        return row


def write_csv(bounds: Iterable[EpsilonBound], out: Optional[io.TextIOBase] = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for b in bounds:
        writer.writerow(b.csv_row())
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


def _eps(value: float) -> float:
    return float(min(1.0, max(0.0, value)))


# --- Erdős-Rényi connectivity ------------------------------------------------------


def _check_probability(p: float) -> None:
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise ValueError(f"probability {p} outside [0, 1]")


def er_disconnection(n: int, p: float) -> float:
    """``P[G(n, p) is disconnected]`` by recursion on the component of one node.

    ``D(m) = sum_{k<m} C(m-1, k-1) (1 - D(k)) (1-p)^{k(m-k)}``: the component of
    node 1 has ``k`` nodes, is connected and has no edge to the other ``m - k``.
    Every term is non-negative, so tiny results keep full relative precision.
    """
    _check_probability(p)
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > EXACT_CONNECTIVITY_CAP:
        raise ValueError(f"exact connectivity is capped at n={EXACT_CONNECTIVITY_CAP}")
    if n == 1:
        return 0.0
    log_q = math.log1p(-p) if p < 1.0 else -math.inf
    disc = np.zeros(n + 1)
    for m in range(2, n + 1):
        k = np.arange(1, m)
        with np.errstate(invalid="ignore"):
            log_terms = log_comb(m - 1, k - 1) + np.where(k * (m - k) > 0, k * (m - k) * log_q, 0.0)
        terms = np.exp(log_terms) * (1.0 - disc[1:m])
        disc[m] = min(1.0, float(np.sum(terms)))
    return float(disc[n])


def er_connectivity(
    n: int,
    p: float,
    method: str = "exact",
    samples: int = 100_000,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Probability that ``G(n, p)`` is connected (exact recursion or Monte Carlo)."""
    _check_probability(p)
    if method == "exact":
        return 1.0 - er_disconnection(n, p)
    if method == "monte-carlo":
        rng = rng if rng is not None else np.random.default_rng(0)
        return float(np.mean(er_connected_samples(n, p, samples, rng)))
    raise ValueError(f"unknown method {method!r}")


def _connected_from_adjacency(adj: np.ndarray) -> np.ndarray:
    """``adj`` is a ``(batch, n, n)`` boolean array; returns per-graph connectivity."""
    batch, n, _ = adj.shape
    reach = np.zeros((batch, n), dtype=bool)
    reach[:, 0] = True
    a = adj.astype(np.uint8)
    for _ in range(n):
        grown = reach | (np.einsum("bi,bij->bj", reach.astype(np.uint8), a) > 0)
        if np.array_equal(grown, reach):
            break
        reach = grown
    return reach.all(axis=1)


def er_connected_samples(n: int, p: float, samples: int, rng: np.random.Generator, chunk: int = 20_000):
    out = np.empty(samples, dtype=bool)
    iu = np.triu_indices(n, 1)
    for start in range(0, samples, chunk):
        b = min(chunk, samples - start)
        adj = np.zeros((b, n, n), dtype=bool)
        edges = rng.random((b, len(iu[0]))) < p
        adj[:, iu[0], iu[1]] = edges
        adj |= adj.transpose(0, 2, 1)
        out[start : start + b] = _connected_from_adjacency(adj)
    return out


# --- gossip --------------------------------------------------------------------------


def gossip_edge_probability(G: float, N: int) -> float:
    """Two correct processes are linked if either samples the other: ``1 - (1 - G/N)^2``."""
    x = min(1.0, G / N)
    return 1.0 - (1.0 - x) ** 2


def gossip_totality_bound(G: float, f: float, N: int) -> EpsilonBound:
    if G > N or G < 0:
        raise ValueError("G must lie in [0, N]")
    C = correct_count(N, f)
    p_edge = gossip_edge_probability(G, N)
    eps = er_disconnection(C, p_edge)
    return EpsilonBound(
        "gossip-totality",
        _eps(eps),
        "exact",
        {"N": N, "f": f, "G": G},
        terms={"C": C, "p_edge": p_edge},
    )


def gossip_totality_monte_carlo(G: float, f: float, N: int, samples: int, seed: int = 0) -> EpsilonBound:
    """Disconnection frequency of the correct-process graph built by the real
    Poisson-sized distinct samples (no Erdős-Rényi approximation)."""
    rng = np.random.default_rng(seed)
    C = correct_count(N, f)
    bad = 0
    for _ in range(samples):
        adj = np.zeros((C, C), dtype=bool)
        for v in range(C):
            size = min(int(rng.poisson(G)), N)
            picks = rng.choice(N, size=size, replace=False)
            picks = picks[picks < C]
            adj[v, picks] = True
        adj |= adj.T
        if not _connected_from_adjacency(adj[None])[0]:
            bad += 1
    return EpsilonBound(
        "gossip-totality", bad / samples, "monte-carlo", {"N": N, "f": f, "G": G}, samples=samples
    )


# --- echo / delivery probability bounds ---------------------------------------------


def _threshold_bounds(size, threshold, supporters, C, N, f, what) -> tuple[float, float]:
    if not 0 <= threshold <= size:
        raise ValueError(f"threshold must lie in [0, {size}]")
    if not 0 <= supporters <= C:
        raise ValueError(f"supporter count must lie in [0, {C}]")
    base = supporters / N
    lower = binom_sf(size, base, threshold)
    upper = binom_sf(size, _clamped(base + f, what), threshold)
    return lower, upper


def e_ready_prob_bounds(E, E_hat, n_echo, C, N, f) -> tuple[float, float]:
    """Bounds on one correct process becoming ready from echoes when ``n_echo``
    correct processes echoed: Byzantine processes silent vs. all echoing."""
    return _threshold_bounds(E, E_hat, n_echo, C, N, f, "echo")


def delivery_prob_bounds(D, D_hat, n_ready, C, N, f) -> tuple[float, float]:
    return _threshold_bounds(D, D_hat, n_ready, C, N, f, "delivery")


# --- threshold contagion ---------------------------------------------------------------


@dataclass(frozen=True)
class ContagionParams:
    """``c`` nodes each hold ``R`` uniform samples (with replacement) from a pool
    of ``pool`` ids.  ``byzantine_infected`` pool members outside the nodes are
    permanently infected.  Each round the player infects ``per_round`` healthy
    nodes (the first round starts from ``initial`` infected nodes instead when
    given), then infection spreads to every node with at least ``R_hat``
    infected sample slots."""

    c: int
    R: int
    R_hat: int
    rounds: int = 1
    per_round: int = 1
    byzantine_infected: int = 0
    pool: Optional[int] = None

    def __post_init__(self) -> None:
        if self.c < 1 or self.R < 0 or not 0 <= self.R_hat <= self.R:
            raise ValueError("need c >= 1 and 0 <= R_hat <= R")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.pool_size < self.c + self.byzantine_infected:
            raise ValueError("pool must contain the nodes and the Byzantine ids")

    @property
    def pool_size(self) -> int:
        return self.pool if self.pool is not None else self.c + self.byzantine_infected


class ContagionChain:
    """Exact chain on ``(infected, level last tested)``.

    All healthy nodes have been checked against the same infected count, so
    one count summarises them.  A healthy node that resisted ``t`` infected
    pool members falls to ``i > t`` with probability
    ``1 - S(i) / S(t)``, ``S(i) = P[Bin(R, (i + b)/pool) < R_hat]``.
    """

    def __init__(self, params: ContagionParams):
        if params.c > EXACT_CONTAGION_CAP:
            raise ValueError(f"exact contagion is capped at c={EXACT_CONTAGION_CAP}")
        self.params = params
        c, b, pool = params.c, params.byzantine_infected, params.pool_size
        self.log_survive = np.array(
            [binom_log_cdf_below(params.R, (i + b) / pool, params.R_hat) for i in range(c + 1)]
        )
        self._final = self._settle_table()

    def _hazards(self, cur: int, tested: np.ndarray) -> np.ndarray:
        """Infection probability at level ``cur`` for healthy nodes that resisted
        level ``tested`` (``-1``: never tested)."""
        prev = np.where(tested < 0, 0.0, self.log_survive[np.maximum(tested, 0)])
        now = self.log_survive[cur]
        if now == -math.inf:
            return np.ones(len(tested))
        return -np.expm1(now - prev)

    def _settle_table(self) -> np.ndarray:
        """``F[j, t + 1]``: final-count distribution from ``j`` infected, last tested at ``t``.

        A spreading step moves from ``(j, t)`` to ``(j + new, j)``, so rows are
        filled for decreasing ``j``.
        """
        c = self.params.c
        F = np.zeros((c + 1, c + 2, c + 1))
        for j in range(c, -1, -1):
            healthy = c - j
            tested = np.arange(-1, j + 1)
            if healthy == 0:
                F[j, : j + 2, j] = 1.0
                continue
            q = np.clip(self._hazards(j, tested), 0.0, 1.0)
            k = np.arange(healthy + 1)
            with np.errstate(divide="ignore", invalid="ignore"):
                logq = np.log(q)[:, None]
                log1q = np.log1p(-q)[:, None]
                logpmf = log_comb(healthy, k)[None, :] + k * logq + (healthy - k) * log1q
            logpmf = np.where(q[:, None] == 0.0, np.where(k == 0, 0.0, -np.inf), logpmf)
            logpmf = np.where(q[:, None] == 1.0, np.where(k == healthy, 0.0, -np.inf), logpmf)
            pmf = np.exp(logpmf)
            rows = pmf[:, 0:1] * np.eye(c + 1)[j][None, :]
            if healthy:
                onward = F[j + 1 : c + 1, j + 1, :]  # states (j + new, j) for new = 1..healthy
                rows = rows + pmf[:, 1:] @ onward
            F[j, : j + 2, :] = rows
        return F

    def settle(self, cur: int, tested: int) -> np.ndarray:
        """Distribution of the final infected count once spreading stops."""
        return self._final[cur, tested + 1]

    def round_matrix(self, per_round: int) -> np.ndarray:
        """``T[i, j]``: from ``i`` infected at the end of a round to ``j`` after the next."""
        c = self.params.c
        T = np.zeros((c + 1, c + 1))
        for i in range(c + 1):
            start = min(c, i + per_round)
            T[i] = self.settle(start, i)
        return T

    def run(self, initial: Optional[np.ndarray] = None) -> list[np.ndarray]:
        """Per-round distributions of the infected count at the end of each round."""
        p = self.params
        c = p.c
        if initial is None:
            first = self.settle(min(c, p.per_round), -1)
        else:
            first = np.zeros(c + 1)
            for k, mass in enumerate(initial):
                if mass > 0:
                    first += mass * self.settle(k, -1)
        out = [first]
        if p.rounds > 1:
            T = self.round_matrix(p.per_round)
            for _ in range(p.rounds - 1):
                out.append(out[-1] @ T)
        return out


def threshold_contagion(params: ContagionParams, method: str = "markov", samples: int = 100_000, seed: int = 0):
    """Per-round distributions of the infected-node count (lists of arrays of length ``c + 1``)."""
    if method == "markov":
        return ContagionChain(params).run()
    if method == "monte-carlo":
        return contagion_monte_carlo(params, samples, np.random.default_rng(seed))
    raise ValueError(f"unknown method {method!r}")


def contagion_monte_carlo(params: ContagionParams, games: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Play the game on sampled multigraphs, vectorised over games."""
    c, b, pool = params.c, params.byzantine_infected, params.pool_size
    samples = rng.integers(0, pool, size=(games, c, params.R))
    infected = np.zeros((games, pool), dtype=bool)
    infected[:, c : c + b] = True
    rows = np.arange(games)[:, None, None]
    out = []
    for _ in range(params.rounds):
        for _ in range(params.per_round):
            healthy = ~infected[:, :c]
            keys = np.where(healthy, rng.random((games, c)), -1.0)
            pick = np.argmax(keys, axis=1)
            has = healthy.any(axis=1)
            infected[np.arange(games)[has], pick[has]] = True
        while True:
            counts = infected[rows, samples].sum(axis=2)
            grown = infected[:, :c] | (counts >= params.R_hat)
            if np.array_equal(grown, infected[:, :c]):
                break
            infected[:, :c] = grown
        totals = infected[:, :c].sum(axis=1)
        out.append(np.bincount(totals, minlength=c + 1) / games)
    return out


# --- composed double-echo bounds ------------------------------------------------------------


@dataclass(frozen=True)
class EchoSetting:
    N: int
    f: float
    G: float
    E: int
    E_hat: int
    R: int
    R_hat: int
    D: int
    D_hat: int

    @property
    def C(self) -> int:
        return correct_count(self.N, self.f)

    @property
    def B(self) -> int:
        return self.N - self.C

    def as_params(self) -> dict:
        return {
            "N": self.N, "f": self.f, "G": self.G, "E": self.E, "E_hat": self.E_hat,
            "R": self.R, "R_hat": self.R_hat, "D": self.D, "D_hat": self.D_hat,
        }


def _delivery_lo(s: EchoSetting, ready: np.ndarray) -> np.ndarray:
    return np.array([binom_sf(s.D, j / s.N, s.D_hat) for j in ready])


def _delivery_hi(s: EchoSetting, ready: np.ndarray) -> np.ndarray:
    return np.array([binom_sf(s.D, min(1.0, j / s.N + s.f), s.D_hat) for j in ready])


def _log_not_delivered_lo(s: EchoSetting, ready: np.ndarray) -> np.ndarray:
    return np.array([binom_log_cdf_below(s.D, j / s.N, s.D_hat) for j in ready])


def _some(p_each: np.ndarray, C: int) -> np.ndarray:
    """``1 - (1 - p)^C``, precise for small ``p``."""
    with np.errstate(divide="ignore"):
        return -np.expm1(C * np.log1p(-np.minimum(p_each, 1.0)))


def validity_bound(s: EchoSetting, pb_eps: Optional[float] = None) -> EpsilonBound:
    """Correct sender: gossip failure, else every correct process echoes; the
    ready count follows one contagion round seeded by echo-ready processes."""
    if pb_eps is None:
        pb_eps = gossip_totality_bound(s.G, s.f, s.N).epsilon
    C = s.C
    e_lo = binom_sf(s.E, C / s.N, s.E_hat)
    seeds = binom_pmf(C, e_lo)
    chain = ContagionChain(ContagionParams(C, s.R, s.R_hat, pool=s.N))
    ready = chain.run(initial=seeds)[0]
    miss = np.exp(_log_not_delivered_lo(s, np.arange(C + 1)))
    pipeline = float(ready @ miss)
    return EpsilonBound(
        "validity",
        _eps(pb_eps + pipeline),
        "markov",
        s.as_params(),
        terms={"pb_totality": pb_eps, "pipeline": pipeline, "e_ready_lower": e_lo},
    )


def early_consistency_bound(s: EchoSetting) -> float:
    """Adversary echoes ``m1`` at one more correct process at a time until some
    process is ready from echoes, then has every remaining process echo ``m2``."""
    if 2 * s.E_hat <= s.E:
        raise ModelRangeError("the early-consistency argument needs E_hat > E/2")
    if s.B == 0:
        # a correct sender signs one message; no second one can gather echoes
        return 0.0
    C, N, f = s.C, s.N, s.f
    n = np.arange(C + 1)
    p1_hi = np.array([binom_sf(s.E, min(1.0, k / N + f), s.E_hat) for k in n])
    # stochastically earliest stop: P[nobody ready for m1 with k echoes]
    with np.errstate(divide="ignore"):
        log_none = C * np.log1p(-np.minimum(p1_hi, 1.0))
    none = np.exp(log_none)
    stop = np.zeros(C + 1)
    stop[1:] = none[:-1] - none[1:]
    stop = np.clip(stop, 0.0, None)
    # given stop at k: a process that resisted m1 at k-1 turns ready for m2
    g = np.zeros(C + 1)
    for k in range(1, C + 1):
        p2 = binom_sf(s.E, min(1.0, (C - k) / N + f), s.E_hat)
        resist = 1.0 - p1_hi[k - 1]
        per = 1.0 if resist <= 0 else min(1.0, p2 / resist)
        g[k] = float(_some(np.array([per]), C)[0])
    # the exact stop law is only bounded stochastically; use a non-increasing envelope
    envelope = np.maximum.accumulate(g[::-1])[::-1]
    return float(np.sum(stop * envelope))


def feedback_bound(s: EchoSetting) -> tuple[float, np.ndarray]:
    """Delivery of a message no correct process is echo-ready for: Byzantine
    processes act as permanently ready, correct ones may follow by feedback."""
    chain = ContagionChain(
        ContagionParams(s.C, s.R, s.R_hat, per_round=0, byzantine_infected=s.B, pool=s.N)
    )
    ready = chain.settle(0, -1)
    some = _some(_delivery_hi(s, np.arange(s.C + 1)), s.C)
    return float(ready @ some), ready


def totality_game_bound(s: EchoSetting) -> float:
    """Adversary makes one more correct process echo-ready per round and stops
    at the first delivery; a round violates totality if, with nobody having
    delivered before, some but not all processes deliver."""
    C = s.C
    chain = ContagionChain(ContagionParams(C, s.R, s.R_hat, rounds=C, pool=s.N))
    J = np.arange(C + 1)
    none_before = np.exp(C * _log_not_delivered_lo(s, J))
    some = _some(_delivery_hi(s, J), C)
    with np.errstate(divide="ignore"):
        not_all = -np.expm1(C * np.log1p(-np.exp(_log_not_delivered_lo(s, J))))
    split = np.minimum(some, not_all)
    T = chain.round_matrix(1)
    total = 0.0
    dist = np.zeros(C + 1)
    dist[0] = 1.0
    for _ in range(C):
        # joint of (previous round, this round) weighted by min of the two bounds
        pair = np.minimum(none_before[:, None], split[None, :])
        total += float(dist @ (T * pair).sum(axis=1))
        dist = dist @ T
    return total


def pde_property_bounds(s: EchoSetting, pb_eps: Optional[float] = None) -> dict[str, EpsilonBound]:
    if pb_eps is None:
        pb_eps = gossip_totality_bound(s.G, s.f, s.N).epsilon
    validity = validity_bound(s, pb_eps)
    early = early_consistency_bound(s)
    game = totality_game_bound(s)
    feedback, _ = feedback_bound(s)
    params = s.as_params()
    return {
        "validity": validity,
        "totality": EpsilonBound(
            "totality", _eps(early + game), "markov", params, terms={"early": early, "game": game}
        ),
        "consistency": EpsilonBound(
            "consistency", _eps(early + feedback), "markov", params,
            terms={"early": early, "feedback": feedback},
        ),
    }


def multi_bound(eps: float, n: int) -> float:
    """Failure bound for ``n`` sequenced messages: ``1 - (1 - eps)^n``."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0 or eps == 0.0:
        return 0.0
    if eps == 1.0:
        return 1.0
    return float(-math.expm1(n * math.log1p(-eps)))
