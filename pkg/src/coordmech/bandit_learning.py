"""Bernoulli-arm information states, truncated indices, and the learning mechanism.

An arm's information state is its success/failure count plus prior
pseudo-counts; pulling it moves to ``(s+1, f)`` or ``(s, f+1)`` by Bayes'
rule.  The chain is infinite, so indices are computed on the tree cut at
depth ``H``, chosen so that discounted reward beyond it is below epsilon.
Leaves keep their posterior mean as a constant reward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np
from numba import njit

from .gittins import OpCounter, dgv_transfers, marginal_stream, stream, REAL_STREAM
from .mdp_core import MarkovChainModel

LAPLACE = (1.0, 1.0)
DEFAULT_DEPTH_CAP = 10_000


@dataclass(frozen=True)
class InfoState:
    successes: int
    failures: int
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.successes < 0 or self.failures < 0:
            raise ValueError("counts must be nonnegative")
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta + self.successes + self.failures <= 0:
            raise ValueError("posterior undefined for these counts")

    @property
    def a(self) -> float:
        return self.successes + self.alpha

    @property
    def b(self) -> float:
        return self.failures + self.beta

    @property
    def mean(self) -> float:
        return self.a / (self.a + self.b)

    def update(self, success: bool) -> "InfoState":
        if success:
            return replace(self, successes=self.successes + 1)
        return replace(self, failures=self.failures + 1)


@dataclass(frozen=True)
class PriorReport:
    agent: int
    observations: str


def parse_prior(report: PriorReport | str, base: tuple[float, float] = LAPLACE) -> InfoState:
    """Count successes ('1') and failures ('0') in an observation string."""
    text = report.observations if isinstance(report, PriorReport) else report
    bad = set(text) - {"0", "1"}
    if bad:
        raise ValueError(f"prior string may only contain 0/1, found {sorted(bad)}")
    return InfoState(text.count("1"), text.count("0"), float(base[0]), float(base[1]))


def info_transition(state: InfoState) -> list[tuple[float, InfoState]]:
    """Successor distribution; the success branch pays 1, the failure branch 0."""
    p = state.mean
    return [(p, state.update(True)), (1.0 - p, state.update(False))]


def truncation_depth(epsilon: float, discount: float, r_max: float = 1.0) -> int:
    """Smallest ``H`` with ``discount**H * r_max / (1 - discount) <= epsilon``."""
    if epsilon <= 0 or r_max <= 0 or not 0 < discount < 1:
        raise ValueError("need epsilon > 0, r_max > 0 and 0 < discount < 1")
    ratio = epsilon * (1 - discount) / r_max
    if ratio >= 1:
        return 0
    return math.ceil(math.log(ratio) / math.log(discount))


@dataclass(frozen=True)
class TruncationPolicy:
    epsilon: float = 1e-6
    r_max: float = 1.0
    cap: int = DEFAULT_DEPTH_CAP

    def depth(self, discount: float) -> int:
        h = truncation_depth(self.epsilon, discount, self.r_max)
        if h > self.cap:
            raise ValueError(f"truncation depth {h} exceeds cap {self.cap}")
        return h


@njit(cache=True)
def _restart_value(a, b, gamma, depth):
    # policy iteration on the restart-in-root problem over the (d, k) tree;
    # each node's value is kept as A + B * R for the current restart value R
    if depth == 0:
        return a / (a + b) / (1.0 - gamma)
    va = np.empty(depth + 1)
    vb = np.empty(depth + 1)
    r = a / (a + b) / (1.0 - gamma)
    for _ in range(1000):
        n = a + b + depth
        for k in range(depth + 1):
            cont = (a + k) / n / (1.0 - gamma)
            if cont >= r:
                va[k] = cont
                vb[k] = 0.0
            else:
                va[k] = 0.0
                vb[k] = 1.0
        for d in range(depth - 1, -1, -1):
            n = a + b + d
            for k in range(d + 1):
                p = (a + k) / n
                ca = p + gamma * (p * va[k + 1] + (1.0 - p) * va[k])
                cb = gamma * (p * vb[k + 1] + (1.0 - p) * vb[k])
                if d == 0 or ca + cb * r >= r:
                    va[k] = ca
                    vb[k] = cb
                else:
                    va[k] = 0.0
                    vb[k] = 1.0
        r_new = va[0] / (1.0 - vb[0])
        if r_new <= r + 1e-15 * abs(r):
            return max(r, r_new)
        r = r_new
    return r


@lru_cache(maxsize=200_000)
def _cached_index(a: float, b: float, discount: float, depth: int) -> float:
    return float((1.0 - discount) * _restart_value(a, b, discount, depth))


def truncated_index(state: InfoState, discount: float, trunc: TruncationPolicy = TruncationPolicy()) -> float:
    """Index of an information state on the depth-``H`` truncated chain (per-period units)."""
    return _cached_index(float(state.a), float(state.b), float(discount), trunc.depth(discount))


def index_at_depth(state: InfoState, discount: float, depth: int) -> float:
    return _cached_index(float(state.a), float(state.b), float(discount), int(depth))


def truncated_chain(state: InfoState, depth: int) -> MarkovChainModel:
    """The explicit truncated information-state chain rooted at ``state``.

    Node ``(d, k)`` has seen ``k`` successes in ``d`` further pulls; depth
    ``depth`` nodes are absorbing.  Used as a brute-force oracle.
    """
    nodes = [(d, k) for d in range(depth + 1) for k in range(d + 1)]
    pos = {node: i for i, node in enumerate(nodes)}
    p = np.zeros((len(nodes), len(nodes)))
    r = np.zeros(len(nodes))
    for (d, k), i in pos.items():
        mean = (state.a + k) / (state.a + state.b + d)
        r[i] = mean
        if d == depth:
            p[i, i] = 1.0
        else:
            p[i, pos[(d + 1, k + 1)]] = mean
            p[i, pos[(d + 1, k)]] = 1.0 - mean
    return MarkovChainModel(0, tuple(nodes), p, r)


# -- agent behaviour in the learning mechanism --------------------------------------

@dataclass(frozen=True)
class FrontierRequest:
    label: str
    agent: int
    state: InfoState


class BanditStrategy:
    """Truthful agent: honest prior, honest state and index, honest frontier indices."""

    kind = "truthful"

    def __init__(self, discount: float, trunc: TruncationPolicy):
        self.discount = discount
        self.trunc = trunc

    def index(self, state: InfoState) -> float:
        return truncated_index(state, self.discount, self.trunc)

    def report_prior(self, prior: str) -> str:
        return prior

    def report(self, state: InfoState, t: int) -> tuple[InfoState, float]:
        return state, self.index(state)

    def frontier(self, request: FrontierRequest) -> float:
        return self.index(request.state)


class ConsistentWrongModel(BanditStrategy):
    """Claims a different prior and answers everything consistently with it."""

    kind = "consistent-wrong-model"

    def __init__(self, discount, trunc, claimed_prior: str, base=LAPLACE):
        super().__init__(discount, trunc)
        self.claimed_prior = claimed_prior
        self.base = base
        self._true0: InfoState | None = None

    def report_prior(self, prior):
        self._true0 = parse_prior(prior, self.base)
        return self.claimed_prior

    def report(self, state, t):
        claimed0 = parse_prior(self.claimed_prior, self.base)
        seen_s = state.successes - self._true0.successes
        seen_f = state.failures - self._true0.failures
        claim = replace(claimed0, successes=claimed0.successes + seen_s, failures=claimed0.failures + seen_f)
        return claim, self.index(claim)


class InconsistentIndex(BanditStrategy):
    """Reports its true state but shifts the index it attaches to it."""

    kind = "state-index-inconsistent"

    def __init__(self, discount, trunc, shift: float):
        super().__init__(discount, trunc)
        self.shift = shift

    def report(self, state, t):
        return state, self.index(state) + self.shift


class FrontierMisreport(BanditStrategy):
    """Truthful on its own arm, but distorts indices requested on marginal trajectories."""

    kind = "frontier-misreport"

    def __init__(self, discount, trunc, scale: float = 1.0, shift: float = 0.0):
        super().__init__(discount, trunc)
        self.scale = scale
        self.shift = shift

    def frontier(self, request):
        return self.scale * self.index(request.state) + self.shift


# -- the mechanism ---------------------------------------------------------------------

@dataclass
class InfoTrajectory:
    label: str
    excluded: int
    states: list
    rng: np.random.Generator
    known: dict = field(default_factory=dict)  # agent -> reported index of its current sim state
    log: list = field(default_factory=list)


@dataclass
class BanditTranscript:
    seed: int
    discount: float
    activated: np.ndarray  # (T,)
    outcome: np.ndarray  # (T,) realized reward of the pulled arm
    reported_index: np.ndarray  # (T, n)
    true_counts: np.ndarray  # (T, n, 2) successes/failures before the pull
    reported_counts: np.ndarray  # (T, n, 2)
    transfers: np.ndarray  # (T, n)
    charges: np.ndarray  # (T, n) per-agent sample-average marginal reward
    frontier_requests: np.ndarray  # (T,)
    argmax_calls: np.ndarray  # (T,)
    comparisons: np.ndarray  # (T,)
    sample_logs: np.ndarray  # (T, n, m)
    frontier_log: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return len(self.activated)

    @property
    def n_agents(self) -> int:
        return self.transfers.shape[1]

    def rewards(self) -> np.ndarray:
        r = np.zeros((self.horizon, self.n_agents))
        r[np.arange(self.horizon), self.activated] = self.outcome
        return r

    def payoffs(self) -> np.ndarray:
        return self.rewards() + self.transfers

    def activation_share(self, agent: int) -> float:
        return float(np.mean(self.activated == agent))

    def to_csv(self, path) -> None:
        import csv

        n = self.n_agents
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["t", "activated", "outcome", "frontier_requests", "argmax_calls", "comparisons"]
                + [f"index_{i}" for i in range(n)]
                + [f"transfer_{i}" for i in range(n)]
                + [f"charge_{i}" for i in range(n)]
            )
            for t in range(self.horizon):
                w.writerow(
                    [t, int(self.activated[t]), repr(float(self.outcome[t])), int(self.frontier_requests[t]),
                     int(self.argmax_calls[t]), int(self.comparisons[t])]
                    + [repr(float(x)) for x in self.reported_index[t]]
                    + [repr(float(x)) for x in self.transfers[t]]
                    + [repr(float(x)) for x in self.charges[t]]
                )


def _argmax_first(values: Sequence[float]) -> int:
    best, best_val = -1, -math.inf
    for i, v in enumerate(values):
        if v > best_val:
            best, best_val = i, v
    return best


def run_learning_mechanism(priors: Sequence[str], ground_truth: Sequence[float], discount: float,
                           trunc: TruncationPolicy = TruncationPolicy(), m: int = 16, horizon: int = 200,
                           seed: int = 0, strategies: Sequence[BanditStrategy] | None = None,
                           base: tuple[float, float] = LAPLACE) -> BanditTranscript:
    """Run the learning-Gittins-VCG mechanism for ``horizon`` periods.

    The planner sees only reports.  Real pulls draw from ``ground_truth``
    with the real stream; each of the ``n * m`` marginal trajectories is
    simulated from the *reported* priors with its own stream, asking the
    eligible agents for the index of every newly reached simulated state.
    """
    n = len(priors)
    if n < 2:
        raise ValueError("the learning mechanism needs at least two agents")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if m < 1:
        raise ValueError("need at least one sample trajectory")
    if len(ground_truth) != n:
        raise ValueError("one ground-truth parameter per arm")
    if strategies is None:
        strategies = [BanditStrategy(discount, trunc) for _ in range(n)]
    if len(strategies) != n:
        raise ValueError("one strategy per agent")

    true_states = [parse_prior(p, base) for p in priors]
    claimed = [parse_prior(s.report_prior(p), base) for s, p in zip(strategies, priors)]
    real = stream(seed, REAL_STREAM, 0)
    trajs = [
        [InfoTrajectory(f"pi-{i}", i, list(claimed), stream(seed, marginal_stream(i), k)) for k in range(m)]
        for i in range(n)
    ]

    T = horizon
    activated = np.zeros(T, dtype=np.intp)
    outcome = np.zeros(T)
    rep_index = np.zeros((T, n))
    true_counts = np.zeros((T, n, 2), dtype=np.int64)
    rep_counts = np.zeros((T, n, 2), dtype=np.int64)
    transfers = np.zeros((T, n))
    charges = np.zeros((T, n))
    frontier = np.zeros(T, dtype=np.int64)
    calls = np.zeros(T, dtype=np.int64)
    comps = np.zeros(T, dtype=np.int64)
    logs = np.zeros((T, n, m))
    flog = []

    for t in range(T):
        counter = OpCounter()
        reports = [s.report(x, t) for s, x in zip(strategies, true_states)]
        for i, (x, (claim, g)) in enumerate(zip(true_states, reports)):
            if not isinstance(claim, InfoState) or not np.isfinite(g):
                raise ValueError(f"agent {i}: malformed report {claim!r}, {g!r}")
            true_counts[t, i] = (x.successes, x.failures)
            rep_counts[t, i] = (claim.successes, claim.failures)
            rep_index[t, i] = g
        star = _argmax_first(rep_index[t])
        counter.tally(n)
        activated[t] = star
        reported_reward = reports[star][0].mean
        success = real.random() < ground_truth[star]
        outcome[t] = 1.0 if success else 0.0
        true_states[star] = true_states[star].update(success)

        requests = 0
        for i in range(n):
            for k, traj in enumerate(trajs[i]):
                u = traj.rng.random()
                for j in range(n):
                    if j != i and j not in traj.known:
                        req = FrontierRequest(traj.label, j, traj.states[j])
                        g = strategies[j].frontier(req)
                        if not isinstance(g, (float, int, np.floating)) or not np.isfinite(g):
                            raise ValueError(f"agent {j}: malformed frontier response {g!r}")
                        traj.known[j] = float(g)
                        flog.append((t, traj.label, k, j, req.state.successes, req.state.failures, float(g)))
                        requests += 1
                vals = [traj.known[j] if j != i else -math.inf for j in range(n)]
                pick = _argmax_first(vals)
                counter.tally(n - 1)
                sim = traj.states[pick]
                won = u < sim.mean
                traj.log.append(1.0 if won else 0.0)
                logs[t, i, k] = traj.log[-1]
                traj.states[pick] = sim.update(won)
                del traj.known[pick]

        transfers[t] = dgv_transfers(star, reported_reward, trajs, t)
        charges[t] = logs[t].mean(axis=1)
        frontier[t] = requests
        calls[t] = counter.argmax_calls
        comps[t] = counter.comparisons

    return BanditTranscript(seed, discount, activated, outcome, rep_index, true_counts, rep_counts,
                            transfers, charges, frontier, calls, comps, logs, flog)


def run_centralized(priors: Sequence[str], ground_truth: Sequence[float], discount: float,
                    trunc: TruncationPolicy = TruncationPolicy(), horizon: int = 200, seed: int = 0,
                    base: tuple[float, float] = LAPLACE) -> np.ndarray:
    """A planner that computes every index itself; returns the activation sequence."""
    states = [parse_prior(p, base) for p in priors]
    real = stream(seed, REAL_STREAM, 0)
    out = np.zeros(horizon, dtype=np.intp)
    for t in range(horizon):
        star = _argmax_first([truncated_index(x, discount, trunc) for x in states])
        out[t] = star
        states[star] = states[star].update(real.random() < ground_truth[star])
    return out
