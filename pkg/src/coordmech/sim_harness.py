"""Episode engine, Monte Carlo estimation and deviation tests.

The engine steps a block of replicas in lockstep.  ``run_episode`` is a
block of one; ``estimate`` splits its replicas into fixed-size chunks, each
with a seed derived from the master seed and chunk number, so results do
not depend on how chunks are scheduled across workers.

Every period draws its uniforms with a fixed shape regardless of the
reports, so two runs with the same seed share the world's randomness
(common random numbers) even when one agent deviates.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import gittins as gt
from .bandit_learning import (
    BanditStrategy,
    ConsistentWrongModel,
    FrontierMisreport,
    InconsistentIndex,
    run_learning_mechanism,
)
from .mechanisms import MECHANISMS, make_mechanism
from .mdp_core import solve
from .scenario import Scenario, ScenarioError, Strategy, truthful

CHAIN_MECHANISMS = ("sgv", "dgv")
IR_TOL = 1e-12
WORKERS_ENV = "COORDMECH_WORKERS"
DEFAULT_CHUNK = 2000
STRATEGY_STREAM = 1000


def default_horizon(discount: float, rel_tail: float = 1e-8) -> int:
    """Periods needed for the discounted tail to fall below ``rel_tail`` of its scale."""
    return math.ceil(math.log(rel_tail) / math.log(discount))


def chunk_seed(master: int, chunk: int) -> int:
    return int(np.random.SeedSequence([int(master), 7919, int(chunk)]).generate_state(1)[0])


class Kahan:
    """Vectorised compensated summation."""

    def __init__(self, shape):
        self.total = np.zeros(shape)
        self._comp = np.zeros(shape)

    def add(self, x):
        y = x - self._comp
        t = self.total + y
        self._comp = (t - self.total) - y
        self.total = t


# -- strategies --------------------------------------------------------------------

class _Reporter:
    """A strategy compiled against one agent's state list."""

    def __init__(self, strategy: Strategy, states: tuple, seed: int, replicas: int):
        self.kind = strategy.kind
        k = len(states)
        self.map = np.arange(k)
        if strategy.state_map:
            for true, claim in strategy.state_map.items():
                if true not in states or claim not in states:
                    raise ScenarioError(f"agent {strategy.agent}: state_map refers to unknown states")
                self.map[states.index(true)] = states.index(claim)
        self.prob = strategy.prob
        self.k = k
        self.replicas = replicas
        self.rng = gt.stream(seed, STRATEGY_STREAM + strategy.agent, 0) if self.kind == "random-misreport" else None

    def __call__(self, local: np.ndarray) -> np.ndarray:
        if self.kind == "fixed-misreport":
            return self.map[local]
        if self.kind == "random-misreport":
            flip = self.rng.random(self.replicas) < self.prob
            other = self.rng.integers(0, self.k, self.replicas)
            return np.where(flip, other, local)
        return local


def _reporters(strategies, state_sets, seed, replicas):
    return [_Reporter(s, states, seed, replicas) for s, states in zip(strategies, state_sets)]


# -- transcripts -----------------------------------------------------------------------

@dataclass
class Transcript:
    """Per-period record of one episode (arrays have a leading period axis)."""

    mechanism: str
    seed: int
    scenario_hash: str
    discount: float
    state_labels: list
    states: np.ndarray  # (T, n) true local state indices
    reports: np.ndarray  # (T, n)
    actions: np.ndarray  # (T,) joint action column, or activated agent in chain worlds
    action_labels: list
    rewards: np.ndarray  # (T, n) intrinsic
    transfers: np.ndarray  # (T, n)
    charges: np.ndarray | None = None  # (T, n) sample-average charges, chain mechanisms
    samples: np.ndarray | None = None  # (T, n_traj) sample-trajectory reward logs
    comparisons: np.ndarray | None = None  # (T,)

    @property
    def horizon(self) -> int:
        return len(self.actions)

    @property
    def n_agents(self) -> int:
        return self.rewards.shape[1]

    def payoffs(self) -> np.ndarray:
        return self.rewards + self.transfers

    def discounts(self) -> np.ndarray:
        return self.discount ** np.arange(self.horizon)

    def metrics(self) -> "EpisodeMetrics":
        d = self.discounts()[:, None]
        pay = self.payoffs()
        return EpisodeMetrics(
            payoff=(d * pay).sum(axis=0),
            reward=(d * self.rewards).sum(axis=0),
            transfer=(d * self.transfers).sum(axis=0),
            welfare=float((d * self.rewards).sum()),
            net_transfer=float((d * self.transfers).sum()),
            ir_violations=(pay < -IR_TOL).sum(axis=0),
            payoff_series=pay,
        )

    def __eq__(self, other):
        if not isinstance(other, Transcript):
            return NotImplemented
        arrays = ("states", "reports", "actions", "rewards", "transfers", "charges", "samples")
        same = all(
            (getattr(self, a) is None and getattr(other, a) is None)
            or (getattr(self, a) is not None and getattr(other, a) is not None
                and np.array_equal(getattr(self, a), getattr(other, a)))
            for a in arrays
        )
        return same and (self.mechanism, self.seed, self.scenario_hash) == (other.mechanism, other.seed, other.scenario_hash)

    def to_csv(self, path) -> None:
        n = self.n_agents
        header = (["t"] + [f"state_{i}" for i in range(n)] + [f"report_{i}" for i in range(n)] + ["action"]
                  + [f"reward_{i}" for i in range(n)] + [f"transfer_{i}" for i in range(n)]
                  + [f"payoff_{i}" for i in range(n)])
        if self.charges is not None:
            header += [f"charge_{i}" for i in range(n)]
        if self.samples is not None:
            header += [f"sample_{k}" for k in range(self.samples.shape[1])]
        pay = self.payoffs()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t in range(self.horizon):
                row = [t]
                row += [self.state_labels[i][self.states[t, i]] for i in range(n)]
                row += [self.state_labels[i][self.reports[t, i]] for i in range(n)]
                row += [self.action_labels[t]]
                row += [repr(float(x)) for x in self.rewards[t]]
                row += [repr(float(x)) for x in self.transfers[t]]
                row += [repr(float(x)) for x in pay[t]]
                if self.charges is not None:
                    row += [repr(float(x)) for x in self.charges[t]]
                if self.samples is not None:
                    row += [repr(float(x)) for x in self.samples[t]]
                w.writerow(row)

    def summary(self) -> dict:
        m = self.metrics()
        return {
            "mechanism": self.mechanism,
            "seed": self.seed,
            "scenario_hash": self.scenario_hash,
            "horizon": self.horizon,
            "discount": self.discount,
            "payoff": m.payoff.tolist(),
            "per_period_payoff": ((1 - self.discount) * m.payoff).tolist(),
            "welfare": m.welfare,
            "net_transfer": m.net_transfer,
            "ir_violations": m.ir_violations.tolist(),
        }


@dataclass
class EpisodeMetrics:
    payoff: np.ndarray
    reward: np.ndarray
    transfer: np.ndarray
    welfare: float
    net_transfer: float
    ir_violations: np.ndarray
    payoff_series: np.ndarray


@dataclass
class MetricReport:
    name: str
    mean: float
    stderr: float
    ci_low: float
    ci_high: float
    replicas: int
    values: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_values(cls, name: str, values: np.ndarray) -> "MetricReport":
        values = np.asarray(values, dtype=float)
        n = len(values)
        if n < 2:
            raise ValueError("need at least two replicas")
        mean = math.fsum(values) / n
        se = float(np.std(values, ddof=1) / math.sqrt(n))
        return cls(name, mean, se, mean - 1.96 * se, mean + 1.96 * se, n, values)

    def to_dict(self) -> dict:
        return {"name": self.name, "mean": self.mean, "stderr": self.stderr, "ci_low": self.ci_low,
                "ci_high": self.ci_high, "replicas": self.replicas}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# -- the engine ----------------------------------------------------------------------------

@dataclass
class Block:
    """Accumulated per-replica results of one lockstep block."""

    payoff: np.ndarray  # (R, n) discounted
    reward: np.ndarray
    transfer: np.ndarray
    routed: np.ndarray  # (R,) discounted transfers plus the activated agent's world reward
    ir_violations: np.ndarray  # (R, n) count of negative-payoff periods
    comparisons: np.ndarray | None = None  # (T,)
    argmax_calls: np.ndarray | None = None
    record: dict | None = None

    def metric(self, name: str) -> np.ndarray:
        base, _, idx = name.partition(":")
        if base == "net_transfer":
            return self.transfer.sum(axis=1)
        if base == "net_transfer_routed":
            return self.routed
        if base == "welfare":
            return self.reward.sum(axis=1)
        if base in ("payoff", "reward", "transfer"):
            return getattr(self, base)[:, int(idx)]
        if base == "per_period_payoff":
            return self.payoff[:, int(idx)]
        if base == "ir_violation":
            return (self.ir_violations[:, int(idx)] > 0).astype(float)
        raise ValueError(f"unknown metric {name!r}")


class _Tracker:
    def __init__(self, replicas, n, discount, record, horizon):
        self.pay, self.rew, self.tr = Kahan((replicas, n)), Kahan((replicas, n)), Kahan((replicas, n))
        self.routed = Kahan(replicas)
        self.ir = np.zeros((replicas, n), dtype=np.int64)
        self.discount = discount
        self.rec = {} if record else None
        self.horizon = horizon

    def add(self, t, rewards, transfers, routed_extra):
        d = self.discount**t
        pay = rewards + transfers
        self.pay.add(d * pay)
        self.rew.add(d * rewards)
        self.tr.add(d * transfers)
        self.routed.add(d * (transfers.sum(axis=1) + routed_extra))
        self.ir += pay < -IR_TOL

    def keep(self, t, **arrays):
        if self.rec is None:
            return
        for k, v in arrays.items():
            if k not in self.rec:
                self.rec[k] = np.zeros((self.horizon,) + np.shape(v), dtype=np.asarray(v).dtype)
            self.rec[k][t] = v

    def block(self, **extra):
        return Block(self.pay.total, self.rew.total, self.tr.total, self.routed.total, self.ir,
                     record=self.rec, **extra)


def _run_mdp(sc: Scenario, mech_name: str, strategies, horizon: int, seed: int, replicas: int, record: bool,
             solution=None) -> Block:
    model = sc.joint()
    _, policy = solution if solution is not None else solve(model)
    mech = make_mechanism(mech_name, model, sc.s0, policy)
    n, R = model.n_agents, replicas
    cum = [np.cumsum(ag.transition, axis=2) for ag in model.agents]
    reporters = _reporters(strategies, [ag.states for ag in model.agents], seed, R)
    world = gt.stream(seed, gt.REAL_STREAM, 0)
    local = np.tile([ag.state_index(x) for ag, x in zip(model.agents, sc.s0)], (R, 1))
    rows = np.arange(R)
    tr = _Tracker(R, n, model.discount, record, horizon)
    for t in range(horizon):
        rep = np.stack([f(local[:, i]) for i, f in enumerate(reporters)], axis=1)
        rep_joint = np.ravel_multi_index(tuple(rep.T), model.shape)
        true_joint = np.ravel_multi_index(tuple(local.T), model.shape)
        act = mech.decide(rep_joint)
        rewards = model.rewards[:, true_joint, act].T
        transfers = mech.transfers(rep_joint, act)
        tr.add(t, rewards, transfers, 0.0)
        tr.keep(t, states=local.copy(), reports=rep, actions=act, rewards=rewards, transfers=transfers)
        u = world.random((R, n))
        nxt = np.empty_like(local)
        for i in range(n):
            row = cum[i][local[:, i], model.actions[act, i]]
            nxt[:, i] = np.minimum((row <= u[:, i, None]).sum(axis=1), model.shape[i] - 1)
        local = nxt
    del rows
    return tr.block()


def _chain_tables(sc: Scenario, tables=None):
    return tables if tables is not None else gt.gittins_tables(sc.chains, sc.discount)


def _run_chains(sc: Scenario, mech_name: str, strategies, horizon: int, seed: int, replicas: int, record: bool,
                m: int, tables=None) -> Block:
    chains = gt.ChainSet(sc.chains)
    n, R = chains.n, replicas
    true_tables = _chain_tables(sc, tables)
    overrides = {s.agent: s.table for s in strategies if s.kind == "index-manipulation" and s.table is not None}
    claimed = gt.table_matrix(gt.reported_tables(true_tables, overrides))
    planner = gt.table_matrix(true_tables) if mech_name == "sgv" else claimed
    reporters = _reporters(strategies, [c.states for c in sc.chains], seed, R)
    s0 = np.array([c.state_index(x) for c, x in zip(sc.chains, sc.s0)])
    local = np.tile(s0, (R, 1))
    rows = np.arange(R)
    world = gt.stream(seed, gt.REAL_STREAM, 0)
    marginal = mech_name == "dgv"
    trajs = gt.make_trajectories(s0, seed, m, n, marginal, R)
    flat = [x for group in trajs for x in group] if marginal else trajs
    tr = _Tracker(R, n, sc.discount, record, horizon)
    comps = np.zeros(horizon, dtype=np.int64)
    calls = np.zeros(horizon, dtype=np.int64)
    for t in range(horizon):
        counter = gt.OpCounter()
        rep = np.stack([f(local[:, i]) for i, f in enumerate(reporters)], axis=1)
        star = gt.index_argmax(planner, rep, None, counter)
        reported_reward = chains.reward[star, rep[rows, star]]
        true_reward = chains.reward[star, local[rows, star]]
        gt.advance_samples(flat, chains, planner, counter)
        if marginal:
            transfers = gt.dgv_transfers(star, reported_reward, trajs, t)
            charges = np.stack([sum(x.log[t] for x in g) / m for g in trajs], axis=1)
        else:
            transfers = gt.sgv_transfers(star, reported_reward, trajs, t, n)
            charges = np.repeat((sum(x.log[t] for x in trajs) / m)[:, None], n, axis=1)
        rewards = np.zeros((R, n))
        rewards[rows, star] = true_reward
        tr.add(t, rewards, transfers, true_reward)
        comps[t], calls[t] = counter.comparisons, counter.argmax_calls
        tr.keep(t, states=local.copy(), reports=rep, actions=star, rewards=rewards, transfers=transfers,
                charges=charges, samples=np.stack([x.log[t] for x in flat], axis=1))
        u = world.random(R)
        local[rows, star] = chains.next_state(star, local[rows, star], u)
    return tr.block(comparisons=comps, argmax_calls=calls)


def simulate(sc: Scenario, mechanism: str | None = None, strategies: Sequence[Strategy] | None = None,
             horizon: int | None = None, seed: int | None = None, replicas: int = 1, record: bool = False,
             m: int | None = None, cache=None) -> Block:
    """Run ``replicas`` episodes in lockstep and return accumulated results."""
    mechanism = mechanism or sc.mechanism
    strategies = list(strategies) if strategies is not None else sc.strategies
    horizon = horizon or sc.horizon or default_horizon(sc.discount)
    seed = sc.seed if seed is None else seed
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if len(strategies) != sc.n_agents:
        raise ScenarioError(f"{len(strategies)} strategies for {sc.n_agents} agents")
    if sc.kind == "bandit":
        raise ScenarioError("use run_learning_mechanism for bandit worlds")
    if mechanism in CHAIN_MECHANISMS:
        if sc.kind != "chains":
            raise ScenarioError(f"mechanism {mechanism!r} needs a markov-chain world")
        return _run_chains(sc, mechanism, strategies, horizon, seed, replicas, record, m or sc.m, cache)
    if mechanism not in MECHANISMS:
        raise ScenarioError(f"unknown mechanism {mechanism!r}")
    return _run_mdp(sc, mechanism, strategies, horizon, seed, replicas, record, cache)


def run_episode(sc: Scenario, mechanism: str | None = None, strategies: Sequence[Strategy] | None = None,
                horizon: int | None = None, seed: int | None = None, m: int | None = None) -> Transcript:
    """One episode: report, decide, pay, transition, for ``horizon`` periods."""
    mechanism = mechanism or sc.mechanism
    seed = sc.seed if seed is None else seed
    b = simulate(sc, mechanism, strategies, horizon, seed, 1, True, m)
    rec = {k: v[:, 0] for k, v in b.record.items()}
    if sc.kind == "mdp" or mechanism not in CHAIN_MECHANISMS:
        model = sc.joint()
        labels = [ag.states for ag in model.agents]
        action_labels = ["/".join(map(str, model.action_label(a))) for a in rec["actions"]]
    else:
        labels = [c.states for c in sc.chains]
        action_labels = [f"activate:{a}" for a in rec["actions"]]
    return Transcript(
        mechanism, seed, sc.digest(), sc.discount, labels, rec["states"], rec["reports"], rec["actions"],
        action_labels, rec["rewards"], rec["transfers"], rec.get("charges"), rec.get("samples"),
        b.comparisons,
    )


# -- Monte Carlo ---------------------------------------------------------------------------

def _precompute(sc: Scenario, mechanism: str):
    if mechanism in CHAIN_MECHANISMS:
        return _chain_tables(sc)
    return solve(sc.joint())


def _chunk_values(args):
    sc, mechanism, strategies, horizon, seed, size, m, cache, metrics = args
    b = simulate(sc, mechanism, strategies, horizon, seed, size, False, m, cache)
    return {name: b.metric(name) for name in metrics}


def _chunks(replicas: int, chunk: int):
    sizes = [chunk] * (replicas // chunk)
    if replicas % chunk:
        sizes.append(replicas % chunk)
    return sizes


def _map(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _workers(workers):
    return int(workers if workers is not None else os.environ.get(WORKERS_ENV, "1"))


def estimate_many(sc: Scenario, metrics: Sequence[str], mechanism: str | None = None,
                  strategies: Sequence[Strategy] | None = None, horizon: int | None = None,
                  replicas: int | None = None, master_seed: int | None = None, m: int | None = None,
                  chunk: int = DEFAULT_CHUNK, workers: int | None = None) -> dict[str, MetricReport]:
    """Several metrics from one set of replicas."""
    mechanism = mechanism or sc.mechanism
    strategies = list(strategies) if strategies is not None else sc.strategies
    replicas = replicas or sc.replicas
    master_seed = sc.seed if master_seed is None else master_seed
    horizon = horizon or sc.horizon or default_horizon(sc.discount)
    if replicas < 2:
        raise ValueError("need at least two replicas")
    cache = _precompute(sc, mechanism)
    jobs = [(sc, mechanism, strategies, horizon, chunk_seed(master_seed, c), size, m or sc.m, cache, tuple(metrics))
            for c, size in enumerate(_chunks(replicas, chunk))]
    parts = _map(_chunk_values, jobs, _workers(workers))
    return {name: MetricReport.from_values(name, np.concatenate([p[name] for p in parts])) for name in metrics}


def estimate(sc: Scenario, mechanism: str | None = None, strategies: Sequence[Strategy] | None = None,
             horizon: int | None = None, replicas: int | None = None, master_seed: int | None = None,
             metric: str = "net_transfer", m: int | None = None, chunk: int = DEFAULT_CHUNK,
             workers: int | None = None) -> MetricReport:
    """Mean, standard error and 95% CI of ``metric`` over independent replicas.

    Metrics: ``net_transfer``, ``net_transfer_routed``, ``welfare``,
    ``payoff:i``, ``reward:i``, ``transfer:i``, ``ir_violation:i`` (share of
    episodes with a negative-payoff period).
    """
    return estimate_many(sc, [metric], mechanism, strategies, horizon, replicas, master_seed, m, chunk,
                         workers)[metric]


def _gain_chunk(args):
    sc, mechanism, base, dev, deviator, horizon, seed, size, m, cache = args
    a = simulate(sc, mechanism, base, horizon, seed, size, False, m, cache)
    b = simulate(sc, mechanism, dev, horizon, seed, size, False, m, cache)
    return b.payoff[:, deviator] - a.payoff[:, deviator]


def deviation_gain(sc: Scenario, mechanism: str | None, deviator: int, deviation: Strategy,
                   replicas: int | None = None, seed: int | None = None, horizon: int | None = None,
                   m: int | None = None, chunk: int = DEFAULT_CHUNK, workers: int | None = None) -> MetricReport:
    """Paired-seed payoff difference (deviating minus truthful) for one agent."""
    mechanism = mechanism or sc.mechanism
    replicas = replicas or sc.replicas
    seed = sc.seed if seed is None else seed
    horizon = horizon or sc.horizon or default_horizon(sc.discount)
    base = truthful(sc.n_agents)
    dev = list(base)
    dev[deviator] = replace(deviation, agent=deviator)
    cache = _precompute(sc, mechanism)
    jobs = [(sc, mechanism, base, dev, deviator, horizon, chunk_seed(seed, c), size, m or sc.m, cache)
            for c, size in enumerate(_chunks(replicas, chunk))]
    gains = np.concatenate(_map(_gain_chunk, jobs, _workers(workers)))
    return MetricReport.from_values(f"gain:{deviator}", gains)


# -- bandit worlds ------------------------------------------------------------------------

def bandit_strategies(sc: Scenario) -> list[BanditStrategy]:
    b = sc.bandit
    out = []
    for s in sc.strategies:
        if s.kind == "truthful":
            out.append(BanditStrategy(b.discount, b.trunc))
        elif s.kind == "frontier-misreport":
            out.append(FrontierMisreport(b.discount, b.trunc, s.frontier_scale, s.frontier_shift))
        elif s.kind == "index-manipulation":
            out.append(InconsistentIndex(b.discount, b.trunc, s.index_shift))
        elif s.kind == "fixed-misreport" and s.claimed_prior is not None:
            out.append(ConsistentWrongModel(b.discount, b.trunc, s.claimed_prior))
        else:
            raise ScenarioError(f"strategy {s.kind!r} is not available in bandit worlds")
    return out


def run_bandit(sc: Scenario, horizon: int | None = None, seed: int | None = None, m: int | None = None):
    b = sc.bandit
    return run_learning_mechanism(b.priors, b.ground_truth, b.discount, b.trunc, m or sc.m,
                                  horizon or sc.horizon or 200, sc.seed if seed is None else seed,
                                  bandit_strategies(sc))
