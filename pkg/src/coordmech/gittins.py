"""Gittins indices for finite chains and the index-based mechanisms.

Indices are computed with the restart-in-state formulation: for a target
state, every state may either continue its own chain or restart from the
target.  The optimal value at the target, scaled by ``1 - discount``, is
the index in per-period reward units, so a chain paying ``c`` forever has
index ``c``.

Sample trajectories (simulated executions of the index policy, used for
charges) are vectorised over a leading replica axis so the same code runs
one episode or a batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .mdp_core import MarkovChainModel

DEFAULT_M = 16


def gittins_index(chain: MarkovChainModel, target, discount: float, tol: float = 1e-12) -> float:
    """Index of ``target`` (label or state index) by value iteration on the restart MDP."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    t = target if isinstance(target, (int, np.integer)) else chain.state_index(target)
    r, p = chain.reward, chain.transition
    v = np.zeros(chain.n_states)
    while True:
        cont = r + discount * (p @ v)
        tv = np.maximum(cont, cont[t])
        if np.max(np.abs(tv - v)) <= tol:
            return float((1 - discount) * tv[t])
        v = tv


@dataclass
class GittinsTable:
    agent: int
    states: tuple
    values: np.ndarray

    def __getitem__(self, label) -> float:
        return float(self.values[self.states.index(label)])

    def as_dict(self) -> dict:
        return {str(s): float(v) for s, v in zip(self.states, self.values)}


def gittins_table(chain: MarkovChainModel, discount: float, tol: float = 1e-12) -> GittinsTable:
    vals = np.array([gittins_index(chain, k, discount, tol) for k in range(chain.n_states)])
    return GittinsTable(chain.id, chain.states, vals)


def gittins_tables(chains: Sequence[MarkovChainModel], discount: float, tol: float = 1e-12) -> list[GittinsTable]:
    return [gittins_table(c, discount, tol) for c in chains]


def reported_tables(true_tables: Sequence[GittinsTable],
                    overrides: Mapping[int, Mapping | Sequence | np.ndarray] | None = None) -> list[GittinsTable]:
    """Tables the planner actually uses: the truth, except where an agent overrides its claim.

    An override is either a full array of values or a ``{state: value}``
    mapping for a subset of states.
    """
    out = []
    for tab in true_tables:
        vals = tab.values.copy()
        claim = (overrides or {}).get(tab.agent)
        if claim is not None:
            if isinstance(claim, Mapping):
                for label, value in claim.items():
                    if label not in tab.states:
                        raise ValueError(f"agent {tab.agent}: override for unknown state {label!r}")
                    vals[tab.states.index(label)] = value
            else:
                claim = np.asarray(claim, dtype=float)
                if claim.shape != vals.shape:
                    raise ValueError(f"agent {tab.agent}: override has shape {claim.shape}")
                vals = claim.copy()
        out.append(GittinsTable(tab.agent, tab.states, vals))
    return out


def tables_to_json(tables: Sequence[GittinsTable], discount: float) -> str:
    return json.dumps(
        {"discount": discount, "tables": [{"agent": t.agent, "index": t.as_dict()} for t in tables]},
        indent=2,
    )


def tables_from_json(text: str, chains: Sequence[MarkovChainModel]) -> list[GittinsTable]:
    doc = json.loads(text)
    by_agent = {int(t["agent"]): t["index"] for t in doc["tables"]}
    out = []
    for c in chains:
        entry = by_agent[c.id]
        vals = np.array([float(entry[str(s)]) for s in c.states])
        out.append(GittinsTable(c.id, c.states, vals))
    return out


def table_matrix(tables: Sequence[GittinsTable]) -> np.ndarray:
    """(n_agents, max_states) array of index values padded with -inf."""
    width = max(len(t.values) for t in tables)
    mat = np.full((len(tables), width), -np.inf)
    for i, t in enumerate(tables):
        mat[i, : len(t.values)] = t.values
    return mat


@dataclass
class OpCounter:
    """Planner work tallies: argmax decisions, and index values compared across them."""

    argmax_calls: int = 0
    comparisons: int = 0

    def tally(self, candidates: int, decisions: int = 1):
        self.argmax_calls += decisions
        self.comparisons += decisions * candidates


def index_argmax(matrix: np.ndarray, states: np.ndarray, eligible: np.ndarray | None = None,
                 counter: OpCounter | None = None) -> np.ndarray:
    """Agent with the largest index per row of ``states`` (ties to the lowest id).

    ``states`` has shape (..., n_agents); returns (...,) agent ids, or -1 when
    no agent is eligible.
    """
    n = matrix.shape[0]
    vals = matrix[np.arange(n), states]
    if eligible is not None:
        vals = np.where(eligible, vals, -np.inf)
    k = n if eligible is None else int(np.count_nonzero(eligible))
    if counter is not None:
        counter.tally(k)
    if k == 0:
        return np.full(states.shape[:-1], -1)
    return np.argmax(vals, axis=-1)


def index_policy(tables: Sequence[GittinsTable], states: Sequence) -> int:
    """Activated agent for reported local states (labels); ties go to the lowest id."""
    if len(tables) != len(states):
        raise ValueError("need one table per agent")
    best, best_val = -1, -np.inf
    for i, (tab, s) in enumerate(zip(tables, states)):
        if s not in tab.states:
            raise KeyError(f"agent {i}: no index for state {s!r}")
        v = tab[s]
        if v > best_val:
            best, best_val = i, v
    return best


class ChainSet:
    """Chains packed into padded arrays for vectorised lookup and sampling."""

    def __init__(self, chains: Sequence[MarkovChainModel]):
        self.chains = list(chains)
        self.n = len(self.chains)
        width = max(c.n_states for c in self.chains)
        self.reward = np.zeros((self.n, width))
        self.cum = np.ones((self.n, width, width))
        for i, c in enumerate(self.chains):
            self.reward[i, : c.n_states] = c.reward
            self.cum[i, : c.n_states, : c.n_states] = np.cumsum(c.transition, axis=1)

    def next_state(self, agent: np.ndarray, state: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Successor of ``state`` in chain ``agent`` driven by uniforms ``u``."""
        cum = self.cum[agent, state]
        k = (cum <= u[..., None]).sum(axis=-1)
        size = np.array([c.n_states for c in self.chains])[agent]
        return np.minimum(k, size - 1)


@dataclass
class SampleTrajectory:
    """A simulated execution of the index policy (``excluded=None``) or of the
    marginal policy without agent ``excluded``.

    ``states`` has shape (replicas, n_agents); ``log[t]`` holds the realized
    system reward at period ``t`` per replica.
    """

    label: str
    excluded: int | None
    states: np.ndarray
    rng: np.random.Generator
    log: list = field(default_factory=list)

    @property
    def replicas(self) -> int:
        return self.states.shape[0]


def stream(seed: int, label: int, replica: int) -> np.random.Generator:
    """Independent generator keyed by (seed, stream label, replica index)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(label), int(replica)]))


REAL_STREAM = 0
STAR_STREAM = 1


def marginal_stream(agent: int) -> int:
    return 2 + agent


def make_trajectories(s0: np.ndarray, seed: int, m: int, n_agents: int, marginal: bool,
                      replicas: int = 1) -> list:
    """``m`` index-policy trajectories, or ``n_agents`` lists of ``m`` marginal ones."""
    if m < 1:
        raise ValueError("need at least one sample trajectory")
    start = np.broadcast_to(np.asarray(s0, dtype=np.intp), (replicas, n_agents)).copy()
    if not marginal:
        return [SampleTrajectory("pi*", None, start.copy(), stream(seed, STAR_STREAM, k)) for k in range(m)]
    return [
        [SampleTrajectory(f"pi-{i}", i, start.copy(), stream(seed, marginal_stream(i), k)) for k in range(m)]
        for i in range(n_agents)
    ]


def advance_samples(trajectories: Sequence[SampleTrajectory], chains: ChainSet, tables: np.ndarray,
                    counter: OpCounter | None = None) -> Sequence[SampleTrajectory]:
    """Simulate one period of every trajectory with its own generator.

    ``tables`` is a padded index matrix (see :func:`table_matrix`).  A
    marginal trajectory never activates, and never reads the index of, its
    excluded agent.
    """
    n = chains.n
    for traj in trajectories:
        eligible = np.ones(n, dtype=bool)
        if traj.excluded is not None:
            eligible[traj.excluded] = False
        u = traj.rng.random(traj.replicas)
        if not eligible.any():
            traj.log.append(np.zeros(traj.replicas))
            continue
        pick = index_argmax(tables, traj.states, eligible, counter)
        rows = np.arange(traj.replicas)
        cur = traj.states[rows, pick]
        traj.log.append(chains.reward[pick, cur])
        traj.states[rows, pick] = chains.next_state(pick, cur, u)
    return trajectories


def _sample_mean(samples: Sequence[SampleTrajectory], t: int):
    if len(samples) == 0:
        raise ValueError("need m >= 1 sample trajectories")
    return sum(s.log[t] for s in samples) / len(samples)


def sgv_transfers(activated, reward, samples: Sequence[SampleTrajectory], t: int, n_agents: int) -> np.ndarray:
    """Centralised Gittins-VCG: everyone is charged the average simulated system reward at ``t``;
    non-activated agents also receive the activated agent's reported-state reward."""
    activated, reward, charge = np.broadcast_arrays(
        np.asarray(activated), np.asarray(reward, dtype=float), np.asarray(_sample_mean(samples, t), dtype=float)
    )
    out = np.repeat((reward - charge)[..., None], n_agents, axis=-1)
    np.put_along_axis(out, activated[..., None], -charge[..., None], axis=-1)
    return out


def dgv_transfers(activated, reward, samples_by_agent: Sequence[Sequence[SampleTrajectory]], t: int) -> np.ndarray:
    """Distributed Gittins-VCG: agent ``j``'s charge averages its own marginal-world trajectories."""
    charges = np.stack([np.asarray(_sample_mean(group, t), dtype=float) for group in samples_by_agent], axis=-1)
    activated, reward = np.broadcast_arrays(np.asarray(activated), np.asarray(reward, dtype=float))
    activated = np.broadcast_to(activated, charges.shape[:-1])
    out = reward[..., None] - charges
    own = -np.take_along_axis(charges, activated[..., None], axis=-1)
    np.put_along_axis(out, activated[..., None], own, axis=-1)
    return out


def index_policy_columns(model, tables: Sequence[GittinsTable], exclude: int | None = None) -> np.ndarray:
    """The index policy as a joint-model policy (feasible-action columns).

    ``model`` must be the single-activation joint model of the same chains.
    """
    mat = table_matrix(tables)
    n = model.n_agents
    eligible = np.ones(n, dtype=bool)
    if exclude is not None:
        eligible[exclude] = False
    local = model.local_states()
    pick = index_argmax(mat, local, eligible)
    null = model.actions[model.null_column]
    cols = np.empty(model.n_states, dtype=np.intp)
    for s, i in enumerate(pick):
        act = null.copy()
        if i >= 0:
            act[i] = 0  # chains are lifted with the activate action first
        cols[s] = int(np.flatnonzero((model.actions == act).all(axis=1))[0])
    return cols
