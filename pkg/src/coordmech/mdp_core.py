"""Finite agent MDPs, their joint composition, and exact dynamic programming.

States and actions carry user-facing labels, but every solver works on
integer indices:

* a joint state is indexed by its position in ``itertools.product`` order
  over the agents' state lists (agent 0 most significant);
* a joint action is indexed by its column among the model's *feasible*
  joint actions, which are kept in lexicographic order of their per-agent
  action indices.

Value functions and policies are plain numpy arrays over joint-state
indices.  A policy holds one feasible-action column per joint state.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

NULL = "null"
MAX_JOINT_STATES = 10**6
DEFAULT_TOL = 1e-10
ROW_TOL = 1e-12

JointState = tuple
JointAction = tuple


class ModelError(ValueError):
    """Raised for malformed agent or joint models."""


@dataclass(eq=False)
class AgentModel:
    """One agent's local MDP.

    ``transition[s, a]`` is a probability vector over ``states`` and
    ``reward[s, a]`` the (nonnegative) reward for taking action ``a`` in
    state ``s``.
    """

    id: int
    states: tuple
    actions: tuple
    transition: np.ndarray
    reward: np.ndarray
    null_action: Hashable = NULL

    def __post_init__(self):
        self.states = tuple(self.states)
        self.actions = tuple(self.actions)
        self.transition = np.asarray(self.transition, dtype=float)
        self.reward = np.asarray(self.reward, dtype=float)
        ns, na = len(self.states), len(self.actions)
        if ns == 0:
            raise ModelError(f"agent {self.id}: empty state set")
        if len(set(self.states)) != ns or len(set(self.actions)) != na:
            raise ModelError(f"agent {self.id}: duplicate state or action labels")
        if self.null_action not in self.actions:
            raise ModelError(f"agent {self.id}: null action {self.null_action!r} missing")
        if self.transition.shape != (ns, na, ns):
            raise ModelError(
                f"agent {self.id}: transition shape {self.transition.shape} != {(ns, na, ns)}"
            )
        if self.reward.shape != (ns, na):
            raise ModelError(f"agent {self.id}: reward shape {self.reward.shape} != {(ns, na)}")
        if np.any(self.transition < 0) or np.any(
            np.abs(self.transition.sum(axis=2) - 1.0) > ROW_TOL
        ):
            raise ModelError(f"agent {self.id}: transition rows must be distributions")
        if not np.all(np.isfinite(self.reward)) or np.any(self.reward < 0):
            raise ModelError(f"agent {self.id}: rewards must be finite and nonnegative")

    @property
    def null_index(self) -> int:
        return self.actions.index(self.null_action)

    def state_index(self, label) -> int:
        try:
            return self.states.index(label)
        except ValueError:
            raise ModelError(f"agent {self.id}: unknown state {label!r}") from None

    def action_index(self, label) -> int:
        try:
            return self.actions.index(label)
        except ValueError:
            raise ModelError(f"agent {self.id}: unknown action {label!r}") from None


@dataclass(eq=False)
class MarkovChainModel:
    """An agent whose only choice is whether its chain is activated.

    Reward accrues only when activated; the null action freezes the state.
    """

    id: int
    states: tuple
    transition: np.ndarray
    reward: np.ndarray
    activate: Hashable = "act"
    null_action: Hashable = NULL

    def __post_init__(self):
        self.states = tuple(self.states)
        self.transition = np.asarray(self.transition, dtype=float)
        self.reward = np.asarray(self.reward, dtype=float)
        k = len(self.states)
        if k == 0 or len(set(self.states)) != k:
            raise ModelError(f"chain {self.id}: states must be nonempty and distinct")
        if self.activate == self.null_action:
            raise ModelError(f"chain {self.id}: activate and null actions coincide")
        if self.transition.shape != (k, k) or self.reward.shape != (k,):
            raise ModelError(f"chain {self.id}: bad transition/reward shapes")
        if np.any(self.transition < 0) or np.any(np.abs(self.transition.sum(axis=1) - 1) > ROW_TOL):
            raise ModelError(f"chain {self.id}: transition rows must be distributions")
        if not np.all(np.isfinite(self.reward)) or np.any(self.reward < 0):
            raise ModelError(f"chain {self.id}: rewards must be finite and nonnegative")

    @property
    def n_states(self) -> int:
        return len(self.states)

    def state_index(self, label) -> int:
        try:
            return self.states.index(label)
        except ValueError:
            raise ModelError(f"chain {self.id}: unknown state {label!r}") from None

    def as_agent(self) -> AgentModel:
        k = self.n_states
        transition = np.empty((k, 2, k))
        transition[:, 0, :] = self.transition
        transition[:, 1, :] = np.eye(k)
        reward = np.zeros((k, 2))
        reward[:, 0] = self.reward
        return AgentModel(
            self.id,
            self.states,
            (self.activate, self.null_action),
            transition,
            reward,
            null_action=self.null_action,
        )


@dataclass(frozen=True)
class Feasibility:
    """Which joint actions the planner may choose.

    ``kind`` is ``"all"``, ``"single_activation"`` (at most one non-null
    component) or ``"explicit"`` (``allowed`` lists joint-action label
    tuples; the all-null action must be among them).
    """

    kind: str = "all"
    allowed: tuple = ()

    def __post_init__(self):
        if self.kind not in ("all", "single_activation", "explicit"):
            raise ModelError(f"unknown feasibility kind {self.kind!r}")
        object.__setattr__(self, "allowed", tuple(tuple(a) for a in self.allowed))

    def predicate(self, agents: Sequence[AgentModel]) -> Callable[[tuple], bool]:
        """Return a predicate over joint actions given as per-agent indices."""
        nulls = tuple(ag.null_index for ag in agents)
        if self.kind == "all":
            return lambda a: True
        if self.kind == "single_activation":
            return lambda a: sum(x != z for x, z in zip(a, nulls)) <= 1
        allowed = {tuple(ag.action_index(x) for ag, x in zip(agents, labels)) for labels in self.allowed}
        return lambda a: tuple(a) in allowed


@dataclass(eq=False)
class JointModel:
    """Composition of independent agent MDPs under a feasibility constraint.

    Local transitions are independent given the joint action, so the joint
    kernel is the product of the local kernels.  Build with
    :func:`build_joint`.
    """

    agents: tuple
    feasibility: Feasibility
    discount: float
    shape: tuple = field(init=False)
    n_states: int = field(init=False)
    actions: np.ndarray = field(init=False)  # (n_feasible, n_agents) action indices
    rewards: np.ndarray = field(init=False)  # (n_agents, n_states, n_feasible)

    def __post_init__(self):
        self.agents = tuple(self.agents)
        if not self.agents:
            raise ModelError("a joint model needs at least one agent")
        if [ag.id for ag in self.agents] != list(range(len(self.agents))):
            raise ModelError("agent ids must be 0..n-1 in order")
        if not 0.0 < self.discount < 1.0:
            raise ModelError(f"discount must lie strictly inside (0, 1), got {self.discount}")
        self.shape = tuple(len(ag.states) for ag in self.agents)
        self.n_states = int(np.prod(self.shape))
        if self.n_states > MAX_JOINT_STATES:
            raise ModelError(f"{self.n_states} joint states exceeds the {MAX_JOINT_STATES} cap")
        ok = self.feasibility.predicate(self.agents)
        feasible = [a for a in itertools.product(*(range(len(ag.actions)) for ag in self.agents)) if ok(a)]
        null = tuple(ag.null_index for ag in self.agents)
        if null not in feasible:
            raise ModelError("the all-null joint action must be feasible")
        self.actions = np.array(feasible, dtype=np.intp).reshape(len(feasible), self.n_agents)
        self._flat_cols = np.ravel_multi_index(
            tuple(self.actions.T), tuple(len(ag.actions) for ag in self.agents)
        )
        self.null_column = feasible.index(null)
        locals_ = self.local_states()
        self.rewards = np.stack(
            [ag.reward[locals_[:, i]][:, self.actions[:, i]] for i, ag in enumerate(self.agents)]
        )
        self._kron_cache: dict[int, sp.csr_matrix] = {}

    # -- indexing -----------------------------------------------------------
    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def local_states(self) -> np.ndarray:
        """(n_states, n_agents) array of local state indices per joint state."""
        return np.array(np.unravel_index(np.arange(self.n_states), self.shape)).T.reshape(
            self.n_states, self.n_agents
        )

    def state_index(self, state: JointState) -> int:
        if len(state) != self.n_agents:
            raise ModelError(f"joint state {state!r} has wrong arity")
        idx = tuple(ag.state_index(x) for ag, x in zip(self.agents, state))
        return int(np.ravel_multi_index(idx, self.shape))

    def state_label(self, index: int) -> JointState:
        idx = np.unravel_index(int(index), self.shape)
        return tuple(ag.states[k] for ag, k in zip(self.agents, idx))

    def action_column(self, action: JointAction) -> int:
        if len(action) != self.n_agents:
            raise ModelError(f"joint action {action!r} has wrong arity")
        idx = np.array([ag.action_index(x) for ag, x in zip(self.agents, action)])
        hits = np.flatnonzero((self.actions == idx).all(axis=1))
        if hits.size == 0:
            raise ModelError(f"joint action {action!r} is infeasible")
        return int(hits[0])

    def action_label(self, column: int) -> JointAction:
        return tuple(ag.actions[k] for ag, k in zip(self.agents, self.actions[column]))

    def with_local(self, states: np.ndarray, agent: int, local: np.ndarray) -> np.ndarray:
        """Joint indices obtained by overwriting agent ``agent``'s component."""
        stride = int(np.prod(self.shape[agent + 1:]))
        current = (states // stride) % self.shape[agent]
        return states + (np.asarray(local) - current) * stride

    # -- dynamics -------------------------------------------------------------
    def expected_next(self, values: np.ndarray) -> np.ndarray:
        """``E[values(s') | s, a]`` for every joint state and feasible action.

        ``values`` may carry trailing dimensions; the result has shape
        ``(n_states, n_actions) + values.shape[1:]``.
        """
        values = np.asarray(values, dtype=float)
        extra = values.shape[1:]
        t = values.reshape(self.shape + extra)
        n = self.n_agents
        for ag in self.agents:
            # contract the leading next-state axis, park (s_i, a_i) at the back
            t = np.tensordot(ag.transition, t, axes=([2], [0]))
            t = np.moveaxis(t, (0, 1), (-2, -1))
        # layout now: extra..., s_0, a_0, s_1, a_1, ...
        k = len(extra)
        order = [k + 2 * i for i in range(n)] + [k + 2 * i + 1 for i in range(n)] + list(range(k))
        t = t.transpose(order)
        n_flat = int(np.prod([len(ag.actions) for ag in self.agents]))
        t = t.reshape((self.n_states, n_flat) + extra)
        return t[:, self._flat_cols]

    def q_values(self, values: np.ndarray) -> np.ndarray:
        """System Q-values ``sum_i r_i + discount * E[V]``, shape (n_states, n_actions)."""
        return self.rewards.sum(axis=0) + self.discount * self.expected_next(values)

    def _kron(self, column: int) -> sp.csr_matrix:
        if column not in self._kron_cache:
            mat = sp.csr_matrix(np.ones((1, 1)))
            for ag, a in zip(self.agents, self.actions[column]):
                mat = sp.kron(mat, sp.csr_matrix(ag.transition[:, a, :]), format="csr")
            self._kron_cache[column] = mat
        return self._kron_cache[column]

    def transition_matrix(self, columns: np.ndarray) -> sp.csr_matrix:
        """Sparse joint transition matrix when state ``s`` takes action ``columns[s]``."""
        columns = np.asarray(columns)
        total = sp.csr_matrix((self.n_states, self.n_states))
        for col in np.unique(columns):
            mask = sp.diags((columns == col).astype(float))
            total = total + mask @ self._kron(int(col))
        return total.tocsr()


def build_joint(agents: Sequence[AgentModel | MarkovChainModel], feasibility: Feasibility | str = "all",
                discount: float = 0.9) -> JointModel:
    """Compose agents into a joint model; chains are lifted to two-action MDPs."""
    if isinstance(feasibility, str):
        feasibility = Feasibility(feasibility)
    lifted = [ag.as_agent() if isinstance(ag, MarkovChainModel) else ag for ag in agents]
    return JointModel(tuple(lifted), feasibility, float(discount))


def bellman_residual(model: JointModel, values: np.ndarray) -> float:
    return float(np.max(np.abs(model.q_values(values).max(axis=1) - values)))


def value_iterate(model: JointModel, tol: float = DEFAULT_TOL, max_iter: int = 1_000_000) -> np.ndarray:
    """Optimal system value by value iteration.

    Returns ``V`` whose Bellman residual is at most ``tol``; by contraction
    it lies within ``tol * discount / (1 - discount)`` of the optimum.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    v = np.zeros(model.n_states)
    for _ in range(max_iter):
        tv = model.q_values(v).max(axis=1)
        if np.max(np.abs(tv - v)) <= tol:
            return v
        v = tv
    raise RuntimeError("value iteration did not converge")  # pragma: no cover


def greedy_columns(q: np.ndarray, rtol: float = 1e-12, atol: float = 1e-12) -> np.ndarray:
    """Row-wise argmax that treats near-equal entries as ties and takes the first."""
    best = q.max(axis=1, keepdims=True)
    close = q >= best - (atol + rtol * np.abs(best))
    return close.argmax(axis=1)


def extract_policy(model: JointModel, values: np.ndarray) -> np.ndarray:
    """Greedy feasible action column per joint state.

    Ties go to the lexicographically smallest joint action, which is the
    lowest column because feasible actions are stored in that order.
    """
    return greedy_columns(model.q_values(values))


def solve(model: JointModel, tol: float = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Convenience: ``(V, policy)``."""
    v = value_iterate(model, tol)
    return v, extract_policy(model, v)


def evaluate_rewards(model: JointModel, columns: np.ndarray, rewards: np.ndarray) -> np.ndarray:
    """Exact discounted value of per-state reward streams under a policy.

    ``rewards`` has shape (n_states,) or (n_states, k); solves
    ``(I - discount * P) v = rewards`` by sparse LU.
    """
    p = model.transition_matrix(columns)
    a = (sp.identity(model.n_states, format="csc") - model.discount * p).tocsc()
    return splu(a).solve(np.asarray(rewards, dtype=float))


def agent_values(model: JointModel, policy: np.ndarray) -> np.ndarray:
    """Per-agent exact discounted values, shape (n_agents, n_states)."""
    rows = np.arange(model.n_states)
    r = model.rewards[:, rows, policy].T  # (n_states, n_agents)
    return np.atleast_2d(evaluate_rewards(model, policy, r).T.reshape(model.n_agents, model.n_states))


def evaluate_policy(model: JointModel, policy: np.ndarray) -> np.ndarray:
    """Exact full-system value of ``policy`` on every joint state."""
    rows = np.arange(model.n_states)
    return evaluate_rewards(model, policy, model.rewards[:, rows, policy].sum(axis=0))


def evaluate_policy_subset(model: JointModel, policy: np.ndarray, exclude: int, s0: JointState) -> float:
    """Exact discounted reward of every agent except ``exclude`` from ``s0``.

    This is the others' value under the *actual* policy, not the optimum of
    the problem with ``exclude`` removed.
    """
    if not 0 <= exclude < model.n_agents:
        raise ModelError(f"no agent {exclude}")
    s = model.state_index(s0)
    if model.n_agents == 1:
        return 0.0
    rows = np.arange(model.n_states)
    keep = [i for i in range(model.n_agents) if i != exclude]
    r = model.rewards[keep][:, rows, policy].sum(axis=0)
    return float(evaluate_rewards(model, policy, r)[s])


def step(model: JointModel, state: JointState, action: JointAction,
         rng: np.random.Generator) -> tuple[JointState, np.ndarray]:
    """Sample one joint transition; returns the successor and per-agent rewards."""
    col = model.action_column(action)
    local = [ag.state_index(x) for ag, x in zip(model.agents, state)]
    nxt, rewards = [], np.empty(model.n_agents)
    for ag, s, a in zip(model.agents, local, model.actions[col]):
        rewards[ag.id] = ag.reward[s, a]
        row = ag.transition[s, a]
        k = int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))
        nxt.append(ag.states[min(k, len(row) - 1)])
    return tuple(nxt), rewards
