"""Sequential Groves / VCG transfers and an exact best-response oracle.

A mechanism here maps the current joint report (a joint-state index) and
the planner's action column to one transfer per agent.  All methods are
vectorised over arrays of periods or replicas.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp_core import (
    JointAction,
    JointModel,
    JointState,
    ModelError,
    agent_values,
    evaluate_policy_subset,
    evaluate_rewards,
    greedy_columns,
    solve,
)


@dataclass(frozen=True)
class ChargeSchedule:
    """Per-period constant VCG charges ``(1 - discount) * V_{-i}(s0)``."""

    charges: np.ndarray
    s0: JointState
    discount: float


class Mechanism:
    """Transfer rule evaluated from current reports only."""

    name = "base"
    history_dependent = False

    def __init__(self, model: JointModel, policy: np.ndarray | None = None):
        self.model = model
        if policy is None:
            _, policy = solve(model)
        self.policy = np.asarray(policy)

    def decide(self, reports: np.ndarray) -> np.ndarray:
        return self.policy[reports]

    def transfers(self, reports: np.ndarray, actions: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _period_rewards(self, reports, actions):
        # (..., n_agents) rewards evaluated at the reported states
        return np.moveaxis(self.model.rewards[:, reports, actions], 0, -1)


class Groves(Mechanism):
    name = "groves"

    def transfers(self, reports, actions):
        r = self._period_rewards(reports, actions)
        return r.sum(axis=-1, keepdims=True) - r


class VCG(Mechanism):
    name = "vcg"

    def __init__(self, model: JointModel, s0: JointState, policy: np.ndarray | None = None):
        super().__init__(model, policy)
        self.schedule = precompute_vcg_charges(model, s0, self.policy)

    def transfers(self, reports, actions):
        r = self._period_rewards(reports, actions)
        return r.sum(axis=-1, keepdims=True) - r - self.schedule.charges


class WithheldGroves(Mechanism):
    """Negative control: the planner pays nothing, so agents chase own reward."""

    name = "withheld"

    def transfers(self, reports, actions):
        return np.zeros(np.shape(reports) + (self.model.n_agents,))


class OwnReportCharge(Mechanism):
    """Negative control: Groves payment minus a charge on the agent's *own* claimed prospects.

    The charge ``(1 - discount) * V_i(reported state)`` depends on what the
    agent reports, so understating one's state lowers the bill.
    """

    name = "vcg-own-report"

    def __init__(self, model: JointModel, policy: np.ndarray | None = None):
        super().__init__(model, policy)
        self.own_values = agent_values(model, self.policy)  # (n_agents, n_states)

    def transfers(self, reports, actions):
        r = self._period_rewards(reports, actions)
        charge = (1 - self.model.discount) * np.moveaxis(self.own_values[:, reports], 0, -1)
        return r.sum(axis=-1, keepdims=True) - r - charge


MECHANISMS = {"groves": Groves, "vcg": VCG, "withheld": WithheldGroves, "vcg-own-report": OwnReportCharge}


def make_mechanism(name: str, model: JointModel, s0: JointState, policy: np.ndarray | None = None) -> Mechanism:
    try:
        cls = MECHANISMS[name]
    except KeyError:
        raise ValueError(f"unknown mechanism {name!r}; choose from {sorted(MECHANISMS)}") from None
    if cls is VCG:
        return VCG(model, s0, policy)
    return cls(model, policy)


# -- scalar, label-level operations -------------------------------------------

def _period_rewards_at(model: JointModel, reports: JointState, action: JointAction) -> np.ndarray:
    s = model.state_index(reports)
    a = model.action_column(action)
    return model.rewards[:, s, a]


def groves_transfers(model: JointModel, reports: JointState, action: JointAction) -> np.ndarray:
    """Each agent receives the others' period rewards at their reported states."""
    r = _period_rewards_at(model, reports, action)
    return r.sum() - r


def precompute_vcg_charges(model: JointModel, s0: JointState, policy: np.ndarray | None = None) -> ChargeSchedule:
    """Charges from the model and ``s0`` alone, by exact policy evaluation."""
    if policy is None:
        _, policy = solve(model)
    gamma = model.discount
    charges = np.array([(1 - gamma) * evaluate_policy_subset(model, policy, i, s0) for i in range(model.n_agents)])
    return ChargeSchedule(charges, tuple(s0), gamma)


def vcg_transfers(model: JointModel, reports: JointState, action: JointAction, charges: ChargeSchedule) -> np.ndarray:
    return groves_transfers(model, reports, action) - charges.charges


# -- exact evaluation under truthful play ---------------------------------------

def truthful_payoff_streams(mechanism: Mechanism) -> np.ndarray:
    """Per-period payoff (intrinsic + transfer) of each agent in each true state, truthful play.

    Shape (n_states, n_agents).
    """
    model = mechanism.model
    rows = np.arange(model.n_states)
    acts = mechanism.decide(rows)
    return model.rewards[:, rows, acts].T + mechanism.transfers(rows, acts)


def truthful_values(mechanism: Mechanism) -> np.ndarray:
    """Exact expected discounted payoff per agent and start state, shape (n_agents, n_states)."""
    model = mechanism.model
    streams = truthful_payoff_streams(mechanism)
    return np.atleast_2d(evaluate_rewards(model, mechanism.policy, streams).T)


def truthful_transfer_values(mechanism: Mechanism) -> np.ndarray:
    """Exact expected discounted transfers per agent, shape (n_agents, n_states)."""
    model = mechanism.model
    rows = np.arange(model.n_states)
    acts = mechanism.decide(rows)
    return np.atleast_2d(evaluate_rewards(model, mechanism.policy, mechanism.transfers(rows, acts)).T)


def budget_identity(model: JointModel, s0: JointState, policy: np.ndarray | None = None) -> float:
    """``(n - 1) * V(s0) - sum_i V_{-i}(s0)`` under the planner's policy; zero when exact."""
    if policy is None:
        _, policy = solve(model)
    vals = agent_values(model, policy)[:, model.state_index(s0)]
    total = vals.sum()
    others = sum(evaluate_policy_subset(model, policy, i, s0) for i in range(model.n_agents))
    return float((model.n_agents - 1) * total - others)


# -- best-response oracle ---------------------------------------------------------

@dataclass
class BestResponse:
    deviator: int
    values: np.ndarray  # exact value of the optimal deviation policy per true joint state
    truthful: np.ndarray  # exact value of truthful reporting per true joint state
    reports: np.ndarray  # optimal reported local state index per true joint state

    @property
    def gap(self) -> float:
        return float(np.max(self.values - self.truthful))


def best_response_value(model: JointModel, mechanism: Mechanism, deviator: int,
                        tol: float = 1e-12) -> BestResponse:
    """Solve the deviator's reporting MDP exactly, others truthful.

    Decision states are true joint states (the deviator sees everything);
    actions are claimed local states; the planner answers each claim with its
    policy and pays the mechanism's transfers.  The deviation policy found by
    value iteration is then evaluated exactly, with ties resolved toward the
    truthful report.
    """
    if mechanism.history_dependent:
        raise ValueError("oracle requires transfers that depend on current reports only")
    if not 0 <= deviator < model.n_agents:
        raise ModelError(f"no agent {deviator}")
    gamma = model.discount
    n_s = model.n_states
    n_r = model.shape[deviator]
    rows = np.arange(n_s)
    local = model.local_states()[:, deviator]
    claims = np.stack([model.with_local(rows, deviator, k) for k in range(n_r)], axis=1)  # (n_s, n_r)
    acts = mechanism.decide(claims)
    own = model.agents[deviator].reward[local[:, None], model.actions[acts, deviator]]
    pay = own + mechanism.transfers(claims, acts)[..., deviator]

    def q_of(v):
        return pay + gamma * model.expected_next(v)[rows[:, None], acts]

    v = np.zeros(n_s)
    while True:
        tv = q_of(v).max(axis=1)
        if np.max(np.abs(tv - v)) <= tol:
            break
        v = tv
    q = q_of(v)
    # put the truthful claim first so ties keep it
    order = np.argsort(np.arange(n_r)[None, :] != local[:, None], axis=1, kind="stable")
    best = order[rows, greedy_columns(np.take_along_axis(q, order, axis=1), rtol=1e-12, atol=1e-11)]

    def exact(choice):
        cols = acts[rows, choice]
        return evaluate_rewards(model, cols, pay[rows, choice])

    return BestResponse(deviator, exact(best), exact(local), best)


def brute_force_best_response(model: JointModel, mechanism: Mechanism, deviator: int) -> np.ndarray:
    """Enumerate every deterministic stationary reporting policy; tiny models only."""
    import itertools

    n_s, n_r = model.n_states, model.shape[deviator]
    if n_r**n_s > 200_000:
        raise ValueError("too many reporting policies to enumerate")
    rows = np.arange(n_s)
    local = model.local_states()[:, deviator]
    best = np.full(n_s, -np.inf)
    for choice in itertools.product(range(n_r), repeat=n_s):
        claims = model.with_local(rows, deviator, np.array(choice))
        acts = mechanism.decide(claims)
        own = model.agents[deviator].reward[local, model.actions[acts, deviator]]
        pay = own + mechanism.transfers(claims, acts)[:, deviator]
        best = np.maximum(best, evaluate_rewards(model, acts, pay))
    return best
