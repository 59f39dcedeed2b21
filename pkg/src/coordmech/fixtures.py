"""Named worlds used by tests, scripts and the shipped scenario files."""

from __future__ import annotations

import numpy as np

from .mdp_core import AgentModel, Feasibility, JointModel, MarkovChainModel, build_joint

FIG1_START = ("B", "E")


def fig1_agents() -> list[AgentModel]:
    """Two three-state agents.

    Agent 0 acts once in B (reward 0.5) and lands in C (reward 0 forever) or
    D (reward 1 forever) with equal probability.  Agent 1 earns 0.4 per
    period in E; F and G are unreachable padding.
    """
    # agent 0: states B, C, D; actions a1, null
    t0 = np.zeros((3, 2, 3))
    t0[0, 0] = [0.0, 0.5, 0.5]
    t0[1, 0, 1] = t0[2, 0, 2] = 1.0
    t0[:, 1, :] = np.eye(3)
    r0 = np.array([[0.5, 0.0], [0.0, 0.0], [1.0, 0.0]])
    # agent 1: states E, F, G; actions a2, null
    t1 = np.zeros((3, 2, 3))
    t1[:, 0, :] = np.eye(3)
    t1[:, 1, :] = np.eye(3)
    r1 = np.array([[0.4, 0.0], [0.0, 0.0], [0.0, 0.0]])
    return [
        AgentModel(0, ("B", "C", "D"), ("a1", "null"), t0, r0),
        AgentModel(1, ("E", "F", "G"), ("a2", "null"), t1, r1),
    ]


def fig1(discount: float = 0.9) -> JointModel:
    return build_joint(fig1_agents(), Feasibility("all"), discount)


def constant_chain(agent: int, reward: float, label: str = "s") -> MarkovChainModel:
    return MarkovChainModel(agent, (label,), np.ones((1, 1)), np.array([float(reward)]))


def decaying_chain(agent: int) -> MarkovChainModel:
    """s1 pays 1 once, then s2 pays 0 forever."""
    return MarkovChainModel(agent, ("s1", "s2"), np.array([[0.0, 1.0], [0.0, 1.0]]), np.array([1.0, 0.0]))


def deceptive_pair() -> list[MarkovChainModel]:
    """Chain A (constant 0.5) against chain B (1 then 0 forever); discount 0.5."""
    return [constant_chain(0, 0.5, "a"), decaying_chain(1)]


DECEPTIVE_START = ("a", "s1")


def random_agent(rng: np.random.Generator, agent: int, n_states: int, n_actions: int) -> AgentModel:
    """Uniform rewards and Dirichlet(1,...,1) rows; the last action is a freezing null."""
    states = tuple(f"s{k}" for k in range(n_states))
    actions = tuple(f"a{k}" for k in range(n_actions - 1)) + ("null",)
    transition = np.empty((n_states, n_actions, n_states))
    transition[:, :-1, :] = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions - 1))
    transition[:, -1, :] = np.eye(n_states)
    # renormalise away float drift so rows pass the 1e-12 check exactly
    transition /= transition.sum(axis=2, keepdims=True)
    reward = np.zeros((n_states, n_actions))
    reward[:, :-1] = rng.uniform(0.0, 1.0, size=(n_states, n_actions - 1))
    return AgentModel(agent, states, actions, transition, reward)


def random_joint(rng: np.random.Generator, max_agents: int = 3, max_states: int = 4,
                 max_actions: int = 3, discount: float | None = None) -> tuple[JointModel, tuple]:
    """Small random joint model plus a random start state."""
    n = int(rng.integers(1, max_agents + 1))
    agents = [
        random_agent(rng, i, int(rng.integers(1, max_states + 1)), int(rng.integers(2, max_actions + 1)))
        for i in range(n)
    ]
    kind = ("all", "single_activation")[int(rng.integers(0, 2))]
    gamma = float(rng.choice([0.5, 0.8, 0.9])) if discount is None else discount
    model = build_joint(agents, Feasibility(kind), gamma)
    s0 = tuple(ag.states[int(rng.integers(len(ag.states)))] for ag in agents)
    return model, s0


def random_chain(rng: np.random.Generator, agent: int, n_states: int) -> MarkovChainModel:
    p = rng.dirichlet(np.ones(n_states), size=n_states)
    p /= p.sum(axis=1, keepdims=True)
    return MarkovChainModel(agent, tuple(f"x{k}" for k in range(n_states)), p,
                            rng.uniform(0.0, 1.0, size=n_states))


def random_chains(rng: np.random.Generator, min_chains: int = 2, max_chains: int = 3,
                  max_states: int = 4) -> tuple[list[MarkovChainModel], tuple]:
    n = int(rng.integers(min_chains, max_chains + 1))
    chains = [random_chain(rng, i, int(rng.integers(1, max_states + 1))) for i in range(n)]
    s0 = tuple(c.states[int(rng.integers(c.n_states))] for c in chains)
    return chains, s0
