import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coordmech.fixtures import FIG1_START, constant_chain, fig1, fig1_agents, random_joint
from coordmech.mdp_core import (
    AgentModel,
    Feasibility,
    MarkovChainModel,
    ModelError,
    bellman_residual,
    build_joint,
    evaluate_policy,
    evaluate_policy_subset,
    extract_policy,
    solve,
    step,
    value_iterate,
)

seeds = st.integers(0, 2**31 - 1)


def brute_force_optimum(model, s0):
    """Best value over every deterministic stationary policy (tiny models only)."""
    cols = range(len(model.actions))
    best = -np.inf
    for policy in itertools.product(cols, repeat=model.n_states):
        best = max(best, evaluate_policy(model, np.array(policy))[model.state_index(s0)])
    return best


def test_fig1_optimal_value():
    model = fig1()
    v, pi = solve(model)
    s = model.state_index(FIG1_START)
    assert v[s] == pytest.approx(9.0, abs=1e-8)
    assert evaluate_policy(model, pi)[s] == pytest.approx(9.0, abs=1e-12)
    assert model.action_label(pi[s]) == ("a1", "a2")
    assert v[model.state_index(("C", "E"))] == pytest.approx(4.0, abs=1e-8)


def test_fig1_without_each_agent():
    model = fig1()
    _, pi = solve(model)
    # others' value under pi*: without agent 1 it is agent 0's 5.0, without agent 0 it is 4.0
    assert evaluate_policy_subset(model, pi, 1, FIG1_START) == pytest.approx(5.0, abs=1e-12)
    assert evaluate_policy_subset(model, pi, 0, FIG1_START) == pytest.approx(4.0, abs=1e-12)


def test_joint_state_order_is_product_order():
    model = fig1()
    labels = [model.state_label(s) for s in range(model.n_states)]
    assert labels == list(itertools.product("BCD", "EFG"))


def test_single_activation_feasibility():
    model = build_joint([constant_chain(0, 1.0), constant_chain(1, 2.0)], "single_activation", 0.9)
    # null/null plus one activation per chain
    assert len(model.actions) == 3
    assert (model.actions[model.null_column] == [1, 1]).all()


def test_constant_chains_value():
    model = build_joint([constant_chain(0, 1.0), constant_chain(1, 2.0)], "single_activation", 0.9)
    v, pi = solve(model)
    assert v[0] == pytest.approx(20.0, abs=1e-8)
    assert model.action_label(pi[0]) == ("null", "act")


@pytest.mark.parametrize("bad", [
    dict(transition=np.full((1, 2, 1), 0.9)),
    dict(reward=-np.ones((1, 2))),
    dict(actions=("a", "b")),
])
def test_agent_model_rejects_bad_input(bad):
    kw = dict(id=0, states=("x",), actions=("a", "null"), transition=np.ones((1, 2, 1)), reward=np.zeros((1, 2)))
    kw.update(bad)
    with pytest.raises(ModelError):
        AgentModel(**kw)


def test_chain_rejects_bad_rows():
    with pytest.raises(ModelError):
        MarkovChainModel(0, ("x", "y"), np.array([[0.5, 0.6], [0, 1]]), np.zeros(2))


@pytest.mark.parametrize("gamma", [0.0, 1.0, 1.5])
def test_discount_must_be_inside_unit_interval(gamma):
    with pytest.raises(ModelError):
        fig1(gamma)


def test_null_action_must_be_feasible():
    with pytest.raises(ModelError):
        build_joint(fig1_agents(), Feasibility("explicit", (("a1", "a2"),)), 0.9)


def test_explicit_feasibility():
    model = build_joint(fig1_agents(), Feasibility("explicit", (("a1", "null"), ("null", "null"))), 0.9)
    assert len(model.actions) == 2


def test_bad_agent_ids():
    a, b = fig1_agents()
    with pytest.raises(ModelError):
        build_joint([b, a], "all", 0.9)


def test_step_reproducible_and_valid():
    model = fig1()
    a = [step(model, FIG1_START, ("a1", "a2"), np.random.default_rng(3)) for _ in range(2)]
    assert a[0][0] == a[1][0]
    assert a[0][0][0] in ("C", "D")
    assert np.allclose(a[0][1], [0.5, 0.4])


def test_step_frequencies():
    model = fig1()
    rng = np.random.default_rng(0)
    hits = sum(step(model, FIG1_START, ("a1", "null"), rng)[0][0] == "D" for _ in range(4000))
    assert abs(hits / 4000 - 0.5) < 0.03


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_value_iteration_residual_and_policy_consistency(seed):
    model, _ = random_joint(np.random.default_rng(seed))
    v = value_iterate(model, tol=1e-10)
    assert bellman_residual(model, v) <= 1e-10
    pi = extract_policy(model, v)
    # the greedy policy's exact value is within the VI error bound of V*
    bound = 2e-10 * model.discount / (1 - model.discount) + 1e-9
    assert np.max(np.abs(evaluate_policy(model, pi) - v)) <= bound


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_solve_matches_policy_enumeration(seed):
    model, s0 = random_joint(np.random.default_rng(seed), max_agents=2, max_states=2, max_actions=2)
    if len(model.actions) ** model.n_states > 4096:
        return
    v, _ = solve(model)
    assert v[model.state_index(s0)] == pytest.approx(brute_force_optimum(model, s0), abs=1e-8)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_agent_values_sum_to_system_value(seed):
    from coordmech.mdp_core import agent_values

    model, s0 = random_joint(np.random.default_rng(seed))
    _, pi = solve(model)
    per_agent = agent_values(model, pi)
    assert np.allclose(per_agent.sum(axis=0), evaluate_policy(model, pi), atol=1e-10)
    for i in range(model.n_agents):
        if model.n_agents > 1:
            expect = per_agent.sum(axis=0)[model.state_index(s0)] - per_agent[i, model.state_index(s0)]
            assert evaluate_policy_subset(model, pi, i, s0) == pytest.approx(expect, abs=1e-10)
