import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coordmech import gittins as gt
from coordmech.checks import gittins_optimality_gaps, marginal_world_values
from coordmech.fixtures import DECEPTIVE_START, constant_chain, deceptive_pair, decaying_chain, random_chain, random_chains
from coordmech.mdp_core import MarkovChainModel, build_joint, evaluate_policy

seeds = st.integers(0, 2**31 - 1)


def stopping_index(chain, start, discount, depth=60):
    """sup over stopping sets of E[sum g^t r] / E[sum g^t], by enumerating every stopping set.

    A stopping set is a subset of states (not containing ``start`` at time 0)
    at which the chain is retired; values come from a long finite rollout.
    """
    k = chain.n_states
    p, r = chain.transition, chain.reward
    best = -np.inf
    for mask in itertools.product([False, True], repeat=k):
        stop = np.array(mask)
        num = den = 0.0
        dist = np.zeros(k)
        dist[start] = 1.0
        for t in range(depth):
            alive = dist.copy() if t == 0 else np.where(stop, 0.0, dist)
            num += discount**t * alive @ r
            den += discount**t * alive.sum()
            dist = alive @ p
        best = max(best, num / den)
    return best


@pytest.mark.parametrize("c", [0.0, 0.3, 1.0, 2.5])
def test_constant_chain_index(c):
    assert gt.gittins_index(constant_chain(0, c), "s", 0.9) == pytest.approx(c, abs=1e-10)


def test_decaying_chain_index():
    ch = decaying_chain(0)
    assert gt.gittins_index(ch, "s1", 0.5) == pytest.approx(1.0, abs=1e-10)
    assert gt.gittins_index(ch, "s2", 0.5) == pytest.approx(0.0, abs=1e-10)
    assert stopping_index(ch, 0, 0.5) == pytest.approx(1.0, abs=1e-10)


def test_rejects_nonpositive_tol():
    with pytest.raises(ValueError):
        gt.gittins_index(constant_chain(0, 1.0), "s", 0.9, tol=0)


@settings(max_examples=20, deadline=None)
@given(seeds, st.sampled_from([0.5, 0.9]))
def test_index_matches_stopping_time_oracle(seed, gamma):
    rng = np.random.default_rng(seed)
    ch = random_chain(rng, 0, int(rng.integers(1, 4)))
    for s in range(ch.n_states):
        oracle = stopping_index(ch, s, gamma, depth=400 if gamma == 0.9 else 80)
        assert gt.gittins_index(ch, s, gamma) == pytest.approx(oracle, abs=1e-7)


@settings(max_examples=30, deadline=None)
@given(seeds, st.sampled_from([0.5, 0.9]))
def test_index_at_least_never_restart_value(seed, gamma):
    rng = np.random.default_rng(seed)
    ch = random_chain(rng, 0, int(rng.integers(1, 5)))
    stay = np.linalg.solve(np.eye(ch.n_states) - gamma * ch.transition, ch.reward)
    for s in range(ch.n_states):
        assert gt.gittins_index(ch, s, gamma) >= (1 - gamma) * stay[s] - 1e-9


def test_index_is_local():
    # same chain, other agents present or absent: identical table
    a = gt.gittins_tables(deceptive_pair(), 0.5)
    b = gt.gittins_tables([decaying_chain(1)], 0.5)
    assert np.array_equal(a[1].values, b[0].values)


def test_index_policy_examples():
    tables = gt.gittins_tables([constant_chain(0, 1.0), constant_chain(1, 2.0)], 0.9)
    assert gt.index_policy(tables, ("s", "s")) == 1
    ties = gt.gittins_tables([constant_chain(0, 1.0), constant_chain(1, 1.0)], 0.9)
    assert gt.index_policy(ties, ("s", "s")) == 0
    with pytest.raises(KeyError):
        gt.index_policy(tables, ("s", "zz"))
    with pytest.raises(ValueError):
        gt.index_policy(tables, ("s",))


def test_deceptive_pair_value():
    chains = deceptive_pair()
    model = build_joint(chains, "single_activation", 0.5)
    tables = gt.gittins_tables(chains, 0.5)
    assert gt.index_policy(tables, DECEPTIVE_START) == 1
    cols = gt.index_policy_columns(model, tables)
    s = model.state_index(DECEPTIVE_START)
    assert evaluate_policy(model, cols)[s] == pytest.approx(1.5, abs=1e-12)
    # exhaustive over stationary joint policies
    best = max(evaluate_policy(model, np.array(p))[s]
               for p in itertools.product(range(len(model.actions)), repeat=model.n_states))
    assert best == pytest.approx(1.5, abs=1e-12)


def test_index_policy_optimal_on_seeded_instances():
    assert max(gittins_optimality_gaps(30, seed=11)) <= 1e-6


def test_table_json_round_trip():
    chains = deceptive_pair()
    tables = gt.gittins_tables(chains, 0.5)
    back = gt.tables_from_json(gt.tables_to_json(tables, 0.5), chains)
    for a, b in zip(tables, back):
        assert np.array_equal(a.values, b.values)


def test_reported_tables_override():
    tables = gt.gittins_tables(deceptive_pair(), 0.5)
    rep = gt.reported_tables(tables, {1: {"s1": 0.1}})
    assert rep[1]["s1"] == 0.1 and rep[1]["s2"] == tables[1]["s2"]
    assert tables[1]["s1"] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        gt.reported_tables(tables, {1: {"nope": 0.0}})


def test_advance_samples_deterministic_chains_match_real():
    chains = deceptive_pair()
    cs = gt.ChainSet(chains)
    mat = gt.table_matrix(gt.gittins_tables(chains, 0.5))
    trajs = gt.make_trajectories(np.array([0, 0]), seed=1, m=4, n_agents=2, marginal=False)
    for _ in range(3):
        gt.advance_samples(trajs, cs, mat)
    for tr in trajs:
        assert [float(x[0]) for x in tr.log] == [1.0, 0.5, 0.5]
    assert float(gt._sample_mean(trajs, 0)[0]) == 1.0


def test_marginal_trajectory_never_uses_excluded_agent():
    chains = [constant_chain(0, 5.0), constant_chain(1, 1.0), constant_chain(2, 2.0)]
    cs = gt.ChainSet(chains)
    mat = gt.table_matrix(gt.gittins_tables(chains, 0.9))
    groups = gt.make_trajectories(np.zeros(3, dtype=int), seed=0, m=2, n_agents=3, marginal=True)
    for g in groups:
        gt.advance_samples(g, cs, mat)
    assert [float(groups[0][0].log[0][0]), float(groups[1][0].log[0][0]), float(groups[2][0].log[0][0])] == [2.0, 5.0, 5.0]


def test_trajectory_streams_are_distinct():
    groups = gt.make_trajectories(np.zeros(2, dtype=int), seed=0, m=3, n_agents=2, marginal=True)
    stars = gt.make_trajectories(np.zeros(2, dtype=int), seed=0, m=3, n_agents=2, marginal=False)
    draws = [t.rng.random() for t in stars] + [t.rng.random() for g in groups for t in g]
    draws.append(gt.stream(0, gt.REAL_STREAM, 0).random())
    assert len(set(draws)) == len(draws)


def _log(values):
    t = gt.SampleTrajectory("pi*", None, np.zeros((1, 1), dtype=int), np.random.default_rng(0))
    t.log.append(np.array([values]))
    return t


def test_sgv_transfers_example():
    out = gt.sgv_transfers(1, 1.5, [_log(2.0)], 0, 3)
    assert np.allclose(out, [[-0.5, -2.0, -0.5]])


def test_sgv_rejects_empty_samples():
    with pytest.raises(ValueError):
        gt.sgv_transfers(0, 1.0, [], 0, 2)


def test_dgv_transfers_example():
    groups = [[_log(1.0)], [_log(3.0)], [_log(2.0)]]
    out = gt.dgv_transfers(0, 4.0, groups, 0)
    # activated agent 0 pays its own marginal charge; others get 4 minus theirs
    assert np.allclose(out, [[-1.0, 1.0, 2.0]])


def test_counter_counts_index_values():
    counter = gt.OpCounter()
    mat = np.array([[1.0], [2.0], [0.5]])
    assert gt.index_argmax(mat, np.zeros((1, 3), dtype=int), counter=counter)[0] == 1
    assert (counter.argmax_calls, counter.comparisons) == (1, 3)
    none = gt.index_argmax(mat, np.zeros((1, 3), dtype=int), np.zeros(3, dtype=bool))
    assert none[0] == -1


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_weak_budget_balance_exact(seed):
    chains, s0 = random_chains(np.random.default_rng(seed))
    for gamma in (0.5, 0.9):
        mv = marginal_world_values(chains, gamma, s0)
        # the marginal-world value cannot exceed what the others earn plus what i earns
        assert np.all(mv["charge"] <= mv["groves"] + mv["own"] + 1e-9)
        assert np.all(mv["groves"] - mv["charge"] <= 1e-9)


def test_chain_set_sampling():
    ch = MarkovChainModel(0, ("x", "y"), np.array([[0.25, 0.75], [1.0, 0.0]]), np.array([1.0, 0.0]))
    cs = gt.ChainSet([ch])
    u = np.array([0.0, 0.2, 0.25, 0.9, 0.999999])
    nxt = cs.next_state(np.zeros(5, dtype=int), np.zeros(5, dtype=int), u)
    assert nxt.tolist() == [0, 0, 1, 1, 1]
