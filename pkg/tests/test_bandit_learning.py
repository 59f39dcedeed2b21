import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coordmech.bandit_learning import (
    BanditStrategy,
    FrontierMisreport,
    InconsistentIndex,
    InfoState,
    PriorReport,
    TruncationPolicy,
    index_at_depth,
    info_transition,
    parse_prior,
    run_centralized,
    run_learning_mechanism,
    truncated_chain,
    truncated_index,
    truncation_depth,
)
from coordmech.gittins import gittins_index

small = st.integers(0, 6)


@pytest.mark.parametrize("text,counts", [("01011", (3, 2)), ("", (0, 0)), ("000", (0, 3))])
def test_parse_prior(text, counts):
    s = parse_prior(PriorReport(0, text))
    assert (s.successes, s.failures) == counts
    assert (s.alpha, s.beta) == (1.0, 1.0)


@pytest.mark.parametrize("text", ["012", "a", "1 0"])
def test_parse_prior_rejects(text):
    with pytest.raises(ValueError):
        parse_prior(text)


def test_info_transition_fig2_configuration():
    s = parse_prior("010")
    (p, up), (q, down) = info_transition(s)
    assert p == pytest.approx(0.4) and q == pytest.approx(0.6)
    assert (up.successes, up.failures) == (2, 2)
    assert (down.successes, down.failures) == (1, 3)


def test_posterior_limits():
    assert InfoState(0, 0).mean == 0.5
    means = [InfoState(10**k, 0).mean for k in range(7)]
    assert all(a < b for a, b in zip(means, means[1:])) and means[-1] > 1 - 1e-5


def test_info_state_validation():
    with pytest.raises(ValueError):
        InfoState(-1, 0)
    with pytest.raises(ValueError):
        InfoState(0, 0, 0.0, 0.0)


def test_truncation_depth():
    assert truncation_depth(1e-6, 0.9, 1.0) == 153
    h = truncation_depth(1e-6, 0.9)
    assert 0.9**h / 0.1 <= 1e-6 < 0.9 ** (h - 1) / 0.1
    with pytest.raises(ValueError):
        TruncationPolicy(epsilon=1e-300, cap=100).depth(0.99)
    with pytest.raises(ValueError):
        truncation_depth(0.0, 0.9)


@settings(max_examples=30, deadline=None)
@given(small, small, st.integers(1, 5), st.sampled_from([0.5, 0.7, 0.9]))
def test_kernel_matches_restart_oracle(s, f, depth, gamma):
    st_ = InfoState(s, f)
    oracle = gittins_index(truncated_chain(st_, depth), 0, gamma, tol=1e-13)
    assert index_at_depth(st_, gamma, depth) == pytest.approx(oracle, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(small, small, st.integers(1, 6))
def test_index_monotone_in_outcomes(s, f, depth):
    g = lambda a, b: index_at_depth(InfoState(a, b), 0.9, depth)
    assert g(s + 1, f) >= g(s, f) - 1e-12
    assert g(s, f) >= g(s, f + 1) - 1e-12


def test_myopic_limit():
    st_ = parse_prior("0110")
    assert truncated_index(st_, 1e-6) == pytest.approx(st_.mean, abs=1e-5)


def test_index_at_least_mean():
    for s, f in [(0, 0), (3, 1), (0, 5), (20, 20)]:
        st_ = InfoState(s, f)
        assert truncated_index(st_, 0.9) >= st_.mean - 1e-12


def test_truncation_soundness_grid():
    trunc = TruncationPolicy(1e-6)
    h = trunc.depth(0.9)
    for s in range(0, 6):
        for f in range(0, 6):
            st_ = InfoState(s, f)
            assert abs(index_at_depth(st_, 0.9, h) - index_at_depth(st_, 0.9, h + 50)) <= 1e-6 * 0.1


def test_identical_arms_activate_agent_zero_first():
    for seed in range(5):
        tr = run_learning_mechanism(["01", "01"], [0.3, 0.3], 0.9, m=2, horizon=1, seed=seed)
        assert tr.activated[0] == 0


def test_learning_run_matches_centralized():
    for seed in range(5):
        tr = run_learning_mechanism(["", "1"], [0.6, 0.4], 0.9, m=4, horizon=60, seed=seed)
        assert np.array_equal(tr.activated, run_centralized(["", "1"], [0.6, 0.4], 0.9, horizon=60, seed=seed))


def test_conservation_one_arm_per_period():
    tr = run_learning_mechanism(["", "", ""], [0.7, 0.5, 0.2], 0.9, m=3, horizon=40, seed=2)
    counts = tr.true_counts.sum(axis=2)
    steps = np.diff(counts, axis=0)
    assert np.all(steps.sum(axis=1) == 1)
    assert np.all(steps[np.arange(len(steps)), tr.activated[:-1]] == 1)


def test_better_arm_share():
    shares = [run_learning_mechanism(["", ""], [0.9, 0.1], 0.9, m=4, horizon=200, seed=s).activation_share(0)
              for s in range(10)]
    assert np.median(shares) > 0.8


def test_frontier_misreport_keeps_own_charges():
    base = dict(priors=["", "", ""], ground_truth=[0.6, 0.5, 0.4], discount=0.9, m=3, horizon=30, seed=4)
    honest = run_learning_mechanism(**base)
    strategies = [BanditStrategy(0.9, TruncationPolicy()) for _ in range(3)]
    strategies[1] = FrontierMisreport(0.9, TruncationPolicy(), scale=0.1, shift=0.0)
    bent = run_learning_mechanism(**base, strategies=strategies)
    # agent 1's marginal world never asks agent 1 anything
    assert np.array_equal(honest.charges[:, 1], bent.charges[:, 1])


def test_two_agent_charges_ignore_index_claims():
    base = dict(priors=["", ""], ground_truth=[0.6, 0.5], discount=0.9, m=3, horizon=30, seed=4)
    honest = run_learning_mechanism(**base)
    strategies = [BanditStrategy(0.9, TruncationPolicy()), InconsistentIndex(0.9, TruncationPolicy(), 0.3)]
    bent = run_learning_mechanism(**base, strategies=strategies)
    assert np.array_equal(honest.charges, bent.charges)


def test_malformed_frontier_response_rejected():
    class Broken(BanditStrategy):
        def frontier(self, request):
            return "high"

    strategies = [BanditStrategy(0.9, TruncationPolicy()), Broken(0.9, TruncationPolicy())]
    with pytest.raises(ValueError):
        run_learning_mechanism(["", ""], [0.5, 0.5], 0.9, m=1, horizon=2, strategies=strategies)


def test_argmax_calls_linear():
    calls = [run_learning_mechanism([""] * n, [0.5] * n, 0.9, m=4, horizon=3).argmax_calls[0] for n in (2, 4, 8)]
    assert calls == [1 + 2 * 4, 1 + 4 * 4, 1 + 8 * 4]


def test_input_validation():
    with pytest.raises(ValueError):
        run_learning_mechanism([""], [0.5], 0.9)
    with pytest.raises(ValueError):
        run_learning_mechanism(["", ""], [0.5, 0.5], 0.9, horizon=0)
