"""Named verification checks behind ``coordmech verify``."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import gittins as gt
from .bandit_learning import run_centralized, run_learning_mechanism
from .fixtures import constant_chain, random_chains, random_joint
from .mdp_core import (
    JointModel,
    agent_values,
    build_joint,
    evaluate_policy,
    solve,
    value_iterate,
)
from .mechanisms import best_response_value, budget_identity, make_mechanism, truthful_payoff_streams
from .scenario import Scenario
from .sim_harness import estimate, run_episode

CHECKS = ("truthful", "budget", "ir", "gittins-optimal", "learning-equiv", "scaling")


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    expected: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: measured={self.measured} expected={self.expected}"


def truthfulness_gaps(model: JointModel, s0, mechanisms=("groves", "vcg")) -> dict:
    _, policy = solve(model)
    gaps = {}
    for name in mechanisms:
        mech = make_mechanism(name, model, s0, policy)
        gaps[name] = [best_response_value(model, mech, i).gap for i in range(model.n_agents)]
    return gaps


def random_instances(count: int, seed: int = 2024, **kw):
    rng = np.random.default_rng(seed)
    return [random_joint(rng, **kw) for _ in range(count)]


def check_truthful(sc: Scenario, n_random: int = 50, tol: float = 1e-8) -> CheckResult:
    worst = 0.0
    model = sc.joint()
    for gaps in truthfulness_gaps(model, sc.s0).values():
        worst = max(worst, max(gaps))
    rand_worst = 0.0
    for m, s0 in random_instances(n_random):
        for gaps in truthfulness_gaps(m, s0).values():
            rand_worst = max(rand_worst, max(gaps))
    return CheckResult("truthful", worst <= tol and rand_worst <= tol,
                       {"scenario_max_gap": worst, "random_max_gap": rand_worst, "instances": n_random},
                       {"max_gap": f"<= {tol}"})


# -- index-policy worlds -------------------------------------------------------------

def _renumber(chains):
    return [dataclasses.replace(c, id=k) for k, c in enumerate(chains)]


def marginal_world_values(chains, discount: float, s0: tuple, tables=None) -> dict:
    """Exact expected charge, Groves payment and own value per agent for the distributed mechanism.

    ``charge[i]`` is the discounted system reward of the index policy in the
    world without ``i``; ``groves[i]`` and ``own[i]`` are the others' and
    ``i``'s discounted reward under the index policy with everyone present.
    """
    tables = tables if tables is not None else gt.gittins_tables(chains, discount)
    full = build_joint(chains, "single_activation", discount)
    cols = gt.index_policy_columns(full, tables)
    vals = agent_values(full, cols)[:, full.state_index(s0)]
    charge = np.zeros(len(chains))
    for i in range(len(chains)):
        rest = [c for j, c in enumerate(chains) if j != i]
        if not rest:
            continue
        sub = build_joint(_renumber(rest), "single_activation", discount)
        sub_tables = [t for j, t in enumerate(tables) if j != i]
        sub_cols = gt.index_policy_columns(sub, sub_tables)
        charge[i] = evaluate_policy(sub, sub_cols)[sub.state_index(tuple(x for j, x in enumerate(s0) if j != i))]
    return {"charge": charge, "groves": vals.sum() - vals, "own": vals, "system": float(vals.sum())}


def check_budget(sc: Scenario, n_random: int = 50, tol: float = 1e-9) -> CheckResult:
    measured, ok = {}, True
    if sc.kind == "mdp" or sc.mechanism not in ("sgv", "dgv"):
        ident = abs(budget_identity(sc.joint(), sc.s0))
        rand = max(abs(budget_identity(m, s0)) for m, s0 in random_instances(n_random))
        measured.update(scenario_identity=ident, random_identity=rand)
        ok = ident <= tol and rand <= tol
    else:
        mv = marginal_world_values(sc.chains, sc.discount, sc.s0)
        slack = mv["charge"] - (mv["groves"] + mv["own"])
        net = mv["groves"] - mv["charge"]
        measured.update(ir_slack=slack.tolist(), expected_net_per_agent=net.tolist())
        ok = bool(np.all(slack <= tol) and np.all(net <= tol))
    return CheckResult("budget", ok, measured, {"abs_error": f"<= {tol}"})


def check_ir(sc: Scenario, replicas: int = 10_000) -> CheckResult:
    model = sc.joint()
    groves = make_mechanism("groves", model, sc.s0)
    worst = float(truthful_payoff_streams(groves).min())
    tr = run_episode(sc, "groves", seed=sc.seed)
    realized = float(tr.payoffs().min())
    vcg_freq = [estimate(sc, "vcg", replicas=replicas, metric=f"ir_violation:{i}").mean for i in range(model.n_agents)]
    return CheckResult("ir", worst >= 0 and realized >= 0,
                       {"groves_min_period_payoff": worst, "groves_realized_min": realized,
                        "vcg_violation_frequency": vcg_freq},
                       {"groves_min_period_payoff": ">= 0"})


def gittins_optimality_gaps(count: int = 100, seed: int = 7) -> list[float]:
    rng = np.random.default_rng(seed)
    gaps = []
    for k in range(count):
        gamma = (0.5, 0.9)[k % 2]
        chains, s0 = random_chains(rng)
        model = build_joint(chains, "single_activation", gamma)
        tables = gt.gittins_tables(chains, gamma)
        cols = gt.index_policy_columns(model, tables)
        s = model.state_index(s0)
        gaps.append(abs(evaluate_policy(model, cols)[s] - value_iterate(model, 1e-12)[s]))
    return gaps


def check_gittins_optimal(sc: Scenario | None = None, count: int = 100, tol: float = 1e-6) -> CheckResult:
    gaps = gittins_optimality_gaps(count)
    return CheckResult("gittins-optimal", max(gaps) <= tol, {"max_gap": max(gaps), "instances": count},
                       {"max_gap": f"<= {tol}"})


def check_learning_equiv(sc: Scenario, seeds: int = 100, horizon: int | None = None) -> CheckResult:
    b = sc.bandit
    horizon = horizon or sc.horizon or 200
    mismatches = 0
    for seed in range(seeds):
        tr = run_learning_mechanism(b.priors, b.ground_truth, b.discount, b.trunc, sc.m, horizon, seed)
        central = run_centralized(b.priors, b.ground_truth, b.discount, b.trunc, horizon, seed)
        mismatches += int(not np.array_equal(tr.activated, central))
    return CheckResult("learning-equiv", mismatches == 0, {"mismatched_seeds": mismatches, "seeds": seeds},
                       {"mismatched_seeds": 0})


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def chain_comparison_counts(ns=(2, 4, 8, 16, 32), m: int = 4, horizon: int = 5) -> list[float]:
    """Index values examined per period by the centralised mechanism, one world per ``n``."""
    out = []
    for n in ns:
        chains = [constant_chain(i, 1.0 + i) for i in range(n)]
        sc = Scenario("scaling", "chains", 0.9, tuple("s" for _ in range(n)), chains=chains, mechanism="sgv", m=m)
        tr = run_episode(sc, horizon=horizon, seed=0)
        out.append(float(np.mean(tr.comparisons)))
    return out


def learning_counts(ns=(2, 4, 8, 16), m: int = 4, horizon: int = 10, discount: float = 0.9):
    calls, comps = [], []
    for n in ns:
        tr = run_learning_mechanism([""] * n, list(np.linspace(0.2, 0.8, n)), discount, m=m, horizon=horizon, seed=0)
        calls.append(float(np.mean(tr.argmax_calls)))
        comps.append(float(np.mean(tr.comparisons)))
    return calls, comps


def check_scaling(sc: Scenario | None = None) -> CheckResult:
    ns3 = (2, 4, 8, 16, 32)
    s3 = loglog_slope(ns3, chain_comparison_counts(ns3))
    ns5 = (2, 4, 8, 16)
    calls, comps = learning_counts(ns5)
    s5 = loglog_slope(ns5, calls)
    s5c = loglog_slope(ns5, comps)
    return CheckResult("scaling", 0.8 <= s3 <= 1.2 and 0.8 <= s5 <= 1.2,
                       {"centralised_exponent": s3, "learning_argmax_exponent": s5, "learning_examined_exponent": s5c},
                       {"exponents": "[0.8, 1.2]"})


def run_check(name: str, sc: Scenario, replicas: int | None = None) -> CheckResult:
    if name == "truthful":
        return check_truthful(sc)
    if name == "budget":
        return check_budget(sc)
    if name == "ir":
        return check_ir(sc, replicas or 10_000)
    if name == "gittins-optimal":
        return check_gittins_optimal(sc)
    if name == "learning-equiv":
        return check_learning_equiv(sc, replicas or 100)
    if name == "scaling":
        return check_scaling(sc)
    raise ValueError(f"unknown check {name!r}; choose from {CHECKS}")


__all__ = ["CHECKS", "CheckResult", "run_check", "marginal_world_values", "truthfulness_gaps",
           "gittins_optimality_gaps"]
