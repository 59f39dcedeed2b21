"""Command-line entry point.

Exit codes: 0 success, 1 verification failure, 2 input error.  Every
command assembles its full output before writing anything, so an error
never leaves partial output behind.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import gittins as gt
from .bandit_learning import parse_prior, truncated_index
from .checks import CHECKS, marginal_world_values, run_check
from .mdp_core import ModelError, evaluate_policy, solve
from .mechanisms import MECHANISMS, make_mechanism, truthful_values
from .scenario import SCENARIO_DIR, Scenario, ScenarioError, builtin, load_scenario
from .sim_harness import CHAIN_MECHANISMS, WORKERS_ENV, estimate_many, run_bandit, run_episode

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
INPUT_ERRORS = (ScenarioError, ModelError, FileNotFoundError, IsADirectoryError, ValueError, KeyError)


class InputError(Exception):
    pass


def resolve_scenario(ref: str) -> Scenario:
    """Load a scenario from a path, or a shipped one by stem (``fig1``)."""
    path = Path(ref)
    if path.is_file():
        return load_scenario(path)
    if path.suffix == "" and (SCENARIO_DIR / f"{ref}.json").is_file():
        return builtin(ref)
    raise FileNotFoundError(f"scenario file not found: {ref}")


def _apply_overrides(sc: Scenario, args) -> Scenario:
    kw = {}
    for key in ("seed", "replicas", "horizon", "mechanism", "m"):
        val = getattr(args, key, None)
        if val is not None:
            kw[key] = val
    if getattr(args, "epsilon", None) is not None:
        if sc.kind != "bandit":
            raise InputError("--epsilon only applies to bandit worlds")
        kw["bandit"] = replace(sc.bandit, trunc=replace(sc.bandit.trunc, epsilon=args.epsilon))
    return replace(sc, **kw) if kw else sc


def _fmt_state(state) -> str:
    return "(" + ",".join(map(str, state)) + ")"


# -- commands ---------------------------------------------------------------------------

def _index_tables(sc: Scenario) -> dict:
    if sc.kind == "chains":
        tables = gt.gittins_tables(sc.chains, sc.discount)
        return json.loads(gt.tables_to_json(tables, sc.discount))
    if sc.kind == "bandit":
        b = sc.bandit
        rows = []
        for i, prior in enumerate(b.priors):
            st = parse_prior(prior)
            rows.append({"agent": i, "prior": prior, "successes": st.successes, "failures": st.failures,
                         "mean": st.mean, "index": truncated_index(st, b.discount, b.trunc)})
        return {"discount": b.discount, "epsilon": b.trunc.epsilon, "depth": b.trunc.depth(b.discount),
                "tables": rows}
    raise InputError("index tables need a markov-chain or bandit world")


def cmd_solve(sc: Scenario, args) -> tuple[int, str]:
    if sc.kind != "mdp":
        return EXIT_OK, json.dumps(_index_tables(sc), indent=2)
    model = sc.joint()
    _, policy = solve(model)
    values = evaluate_policy(model, policy)  # exact value of the greedy policy
    lines = [f"discount {model.discount}", f"V*{_fmt_state(sc.s0)} = {values[model.state_index(sc.s0)]:.12g}", "",
             "state\tV*\tpi*"]
    for s in range(model.n_states):
        lines.append(f"{_fmt_state(model.state_label(s))}\t{values[s]:.12g}\t"
                     f"{_fmt_state(model.action_label(policy[s]))}")
    return EXIT_OK, "\n".join(lines)


def cmd_index(sc: Scenario, args) -> tuple[int, str]:
    return EXIT_OK, json.dumps(_index_tables(sc), indent=2)


def exact_per_period_payoffs(sc: Scenario, mechanism: str) -> list[float] | None:
    """Expected per-period payoff ``(1 - discount) * value`` per agent under truthful reporting."""
    if mechanism in MECHANISMS:
        model = sc.joint()
        _, policy = solve(model)
        mech = make_mechanism(mechanism, model, sc.s0, policy)
        vals = truthful_values(mech)[:, model.state_index(sc.s0)]
    elif mechanism == "dgv" and sc.kind == "chains":
        mv = marginal_world_values(sc.chains, sc.discount, sc.s0)
        vals = mv["own"] + mv["groves"] - mv["charge"]
    else:
        return None
    return ((1 - sc.discount) * np.asarray(vals)).tolist()


def cmd_simulate(sc: Scenario, args) -> tuple[int, str, dict]:
    if sc.kind == "bandit":
        return cmd_bandit(sc, args)
    tr = run_episode(sc)
    summary = {"scenario": sc.name, "scenario_hash": sc.digest(), "episode": tr.summary(),
               "expected_per_period_payoff": exact_per_period_payoffs(sc, sc.mechanism)}
    if sc.replicas >= 2:
        n = sc.n_agents
        names = ["net_transfer", "net_transfer_routed", "welfare"]
        names += [f"payoff:{i}" for i in range(n)] + [f"ir_violation:{i}" for i in range(n)]
        reports = estimate_many(sc, names)
        summary["monte_carlo"] = {k: v.to_dict() for k, v in reports.items()}
    files = {}
    if args.out:
        out = Path(args.out)
        files[out / "transcript.csv"] = tr.to_csv
        files[out / "summary.json"] = json.dumps(summary, indent=2) + "\n"
    return EXIT_OK, json.dumps(summary, indent=2), files


def cmd_bandit(sc: Scenario, args) -> tuple[int, str, dict]:
    if sc.kind != "bandit":
        raise InputError("bandit needs a bandit world")
    tr = run_bandit(sc)
    summary = {
        "scenario": sc.name, "scenario_hash": sc.digest(), "seed": tr.seed, "horizon": tr.horizon,
        "activation_share": [tr.activation_share(i) for i in range(tr.n_agents)],
        "total_reward": float(tr.outcome.sum()),
        "net_transfer": float(tr.transfers.sum()),
        "mean_argmax_calls": float(tr.argmax_calls.mean()),
        "frontier_requests": int(tr.frontier_requests.sum()),
    }
    files = {}
    if args.out:
        out = Path(args.out)
        files[out / "transcript.csv"] = tr.to_csv
        files[out / "summary.json"] = json.dumps(summary, indent=2) + "\n"
    return EXIT_OK, json.dumps(summary, indent=2), files


def cmd_verify(sc: Scenario, args) -> tuple[int, str]:
    result = run_check(args.check, sc, args.replicas)
    return (EXIT_OK if result.passed else EXIT_FAIL), result.line()


DEFAULT_SCENARIO = {"learning-equiv": "two_arm_bandit", "gittins-optimal": "deceptive_pair",
                    "scaling": "constant_chains"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coordmech", description="Coordination mechanisms for agents with private Markov state.",
                                epilog=f"Worker processes for Monte Carlo: set {WORKERS_ENV}.")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_arg(sp, optional=False):
        if optional:
            sp.add_argument("scenario", nargs="?", help="scenario JSON path or shipped name")
        else:
            sp.add_argument("scenario", help="scenario JSON path or shipped name (fig1, deceptive_pair, ...)")

    sp = sub.add_parser("solve", help="print V* and pi*, or index tables")
    scenario_arg(sp)
    sp.add_argument("--out", help="write the report to this file")

    sp = sub.add_parser("index", help="print Gittins index tables")
    scenario_arg(sp)
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--out")

    for name, helptext in (("simulate", "run an episode and Monte Carlo summary"),
                           ("bandit", "run the learning mechanism on a bandit world")):
        sp = sub.add_parser(name, help=helptext)
        scenario_arg(sp)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--replicas", type=int)
        sp.add_argument("--horizon", type=int)
        sp.add_argument("--mechanism", choices=sorted(set(MECHANISMS) | set(CHAIN_MECHANISMS)))
        sp.add_argument("--m", type=int)
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--out", help="directory for transcript.csv and summary.json")

    sp = sub.add_parser("verify", help="run a named acceptance check")
    scenario_arg(sp, optional=True)
    sp.add_argument("--check", required=True, choices=CHECKS)
    sp.add_argument("--replicas", type=int, help="Monte Carlo replicas (ir) or seeds (learning-equiv)")
    return p


def _write_outputs(files: dict) -> None:
    for path, content in files.items():
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        if callable(content):
            content(tmp)
        else:
            tmp.write_text(content)
        tmp.replace(path)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        ref = args.scenario or DEFAULT_SCENARIO.get(getattr(args, "check", None), "fig1")
        sc = resolve_scenario(ref)
        if args.command == "verify":
            code, text = cmd_verify(sc, args)
            print(text)
            return code
        sc = _apply_overrides(sc, args)
        handler = {"solve": cmd_solve, "index": cmd_index, "simulate": cmd_simulate, "bandit": cmd_bandit}[args.command]
        out = handler(sc, args)
        code, text = out[0], out[1]
        files = out[2] if len(out) > 2 else ({Path(args.out): text + "\n"} if getattr(args, "out", None) else {})
        _write_outputs(files)
    except (InputError, *INPUT_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
