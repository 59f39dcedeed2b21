"""JSON model and scenario files.

Model file (general MDP world)::

    {"agents": [{"id": 0, "states": ["B", "C", "D"], "actions": ["a1", "null"],
                 "null_action": "null",
                 "transition": {"B": {"a1": [0, 0.5, 0.5], "null": [1, 0, 0]}, ...},
                 "reward": {"B": {"a1": 0.5, "null": 0}, ...}}],
     "feasibility": {"kind": "all" | "single_activation" | "explicit", "allowed": [[...], ...]},
     "discount": 0.9}

A scenario wraps a world with run settings::

    {"version": 1, "name": "fig1",
     "world": {"kind": "mdp", <model fields>, "initial_state": ["B", "E"]},
     "mechanism": "vcg", "strategies": [{"agent": 0, "kind": "truthful"}],
     "horizon": null, "replicas": 10000, "seed": 0, "m": 16}

``world.kind`` may also be ``"chains"`` (``{"chains": [{"id", "states",
"transition": [[...]], "reward": [...]}], "discount", "initial_state"}``)
or ``"bandit"`` (``{"arms": [{"ground_truth_p", "prior_string"}],
"discount", "epsilon", "r_max", "m", "horizon"}``).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bandit_learning import TruncationPolicy
from .mdp_core import AgentModel, Feasibility, JointModel, MarkovChainModel, ModelError, build_joint

SCENARIO_VERSION = 1
SCENARIO_DIR = Path(__file__).parent / "scenarios"
STRATEGY_KINDS = ("truthful", "fixed-misreport", "random-misreport", "index-manipulation", "frontier-misreport")


class ScenarioError(ValueError):
    """Schema or reference error in a scenario file."""


@dataclass
class Strategy:
    """How one agent reports.

    ``state_map`` maps true to claimed state labels (fixed misreport);
    ``prob`` is the per-period chance of a uniformly random claim;
    ``table`` overrides the agent's index claims (``{state: value}`` or a
    full list); ``frontier_scale``/``frontier_shift`` distort frontier index
    answers in the learning mechanism.
    """

    agent: int
    kind: str = "truthful"
    state_map: dict | None = None
    prob: float = 0.0
    table: dict | list | None = None
    frontier_scale: float = 1.0
    frontier_shift: float = 0.0
    claimed_prior: str | None = None
    index_shift: float = 0.0

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ScenarioError(f"unknown strategy kind {self.kind!r}")

    def to_dict(self) -> dict:
        out = {"agent": self.agent, "kind": self.kind}
        for key in ("state_map", "table", "claimed_prior"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        for key, default in (("prob", 0.0), ("frontier_scale", 1.0), ("frontier_shift", 0.0), ("index_shift", 0.0)):
            if getattr(self, key) != default:
                out[key] = getattr(self, key)
        return out


def truthful(n: int) -> list[Strategy]:
    return [Strategy(i) for i in range(n)]


@dataclass
class BanditWorld:
    ground_truth: list
    priors: list
    discount: float
    trunc: TruncationPolicy = field(default_factory=TruncationPolicy)

    @property
    def n_agents(self) -> int:
        return len(self.priors)


@dataclass
class Scenario:
    name: str
    kind: str  # "mdp" | "chains" | "bandit"
    discount: float
    s0: tuple = ()
    model: JointModel | None = None
    chains: list | None = None
    bandit: BanditWorld | None = None
    mechanism: str = "vcg"
    strategies: list = field(default_factory=list)
    horizon: int | None = None
    replicas: int = 1000
    seed: int = 0
    m: int = 16

    def __post_init__(self):
        if not self.strategies:
            self.strategies = truthful(self.n_agents)
        if len(self.strategies) != self.n_agents:
            raise ScenarioError(f"{len(self.strategies)} strategies for {self.n_agents} agents")
        if sorted(s.agent for s in self.strategies) != list(range(self.n_agents)):
            raise ScenarioError("strategy agent ids must cover 0..n-1 exactly once")
        self.strategies = sorted(self.strategies, key=lambda s: s.agent)

    @property
    def n_agents(self) -> int:
        if self.kind == "mdp":
            return self.model.n_agents
        if self.kind == "chains":
            return len(self.chains)
        return self.bandit.n_agents

    def joint(self) -> JointModel:
        """The general joint model (chains are lifted with single activation)."""
        if self.kind == "mdp":
            return self.model
        if self.kind == "chains":
            if self.model is None:
                self.model = build_joint(self.chains, Feasibility("single_activation"), self.discount)
            return self.model
        raise ScenarioError("bandit worlds have no finite joint model")

    def to_dict(self) -> dict:
        if self.kind == "mdp":
            world = {"kind": "mdp", **model_to_dict(self.model), "initial_state": list(self.s0)}
        elif self.kind == "chains":
            world = {"kind": "chains", "chains": [chain_to_dict(c) for c in self.chains],
                     "discount": self.discount, "initial_state": list(self.s0)}
        else:
            b = self.bandit
            world = {"kind": "bandit",
                     "arms": [{"ground_truth_p": p, "prior_string": s} for p, s in zip(b.ground_truth, b.priors)],
                     "discount": b.discount, "epsilon": b.trunc.epsilon, "r_max": b.trunc.r_max}
        return {"version": SCENARIO_VERSION, "name": self.name, "world": world, "mechanism": self.mechanism,
                "strategies": [s.to_dict() for s in self.strategies], "horizon": self.horizon,
                "replicas": self.replicas, "seed": self.seed, "m": self.m}

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


# -- models --------------------------------------------------------------------------

def agent_to_dict(agent: AgentModel) -> dict:
    return {
        "id": agent.id,
        "states": list(agent.states),
        "actions": list(agent.actions),
        "null_action": agent.null_action,
        "transition": {str(s): {str(a): agent.transition[i, j].tolist() for j, a in enumerate(agent.actions)}
                       for i, s in enumerate(agent.states)},
        "reward": {str(s): {str(a): float(agent.reward[i, j]) for j, a in enumerate(agent.actions)}
                   for i, s in enumerate(agent.states)},
    }


def agent_from_dict(doc: dict) -> AgentModel:
    try:
        states, actions = tuple(doc["states"]), tuple(doc["actions"])
        trans = np.array([[doc["transition"][str(s)][str(a)] for a in actions] for s in states], dtype=float)
        reward = np.array([[doc["reward"][str(s)][str(a)] for a in actions] for s in states], dtype=float)
        return AgentModel(int(doc["id"]), states, actions, trans, reward, doc.get("null_action", "null"))
    except KeyError as exc:
        raise ScenarioError(f"agent {doc.get('id', '?')}: missing entry {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"agent {doc.get('id', '?')}: {exc}") from None


def model_to_dict(model: JointModel) -> dict:
    feas = {"kind": model.feasibility.kind}
    if model.feasibility.kind == "explicit":
        feas["allowed"] = [list(a) for a in model.feasibility.allowed]
    return {"agents": [agent_to_dict(a) for a in model.agents], "feasibility": feas, "discount": model.discount}


def model_from_dict(doc: dict) -> JointModel:
    try:
        agents = [agent_from_dict(a) for a in doc["agents"]]
        feas = doc.get("feasibility", {"kind": "all"})
        return build_joint(agents, Feasibility(feas["kind"], tuple(feas.get("allowed", ()))), float(doc["discount"]))
    except KeyError as exc:
        raise ScenarioError(f"model: missing field {exc}") from None
    except ModelError as exc:
        raise ScenarioError(str(exc)) from None


def chain_to_dict(chain: MarkovChainModel) -> dict:
    return {"id": chain.id, "states": list(chain.states), "transition": chain.transition.tolist(),
            "reward": chain.reward.tolist()}


def chain_from_dict(doc: dict) -> MarkovChainModel:
    try:
        return MarkovChainModel(int(doc["id"]), tuple(doc["states"]), np.array(doc["transition"], dtype=float),
                                np.array(doc["reward"], dtype=float))
    except KeyError as exc:
        raise ScenarioError(f"chain {doc.get('id', '?')}: missing field {exc}") from None
    except (ModelError, ValueError) as exc:
        raise ScenarioError(str(exc)) from None


# -- scenarios ------------------------------------------------------------------------

def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    if doc.get("version", SCENARIO_VERSION) != SCENARIO_VERSION:
        raise ScenarioError(f"unsupported scenario version {doc.get('version')!r}")
    if "world" not in doc:
        raise ScenarioError("scenario: missing field 'world'")
    world = doc["world"]
    kind = world.get("kind")
    strategies = [Strategy(**s) for s in doc.get("strategies", [])] if doc.get("strategies") else []
    common = dict(
        name=doc.get("name", "scenario"),
        mechanism=doc.get("mechanism", "vcg"),
        strategies=strategies,
        horizon=doc.get("horizon", world.get("horizon")),
        replicas=int(doc.get("replicas", 1000)),
        seed=int(doc.get("seed", 0)),
        m=int(doc.get("m", world.get("m", 16))),
    )
    try:
        if kind == "mdp":
            model = model_from_dict(world)
            s0 = tuple(world["initial_state"])
            model.state_index(s0)
            return Scenario(kind="mdp", discount=model.discount, s0=s0, model=model, **common)
        if kind == "chains":
            chains = [chain_from_dict(c) for c in world["chains"]]
            if [c.id for c in chains] != list(range(len(chains))):
                raise ScenarioError("chain ids must be 0..n-1 in order")
            s0 = tuple(world["initial_state"])
            if len(s0) != len(chains):
                raise ScenarioError("initial_state needs one entry per chain")
            for c, x in zip(chains, s0):
                c.state_index(x)
            return Scenario(kind="chains", discount=float(world["discount"]), s0=s0, chains=chains, **common)
        if kind == "bandit":
            arms = world["arms"]
            trunc = TruncationPolicy(float(world.get("epsilon", 1e-6)), float(world.get("r_max", 1.0)))
            bw = BanditWorld([float(a["ground_truth_p"]) for a in arms], [str(a.get("prior_string", "")) for a in arms],
                             float(world["discount"]), trunc)
            for p in bw.ground_truth:
                if not 0.0 <= p <= 1.0:
                    raise ScenarioError(f"ground_truth_p {p} outside [0, 1]")
            for s in bw.priors:
                if set(s) - {"0", "1"}:
                    raise ScenarioError(f"prior string {s!r} may only contain 0/1")
            common["mechanism"] = doc.get("mechanism", "learning")
            return Scenario(kind="bandit", discount=bw.discount, bandit=bw, **common)
    except KeyError as exc:
        raise ScenarioError(f"world: missing field {exc}") from None
    except ModelError as exc:
        raise ScenarioError(str(exc)) from None
    raise ScenarioError(f"unknown world kind {kind!r}")


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from None
    return scenario_from_dict(doc)


def dump_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2) + "\n")


def builtin(name: str) -> Scenario:
    """Load one of the shipped scenario files by stem, e.g. ``"fig1"``."""
    return load_scenario(SCENARIO_DIR / f"{name}.json")
