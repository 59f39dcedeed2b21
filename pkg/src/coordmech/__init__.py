"""Sequential coordination mechanisms for self-interested agents with private Markov state."""

from .gittins import GittinsTable, gittins_index, gittins_table, index_policy
from .mdp_core import AgentModel, Feasibility, JointModel, MarkovChainModel, ModelError, build_joint, solve
from .mechanisms import VCG, Groves, best_response_value, budget_identity, make_mechanism
from .scenario import Scenario, ScenarioError, builtin, load_scenario

__version__ = "0.1.0"
