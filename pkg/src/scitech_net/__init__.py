"""Two-layer (science/technology) network game and its network econometrics."""

from .dgp import DgpConfig, SimulatedDataset, simulate
from .estimators import EstimateResult, ObservedData, build_instruments, estimate_system, two_sls
from .game import EquilibriumResult, nash_equilibrium, planner_optimum
from .netcore import AgentAbilities, CommunityPartition, GameParameters, LayeredNetwork, check_stability

__version__ = "0.1.0"
