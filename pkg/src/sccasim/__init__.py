"""Service chain composition as a weighted potential game.

Library + CLI: system model and strategy spaces, cost/potential
mathematics, distributed sampling schemes with a best-response baseline,
tree-search and policy-gradient composers, an exact oracle for enumerable
instances, and a seeded experiment harness with CSV traces.
"""

from .model import (
    ConfigError,
    GameParams,
    LatencyRule,
    PlayerSpec,
    ScenarioConfig,
    Strategy,
    StrategyProfile,
    SystemTopology,
    VmInstance,
    VnfType,
    build_players,
    build_scenario,
    build_topology,
    builtin_config,
    load_config,
    strategy_space,
    strategy_spaces,
)
from .game import (
    CostBreakdown,
    Deviation,
    expected_cost,
    hamming,
    is_nash_equilibrium,
    latency_cost,
    potential,
    weighted_average_cost,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CostBreakdown",
    "Deviation",
    "GameParams",
    "LatencyRule",
    "PlayerSpec",
    "ScenarioConfig",
    "Strategy",
    "StrategyProfile",
    "SystemTopology",
    "VmInstance",
    "VnfType",
    "build_players",
    "build_scenario",
    "build_topology",
    "builtin_config",
    "expected_cost",
    "hamming",
    "is_nash_equilibrium",
    "latency_cost",
    "load_config",
    "potential",
    "strategy_space",
    "strategy_spaces",
    "weighted_average_cost",
    "__version__",
]
