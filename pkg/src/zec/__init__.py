"""Multi-agent DQN energy sharing for nearly-zero-energy communities."""

from zec.domain import (
    Action,
    BatteryBank,
    EnergyLevel,
    HouseConfig,
    ScenarioConfig,
    Season,
    discretize,
    table1_configs,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "BatteryBank",
    "EnergyLevel",
    "HouseConfig",
    "ScenarioConfig",
    "Season",
    "discretize",
    "table1_configs",
]
