"""Vehicle-to-vehicle sidelink simulator with learned resource allocation.

Layers, bottom up: scenario (ring road mobility), channel (path loss,
shadowing, fading, SIC reception), sps (sensing-based semi-persistent
scheduling), kpi (AoI, queues, energy), env (the per-slot engine and MDP
interface), mpdqn (the learning agent), baselines (random / fixed / GA),
expcli (experiment sweeps and CSV outputs).
"""

__version__ = "0.1.0"

from .baselines import FixedPolicy, GaConfig, GeneticOptimizer, RandomPolicy
from .channel import ChannelParams
from .env import AccessMode, EnvParams, ObjectiveWeights, SidelinkEnv, run_episode
from .kpi import AoiLedger, EnergyLedger, PriorityQueues
from .mpdqn import AgentParams, AgentPolicy, MpdqnAgent, evaluate, train
from .scenario import ConfigError, ScenarioConfig
from .sps import Mode, RRI_CHOICES, SpsParams

__all__ = [
    "AccessMode", "AgentParams", "AgentPolicy", "AoiLedger", "ChannelParams",
    "ConfigError", "EnergyLedger", "EnvParams", "FixedPolicy", "GaConfig",
    "GeneticOptimizer", "Mode", "MpdqnAgent", "ObjectiveWeights",
    "PriorityQueues", "RRI_CHOICES", "RandomPolicy", "ScenarioConfig",
    "SidelinkEnv", "SpsParams", "evaluate", "run_episode", "train",
]
