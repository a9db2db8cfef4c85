"""Simulators, the exact oracle POMDP and trajectory sampling."""
from .base import (EpsilonGreedy, FixedPolicy, Trajectory, UniformPolicy,
                   episode_rngs, run_episode, sample_trajectories)
from .oracle import OraclePomdp, default_oracle, oracle_probabilities

__all__ = [
    "EpsilonGreedy", "FixedPolicy", "Trajectory", "UniformPolicy", "episode_rngs",
    "run_episode", "sample_trajectories", "OraclePomdp", "default_oracle",
    "oracle_probabilities",
]
