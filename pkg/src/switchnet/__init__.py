"""Switch-type policy networks for queueing-network control."""
from .env import (EnvParams, NetworkState, QueueEnv, VecQueueEnv, cost, encode_observation,
                  multipath_step, sample_exogenous, singlehop_step)
from .baselines import estimate_avg_cost, maxweight_action, shortest_queue_action
from .policies import CriticNet, MlpPolicy, StnPolicy
from .ppo import PpoConfig, train

__all__ = [
    "EnvParams", "NetworkState", "QueueEnv", "VecQueueEnv", "cost", "encode_observation",
    "multipath_step", "sample_exogenous", "singlehop_step", "estimate_avg_cost",
    "maxweight_action", "shortest_queue_action", "CriticNet", "MlpPolicy", "StnPolicy",
    "PpoConfig", "train",
]
