"""Reference policies and rollout-based average-cost estimation."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .env import SINGLEHOP, EnvParams, NetworkState, VecQueueEnv


def maxweight_action(state: NetworkState) -> int:
    """Serve argmax_k q_k * y_k, lowest index on ties."""
    return int(np.argmax(state.q * state.y))


def shortest_queue_action(state: NetworkState) -> int:
    """Route to argmin_k q_k, lowest index on ties."""
    return int(np.argmin(state.q))


# Batched variants over (R, K) arrays; np.argmax/argmin already pick the first max.
def maxweight_batch(q, y):
    return np.argmax(q * y, axis=-1)


def shortest_queue_batch(q, y):
    return np.argmin(q, axis=-1)


def baseline_for(kind: str):
    """The non-learning reference policy (pi_0) for an environment kind."""
    return maxweight_batch if kind == SINGLEHOP else shortest_queue_batch


def trajectory_seed(env_seed: int, index: int, purpose: int = 0) -> np.random.SeedSequence:
    """Deterministic seed for the ``index``-th evaluation trajectory of an env."""
    return np.random.SeedSequence([int(env_seed) % 2**64, int(purpose), int(index)])


@dataclass
class RolloutStats:
    avg_cost: float
    trajectory_costs: list
    steps: int
    overflowed: bool = False
    trajectory_overflowed: list = field(default_factory=list)


def run_policy(params_list, seeds, policy, traj_len: int):
    """Run one trajectory per (params, seed) pair in lock step.

    ``policy(q, y, env)`` maps batched (R, K) queue/capacity arrays to R actions;
    ``env`` is the running :class:`VecQueueEnv` (gives access to ``observe``).
    Returns per-run time-averaged costs and overflow flags.
    """
    env = VecQueueEnv(params_list, [np.random.default_rng(s) for s in seeds])
    env.reset()
    total = np.zeros(env.R)
    for _ in range(traj_len):
        a = policy(env.q, env.y, env)
        total += env.step(a)
    return total / traj_len, env.overflowed.copy()


def _as_batch_policy(policy):
    """Accept either a batched ``(q, y[, env])`` policy or a per-state one."""
    if policy in (maxweight_batch, shortest_queue_batch):
        return lambda q, y, env: policy(q, y)
    if getattr(policy, "batched", False):
        return policy

    def wrapped(q, y, env):
        return np.array([policy(NetworkState(q[r], y[r])) for r in range(len(q))])
    return wrapped


def estimate_avg_cost(params: EnvParams, policy, num_traj: int = 3, traj_len: int = 50_000,
                      seeds=None, purpose: int = 0) -> RolloutStats:
    """Average of ``num_traj`` time-averaged trajectory costs under ``policy``.

    ``policy`` is a per-state function (``NetworkState -> action``), one of the
    batched baselines, or any callable flagged ``batched = True`` taking
    ``(q, y, env)``. Seeds default to ones derived from ``params.seed``.
    """
    if seeds is None:
        seeds = [trajectory_seed(params.seed, i, purpose) for i in range(num_traj)]
    seeds = list(seeds)
    costs, over = run_policy([params] * len(seeds), seeds, _as_batch_policy(policy), traj_len)
    return RolloutStats(avg_cost=float(np.mean(costs)), trajectory_costs=[float(c) for c in costs],
                        steps=traj_len, overflowed=bool(over.any()),
                        trajectory_overflowed=[bool(o) for o in over])


def write_rollout_csv(path, rows):
    """rows: iterable of (env_id, policy, seed, avg_cost)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["env_id", "policy", "seed", "avg_cost"])
        for env_id, pol, seed, c in rows:
            w.writerow([env_id, pol, seed, repr(float(c))])
