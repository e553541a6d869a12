"""Random environment generation with a baseline-rollout stabilizability filter."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import baseline_for, trajectory_seed
from .env import MULTIPATH, SINGLEHOP, EnvParams, VecQueueEnv

SH_QUEUES, SH_RATE_HIGH = 4, 3.0
MP_QUEUES, MP_RATE_HIGH = 8, 1.0

# purpose tag mixed into trajectory seeds of the stabilizability rollouts
CHECK_PURPOSE = 1


@dataclass
class CheckConfig:
    num_traj: int = 3
    traj_len: int = 50_000
    threshold: float = 200.0
    max_rejections: int = 1000
    # candidates simulated together; does not change which envs are accepted
    batch: int = 32


def _uniform_open(rng, high, size):
    x = rng.uniform(0.0, high, size=size)
    while np.any(x == 0.0):
        x[x == 0.0] = rng.uniform(0.0, high, size=int(np.sum(x == 0.0)))
    return x


def _env_seed(rng) -> int:
    return int(rng.integers(0, 2**63, dtype=np.int64))


def sample_singlehop_env(rng: np.random.Generator, K: int = SH_QUEUES) -> EnvParams:
    """K=4 queues, every arrival and service rate i.i.d. Uniform(0, 3)."""
    lam = _uniform_open(rng, SH_RATE_HIGH, K)
    mu = _uniform_open(rng, SH_RATE_HIGH, K)
    return EnvParams(SINGLEHOP, K, mu=mu, lam=lam, seed=_env_seed(rng))


def sample_multipath_env(rng: np.random.Generator, K: int = MP_QUEUES) -> EnvParams:
    """K=8 servers, service rates i.i.d. Uniform(0, 1), one arrival per step."""
    mu = _uniform_open(rng, MP_RATE_HIGH, K)
    return EnvParams(MULTIPATH, K, mu=mu, seed=_env_seed(rng))


SAMPLERS = {SINGLEHOP: sample_singlehop_env, MULTIPATH: sample_multipath_env}


def _baseline_costs(candidates, config: CheckConfig, early_reject: bool = True):
    """Baseline cost J per candidate.

    With ``early_reject`` a candidate whose accumulated cost already forces
    J > threshold is dropped from the simulation and reported as ``inf``.
    Dropping never alters the surviving runs' trajectories.
    """
    n, m, T = len(candidates), config.num_traj, config.traj_len
    params, seeds = [], []
    for p in candidates:
        for i in range(m):
            params.append(p)
            seeds.append(trajectory_seed(p.seed, i, CHECK_PURPOSE))
    pol = baseline_for(candidates[0].kind)
    env = VecQueueEnv(params, [np.random.default_rng(s) for s in seeds])
    env.reset()
    owner = np.repeat(np.arange(n), m)
    total = np.zeros(len(params))
    J = np.full(n, np.inf)
    alive = np.ones(n, dtype=bool)
    budget = config.threshold * m * T
    chunk = 500
    for t0 in range(0, T, chunk):
        for _ in range(min(chunk, T - t0)):
            total += env.step(pol(env.q, env.y))
        if early_reject:
            sums = np.bincount(owner, weights=total, minlength=n)
            dead = alive & (sums > budget)
            if dead.any():
                alive &= ~dead
                keep = alive[owner]
                env.select(keep)
                owner, total = owner[keep], total[keep]
                if not alive.any():
                    return J
    sums = np.bincount(owner, weights=total, minlength=n)
    J[alive] = sums[alive] / (m * T)
    return J


def stabilizability_check(params: EnvParams, config: CheckConfig | None = None):
    """Run the kind's baseline on ``params``; return (accepted, J_baseline)."""
    config = config or CheckConfig()
    J = float(_baseline_costs([params], config, early_reject=False)[0])
    return J <= config.threshold, J


@dataclass
class EnvSet:
    envs: list
    kind: str
    master_seed: int
    baseline_costs: list = field(default_factory=list)

    def __len__(self):
        return len(self.envs)

    def subset(self, idx) -> "EnvSet":
        return EnvSet([self.envs[i] for i in idx], self.kind, self.master_seed,
                      [self.baseline_costs[i] for i in idx])

    def to_csv(self, path):
        K = self.envs[0].K if self.envs else 0
        header = (["env_id", "kind", "K"] + [f"lambda_{k + 1}" for k in range(K)]
                  + [f"mu_{k + 1}" for k in range(K)] + ["J_baseline", "seed"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for j, (p, J) in enumerate(zip(self.envs, self.baseline_costs)):
                lam = [repr(float(x)) for x in p.lam] if p.lam is not None else [""] * K
                w.writerow([j, p.kind, p.K] + lam + [repr(float(x)) for x in p.mu]
                           + [repr(float(J)), p.seed])

    @classmethod
    def from_csv(cls, path, master_seed: int = 0) -> "EnvSet":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        envs, costs = [], []
        for r in rows:
            K = int(r["K"])
            lam = None
            if r["kind"] == SINGLEHOP:
                lam = [float(r[f"lambda_{k + 1}"]) for k in range(K)]
            mu = [float(r[f"mu_{k + 1}"]) for k in range(K)]
            envs.append(EnvParams(r["kind"], K, mu=mu, lam=lam, seed=int(r["seed"])))
            costs.append(float(r["J_baseline"]))
        kind = envs[0].kind if envs else SINGLEHOP
        return cls(envs, kind, master_seed, costs)


def build_env_set(kind: str, count: int, master_seed: int,
                  config: CheckConfig | None = None) -> EnvSet:
    """Sample candidates from ``master_seed`` until ``count`` pass the check.

    Candidates are drawn strictly in stream order and accepted in that order,
    so the result does not depend on ``config.batch``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    config = config or CheckConfig()
    rng = np.random.default_rng(master_seed)
    sampler = SAMPLERS[kind]
    envs, costs = [], []
    run_of_rejections = 0
    while len(envs) < count:
        cands = [sampler(rng) for _ in range(max(1, config.batch))]
        Js = _baseline_costs(cands, config)
        for p, J in zip(cands, Js):
            if J <= config.threshold:
                envs.append(p)
                costs.append(float(J))
                run_of_rejections = 0
                if len(envs) == count:
                    break
            else:
                run_of_rejections += 1
                if run_of_rejections >= config.max_rejections:
                    raise RuntimeError(
                        f"{run_of_rejections} consecutive candidates rejected "
                        f"(last J={J:.1f} > {config.threshold}); accepted {len(envs)}/{count}")
    return EnvSet(envs, kind, master_seed, costs)


def load_or_build(path, kind, count, master_seed, config=None) -> EnvSet:
    path = Path(path)
    if path.exists():
        return EnvSet.from_csv(path, master_seed)
    es = build_env_set(kind, count, master_seed, config)
    es.to_csv(path)
    return es
