"""PPO with clipped surrogate, GAE and an entropy bonus for queue-control policies."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Adam, clip_grad_norm, log_softmax
from .baselines import trajectory_seed
from .env import VecQueueEnv, default_encoding, encoding_width
from .policies import CriticNet, make_policy

log = logging.getLogger(__name__)

TRAIN_PURPOSE = 3

STN_LR = 3e-3
MLP_LR = 3e-4


@dataclass
class PpoConfig:
    learning_rate: float | None = None  # None: 3e-3 for STN, 3e-4 for MLP
    critic_learning_rate: float | None = None  # None: same as the policy
    steps_per_env: int = 2000           # T_eps; batch = steps_per_env * number of envs
    minibatch_size: int = 100
    epochs_per_batch: int = 3
    gae_lambda: float = 0.95
    clip_eps: float = 0.1
    entropy_coef: float = 0.01
    gamma: float = 0.99
    value_coef: float = 0.5
    max_grad_norm: float | None = 0.5
    total_steps: int = 1_000_000        # summed over all training envs
    moving_avg_window: int = 5000
    normalize_advantages: bool = True
    # divide each env's cost by its baseline cost before turning it into a reward
    normalize_cost: bool = True
    seed: int = 0
    encoding: str | None = None         # None: the env kind's default encoding
    policy_kwargs: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.gae_lambda <= 1:
            raise ValueError("gae_lambda must be in (0, 1]")
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must be in (0, 1)")
        if self.steps_per_env % self.minibatch_size:
            raise ValueError("minibatch_size must divide the per-env batch length")

    def lr_for(self, kind: str) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return STN_LR if kind == "stn" else MLP_LR

    @property
    def batch_size(self) -> int:
        return self.steps_per_env

    def to_dict(self):
        return asdict(self)


@dataclass
class RolloutBatch:
    """Time-major records, arrays shaped (T, E, ...)."""
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    costs: np.ndarray
    values: np.ndarray
    last_values: np.ndarray
    env_ids: np.ndarray
    overflowed: np.ndarray

    def __len__(self):
        return self.actions.size


def collect_rollout(env: VecQueueEnv, policy, critic, steps: int, action_rngs, scheme: str,
                    env_ids=None) -> RolloutBatch:
    """Run ``policy`` for ``steps`` steps in every env of ``env`` (continuing, no resets)."""
    E, K = env.R, env.K
    n = encoding_width(scheme)
    obs = np.empty((steps, E, K, n))
    actions = np.empty((steps, E), dtype=np.int64)
    logps = np.empty((steps, E))
    costs = np.empty((steps, E))
    values = np.empty((steps, E))
    for t in range(steps):
        o = env.observe(scheme)
        a, lp, _ = policy.sample_actions(o, action_rngs)
        obs[t] = o
        actions[t] = a
        logps[t] = lp
        values[t] = critic.value(o)
        costs[t] = env.step(a)
    last = critic.value(env.observe(scheme))
    ids = np.arange(E) if env_ids is None else np.asarray(env_ids)
    return RolloutBatch(obs, actions, logps, costs, values, last, ids, env.overflowed.copy())


def compute_gae(rewards, values, last_values, gamma: float, lam: float):
    """GAE over time-major (T, ...) arrays; returns (advantages, value_targets)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    acc = np.zeros_like(rewards[0])
    next_v = np.asarray(last_values, dtype=np.float64)
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * next_v - values[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
        next_v = values[t]
    return adv, adv + values


def normalize(x):
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        return x - x.mean()
    return (x - x.mean()) / (x.std() + 1e-12)


def surrogate(ratio, adv, eps):
    """Per-sample clipped surrogate min(u A, clip(u, 1-eps, 1+eps) A)."""
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)


def ppo_loss(policy, critic, mb: dict, cfg: PpoConfig, backward: bool = True):
    """Loss on a minibatch dict (obs, actions, log_probs, advantages, targets).

    When ``backward`` is set the gradients are accumulated into the policy's
    and critic's buffers (callers zero them first).
    """
    obs, a = mb["obs"], mb["actions"]
    A, old_lp, targets = mb["advantages"], mb["log_probs"], mb["targets"]
    B = len(a)
    rows = np.arange(B)

    z = policy.logits(obs)
    lp = log_softmax(z)
    p = np.exp(lp)
    lp_a = lp[rows, a]
    ratio = np.exp(lp_a - old_lp)
    unclipped = ratio * A
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * A
    surr = np.minimum(unclipped, clipped)
    ent = -np.sum(p * lp, axis=1)

    v = critic.value(obs)
    verr = v - targets
    loss = -surr.mean() + cfg.value_coef * np.mean(verr ** 2) - cfg.entropy_coef * ent.mean()
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite PPO loss {loss!r}")

    use_unclipped = unclipped <= clipped
    diag = {
        "loss": float(loss),
        "ratio_mean": float(ratio.mean()),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps)),
        "entropy": float(ent.mean()),
        "value_loss": float(np.mean(verr ** 2)),
    }
    if backward:
        # d(-mean surr)/dz: surrogate depends on z only through lp_a when unclipped
        g_lpa = np.where(use_unclipped, ratio * A, 0.0)
        onehot = np.zeros_like(p)
        onehot[rows, a] = 1.0
        dz = -(g_lpa[:, None] * (onehot - p)) / B
        # dH/dz_j = -p_j (log p_j + H)
        dH = -p * (lp + ent[:, None])
        dz -= cfg.entropy_coef * dH / B
        policy.backward(dz)
        critic.backward(2.0 * cfg.value_coef * verr / B)
    return float(loss), diag


def _all_finite(params):
    return all(np.all(np.isfinite(p)) for p in params)


class MovingAverage:
    """Trailing mean of the last ``window`` costs per env."""

    def __init__(self, E: int, window: int):
        self.window = window
        self.buf = np.zeros((window, E))
        self.count = 0

    def push(self, costs):
        """costs: (T, E)."""
        for row in costs:
            self.buf[self.count % self.window] = row
            self.count += 1

    def value(self):
        m = min(self.count, self.window)
        if m == 0:
            return np.zeros(self.buf.shape[1])
        return self.buf[:m].mean(axis=0) if self.count < self.window else self.buf.mean(axis=0)


@dataclass
class TrainResult:
    policy: object
    critic: CriticNet
    log: list            # dict rows: step, env_id, moving_avg_cost, loss, clip_fraction, entropy, learning_rate
    diverged: bool = False
    overflowed: bool = False


LOG_FIELDS = ["step", "env_id", "moving_avg_cost", "loss", "clip_fraction", "entropy",
              "learning_rate"]


def write_train_log(path, rows, extra_fields=()):
    fields = list(extra_fields) + LOG_FIELDS
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r[f]) for f in fields])


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def train(envs, policy_kind: str, cfg: PpoConfig, baseline_costs=None, env_ids=None,
          progress=None) -> TrainResult:
    """Train one policy on all ``envs`` simultaneously (a single env is a list of one).

    Every batch collects ``cfg.steps_per_env`` steps from each env, then runs
    ``cfg.epochs_per_batch`` epochs of shuffled minibatch updates. One log row
    per env is emitted at each batch boundary.
    """
    envs = list(envs)
    E = len(envs)
    K, kind = envs[0].K, envs[0].kind
    scheme = cfg.encoding or default_encoding(kind)
    n = encoding_width(scheme)
    ids = list(range(E)) if env_ids is None else list(env_ids)
    lr = cfg.lr_for(policy_kind)
    ss = np.random.SeedSequence(cfg.seed)
    s_pol, s_crit, s_shuffle = ss.spawn(3)

    policy = make_policy(policy_kind, K, scheme, rng=np.random.default_rng(s_pol),
                         **cfg.policy_kwargs)
    critic = CriticNet(K, n, rng=np.random.default_rng(s_crit), value_scale=1.0 / (1.0 - cfg.gamma))
    opt_pi = Adam(policy.params(), lr=lr)
    opt_v = Adam(critic.params(), lr=cfg.critic_learning_rate or lr)
    shuffle_rng = np.random.default_rng(s_shuffle)

    env_seeds = [trajectory_seed(p.seed, cfg.seed, TRAIN_PURPOSE) for p in envs]
    env_rngs, act_rngs = [], []
    for s in env_seeds:
        a, b = s.spawn(2)
        env_rngs.append(np.random.default_rng(a))
        act_rngs.append(np.random.default_rng(b))
    venv = VecQueueEnv(envs, env_rngs)
    venv.reset()

    if cfg.normalize_cost and baseline_costs is not None:
        scale = np.maximum(np.asarray(baseline_costs, dtype=np.float64), 1e-8)
    else:
        scale = np.ones(E)

    ma = MovingAverage(E, cfg.moving_avg_window)
    rows = []
    n_batches = max(1, cfg.total_steps // (cfg.steps_per_env * E))
    diverged = False
    steps_done = 0
    for it in range(n_batches):
        good = (policy.copy(), critic.copy())
        batch = collect_rollout(venv, policy, critic, cfg.steps_per_env, act_rngs, scheme, ids)
        steps_done += cfg.steps_per_env
        ma.push(batch.costs)
        rewards = -batch.costs / scale
        adv, targets = compute_gae(rewards, batch.values, batch.last_values, cfg.gamma,
                                   cfg.gae_lambda)
        flat = {
            "obs": batch.obs.reshape(-1, K, n),
            "actions": batch.actions.reshape(-1),
            "log_probs": batch.log_probs.reshape(-1),
            "advantages": adv.reshape(-1),
            "targets": targets.reshape(-1),
        }
        if cfg.normalize_advantages:
            flat["advantages"] = normalize(flat["advantages"])
        N = flat["actions"].size
        diags = []
        try:
            for _ in range(cfg.epochs_per_batch):
                perm = shuffle_rng.permutation(N)
                for start in range(0, N, cfg.minibatch_size):
                    idx = perm[start:start + cfg.minibatch_size]
                    mb = {k: v[idx] for k, v in flat.items()}
                    policy.zero_grad()
                    critic.zero_grad()
                    _, d = ppo_loss(policy, critic, mb, cfg)
                    clip_grad_norm(policy.grads(), cfg.max_grad_norm)
                    clip_grad_norm(critic.grads(), cfg.max_grad_norm)
                    opt_pi.step(policy.grads())
                    opt_v.step(critic.grads())
                    diags.append(d)
                if not (_all_finite(policy.params()) and _all_finite(critic.params())):
                    raise FloatingPointError("non-finite parameters after update")
        except FloatingPointError as exc:
            log.warning("training diverged at batch %d: %s; keeping last good weights", it, exc)
            policy, critic = good
            diverged = True
        loss = float(np.mean([d["loss"] for d in diags])) if diags else float("nan")
        clipf = float(np.mean([d["clip_fraction"] for d in diags])) if diags else float("nan")
        ent = float(np.mean([d["entropy"] for d in diags])) if diags else float("nan")
        mav = ma.value()
        for e in range(E):
            rows.append({"step": steps_done, "env_id": ids[e], "moving_avg_cost": float(mav[e]),
                         "loss": loss, "clip_fraction": clipf, "entropy": ent,
                         "learning_rate": lr})
        if progress is not None:
            progress(it + 1, n_batches, mav)
        if diverged:
            break
    return TrainResult(policy, critic, rows, diverged, bool(venv.overflowed.any()))
