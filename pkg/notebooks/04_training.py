"""
Training an STN and an MLP with PPO
===================================

Short run on one sampled single-hop environment. The log tracks the
5000-step moving average cost divided by MaxWeight's cost; below 1 means the
learned policy is beating MaxWeight. Set STEPS to 300_000 for the desk-scale
comparison (about a minute per network).
"""
import numpy as np

from switchnet.experiments import evaluate_policy
from switchnet.ppo import PpoConfig, train
from switchnet.sampling import CheckConfig, build_env_set

STEPS = 40_000

es = build_env_set("singlehop", 1, master_seed=3, config=CheckConfig(traj_len=20_000))
env, Jb = es.envs[0], es.baseline_costs[0]
print("lambda", np.round(env.lam, 2), "mu", np.round(env.mu, 2), "MaxWeight cost", round(Jb, 2))

for arch in ("stn", "mlp"):
    cfg = PpoConfig(total_steps=STEPS, encoding="bare")
    res = train([env], arch, cfg, baseline_costs=[Jb])
    curve = [r["moving_avg_cost"] / Jb for r in res.log]
    print(arch, "normalized moving average:", np.round(curve[::4], 2))
    (rec,) = evaluate_policy(res.policy, [env], [Jb], num_traj=3, traj_len=20_000)
    print(arch, "greedy evaluation J0 =", round(rec.J0, 3))
