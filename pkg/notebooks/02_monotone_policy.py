"""
A switch-type policy network
============================

The STN scores each queue with one shared scalar network whose weights are
all exp(W) > 0 and whose activations are clamps, so the score can only rise
when that queue's row rises. A softmax over the scores then never moves
probability away from a queue whose own state grew.
"""
import numpy as np

from switchnet import MlpPolicy, StnPolicy
from switchnet.env import ENC_BARE

rng = np.random.default_rng(0)
stn = StnPolicy(n=2, scheme=ENC_BARE, rng=rng)
mlp = MlpPolicy(K=3, n=2, scheme=ENC_BARE, rng=rng, out_gain=1.0)

obs = np.array([[4.0, 1.0], [2.0, 2.0], [7.0, 0.0]])   # rows are (q_k, y_k)
bumped = obs.copy()
bumped[1] += [3.0, 1.0]                                  # queue 2 gets longer and faster

for name, pol in (("stn", stn), ("mlp", mlp)):
    p, p2 = pol.probs(obs), pol.probs(bumped)
    print(f"{name}: P(queue 2) {p[1]:.3f} -> {p2[1]:.3f}")

# the guarantee holds for any weights, not just this draw: scramble them
for layer in stn.net.dense_layers():
    layer.W[:] = rng.normal(-1.0, 2.0, layer.W.shape)
    layer.b[:] = rng.normal(0.0, 3.0, layer.b.shape)
obs = rng.exponential(5.0, (10_000, 3, 2))
i = rng.integers(0, 3, 10_000)
bumped = obs.copy()
bumped[np.arange(10_000), i] += rng.exponential(2.0, (10_000, 2))
rows = np.arange(10_000)
drop = stn.probs(obs)[rows, i] - stn.probs(bumped)[rows, i]
print("largest probability drop over 10k random bumps:", drop.max())

# permuting queues permutes scores: the same f is applied to every row
perm = [2, 0, 1]
print("equivariant:", np.allclose(stn.logits(obs[:5, perm]), stn.logits(obs[:5])[:, perm]))
