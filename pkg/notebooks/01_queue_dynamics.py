"""
Queue dynamics and the two reference policies
=============================================

A single-hop switch serves one of K queues per step. Serving queue k removes
up to y_k packets, where y_k is that step's random capacity; every queue then
receives Poisson arrivals. MaxWeight serves argmax q_k * y_k.
"""
import numpy as np

from switchnet import EnvParams, NetworkState, maxweight_action, singlehop_step
from switchnet.baselines import estimate_avg_cost, shortest_queue_batch, maxweight_batch
from switchnet.env import MULTIPATH, SINGLEHOP

# one step by hand: serve queue 1 (index 0) with capacity 2
s = NetworkState(q=[3, 5], y=[2, 1])
s = singlehop_step(s, 0, arrivals=[1, 0], capacities=[1, 1])
print("after one step:", s.q)  # [2 5]

# MaxWeight weighs queue length by what can actually be served right now
print("MaxWeight on q=(3,2), y=(1,2):", maxweight_action(NetworkState([3, 2], [1, 2])))  # 1 -> queue 2

# long-run average cost (mean total backlog) of MaxWeight on a random env
env = EnvParams(SINGLEHOP, 4, mu=[2.0, 1.5, 2.5, 1.0], lam=[0.6, 0.3, 0.8, 0.2], seed=1)
stats = estimate_avg_cost(env, maxweight_batch, num_traj=3, traj_len=20_000)
print("MaxWeight average cost:", round(stats.avg_cost, 3), stats.trajectory_costs)

# serving round robin ignores the state and pays for it
rr = lambda q, y, e: np.full(len(q), e.t % 4)
rr.batched = True
print("round robin average cost:", round(estimate_avg_cost(env, rr, traj_len=20_000).avg_cost, 3))

# multi-path routing: one arrival per step goes to the shortest queue
mp = EnvParams(MULTIPATH, 8, mu=np.linspace(0.2, 0.9, 8), seed=2)
print("Shortest-Queue average cost:", round(estimate_avg_cost(mp, shortest_queue_batch, traj_len=20_000).avg_cost, 3))
