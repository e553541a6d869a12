"""
Switching curves from exact policy iteration
============================================

Two queues, Bernoulli(0.4) arrivals, capacities in {0, 1, 2} with
probabilities 0.5/0.3/0.2. Truncated MDPs of growing size are solved until the
policy stops changing on q1, q2 <= 20.
"""
import numpy as np

from switchnet.dp import approximate_mdp_sequence, export_decision_regions, is_switch_type

res = approximate_mdp_sequence()
print("converged at L =", res.L, "average cost", round(res.history[-1][1].gain, 4))

def show(y):
    grid = export_decision_regions(res.table, y)
    print(f"y = {y}   (1 = serve queue 1, 2 = serve queue 2; q1 down, q2 across)")
    for row in grid[:12, :12]:
        print(" ".join("12"[a] for a in row))

show((1, 1))   # equal capacities: serve the longer queue
show((2, 1))   # queue 1 is faster: its region grows

ok, bad = is_switch_type(res.table)
print("switch-type:", ok, "counterexamples:", len(bad))
