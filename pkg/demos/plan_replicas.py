"""
Planning the number of task replicas
====================================

Closed-form delay, arrival-rate and reliability calculations for a highway
segment, and the replica plan they produce.
"""

import numpy as np

from vecrep.analytics import (
    NetworkConditions,
    execution_delay_curve,
    failure_probability,
    optimal_replicas,
    theoretical_optimum_search,
)

# 25 vehicles/km, one task vehicle for every three service vehicles,
# 200 m radio range and 2 tasks/s per task vehicle.
cond = NetworkConditions.from_density(2.0, 1 / 3)
print(f"task vehicles in range: {cond.gamma_bar_t:.1f}, service vehicles: {cond.gamma_bar_s:.1f}")

# Delay first falls with K (more chances of a fast server), then rises
# once the extra replicas overload the servers.
curve = execution_delay_curve(cond, 10)
for k, d in enumerate(curve, start=1):
    print(f"K={k:2d}  delay {1000 * d:6.1f} ms  P(all erased) {failure_probability(cond, k):.1e}")
print("best K by search:", theoretical_optimum_search(cond))

# The plan rounds the closed-form optimum and raises it to the
# reliability floor when a failure target is given.
print(optimal_replicas(cond))
strict = NetworkConditions.from_density(2.0, 1 / 3, p_e=0.05, theta_f=1e-9)
print("with a 1e-9 failure target:", optimal_replicas(strict).k_star)

# Heavier load pushes the optimum down.
for lam in np.arange(2.0, 5.5, 1.0):
    plan = optimal_replicas(NetworkConditions.from_density(lam, 1 / 3))
    print(f"lambda0={lam}: K~={plan.k_tilde:.2f} -> K*={plan.k_star}")
