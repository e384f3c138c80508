"""
Checking the delay model by simulation
======================================

Monte Carlo estimates of the replica-count sweep next to the closed form,
plus a single M/M/1 queue run through the event engine.
"""

from vecrep.analytics import execution_delay_curve, table_conditions, theoretical_optimum_search
from vecrep.simcore import mm1_sojourns, monte_carlo_argmin

cond = table_conditions(3.0, 1 / 4)
k_sim, results = monte_carlo_argmin(cond, k_max=8, n_tasks=100_000, seed=1)
theory = execution_delay_curve(cond, 8)
for r, d in zip(results, theory):
    print(f"K={r.K}: simulated {1000 * r.mean_delay:6.2f} ms (+/- {1000 * r.std_error:.2f}), model {1000 * d:6.2f} ms")
print("argmin simulated:", k_sim, " model:", theoretical_optimum_search(cond, 8))

# Queue sanity: mean sojourn of M/M/1 is 1 / (mu - lambda).
s = mm1_sojourns(lam=6.0, mu=10.0, n_tasks=1_000_000, seed=0)
print(f"M/M/1 mean sojourn {s.mean():.4f} s vs {1 / 4:.4f} s")
