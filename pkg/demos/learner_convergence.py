"""
Learning which servers to replicate to
======================================

The replica learner against a stationary environment where the delay laws
are known, so its regret can be measured exactly.
"""

from collections import Counter

from vecrep.bandit import LearnerConfig, StationaryEnvironment, empirical_regret, gap_table, run_stationary

means = {f"sev{i}": m for i, m in enumerate([0.08, 0.1, 0.12, 0.15, 0.2, 0.25, 0.3, 0.4])}
env = StationaryEnvironment.exponential(means, d_max=0.5)
config = LearnerConfig(alpha=2 / 3, l=100, d_max=0.5, k_replicas=2)

best, gaps = gap_table(env, 2)
print(f"best pair expected delay: {best:.4f} s")

chosen, delays = run_stationary(env, config, horizon=5000, seed=3)
report = empirical_regret(chosen, env, 2, realized=delays)
print(f"regret after {report.horizon} tasks: {report.empirical_regret:.2f} s (bound {report.bound:.3g})")

# The chosen pair settles on the two fastest servers.
tail = Counter(tuple(sorted(s)) for s in chosen[-500:])
for pair, count in tail.most_common(3):
    print(f"{pair}: {count / 500:.0%} of the last 500 tasks")
