"""
Comparing offloading policies on a synthetic highway
====================================================

Full event simulation of a density-matched ring road: random, genie,
single-server learning and replicated learning at the planned K.
"""

from vecrep.analytics import NetworkConditions
from vecrep.harness.experiment import ExperimentConfig, ScenarioSpec, run_experiment

cond = NetworkConditions.from_density(2.0, 1 / 4)
for policy in ("random", "genie", "single", "ltra"):
    cfg = ExperimentConfig(seed=11, policy=policy, horizon=120.0, conditions=cond,
                           scenario=ScenarioSpec(road_km=4.0))
    res = run_experiment(cfg)
    s = res.summary
    print(f"{policy:7s} K={s['K']}  mean delay {1000 * s['mean_delay_s']:6.1f} ms  "
          f"completed {s['completion_ratio']:.1%}")
