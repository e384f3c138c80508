"""Policies, experiment orchestration and the command-line interface."""

from vecrep.harness.experiment import (
    ConfigError,
    ExperimentConfig,
    ExperimentResult,
    MetricsRow,
    ScenarioSpec,
    SweepReport,
    run_experiment,
    sweep,
)
from vecrep.harness.policies import GeniePolicy, LearnerPolicy, RandomPolicy, make_policy_factory

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "GeniePolicy",
    "LearnerPolicy",
    "MetricsRow",
    "RandomPolicy",
    "ScenarioSpec",
    "SweepReport",
    "make_policy_factory",
    "run_experiment",
    "sweep",
]
