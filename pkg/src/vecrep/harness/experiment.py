"""Experiment configuration, metrics emission and parameter sweeps.

Config JSON schema (all keys optional except ``seed``)::

    {
      "seed": 7,
      "policy": "ltra",                 # random | genie | single | ltra
      "K": null,                        # null -> analytics.optimal_replicas
      "horizon": 600.0,
      "horizon_unit": "s",              # "s" or "tasks"
      "background": "same",             # untagged TaVs: "same" or "random"
      "conditions": {"lambda0": 2, "mu_c": 10, "p_e": 0.02,
                     "gamma_t": 6.25, "gamma_s": 18.75, "R": 0.2, "theta_f": 1},
      "learner": {"alpha": 0.5, "l": 100, "d_max": 0.5},
      "scenario": {"kind": "synthetic", "road_km": 4.0, "max_speed": 20.0,
                   "min_speed": null, "mu_spread": 2.0, "pe_spread": 0.01,
                   "trace_path": null, "ring_length_m": null, "tagged": null,
                   "means": null, "on_empty": "fail"},
      "metrics_csv": null, "summary_json": null
    }

``scenario.kind`` is ``synthetic`` (density-matched ring built from
``conditions``), ``trace`` (CSV at ``trace_path``) or ``stationary``
(fixed arms with exponential delays of the given ``means``, horizon in
tasks, regret reported).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Literal, Mapping, Sequence

import numpy as np

from vecrep.analytics import NetworkConditions, ReplicaPlan, optimal_replicas
from vecrep.bandit import LearnerConfig, StationaryEnvironment, empirical_regret, run_stationary
from vecrep.harness.policies import POLICIES, make_policy_factory
from vecrep.simcore import Scenario, keyed_uniform, run
from vecrep.traffic import SEV, load_trace

METRICS_HEADER = ("task_index", "policy", "K", "inst_delay_s", "mean_delay_s", "completion_ratio", "failed")
SWEEP_AXES = ("K", "lambda0", "ratio")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass
class ScenarioSpec:
    kind: Literal["synthetic", "trace", "stationary"] = "synthetic"
    road_km: float = 4.0
    max_speed: float = 20.0
    min_speed: float | None = None
    mu_spread: float = 2.0
    pe_spread: float = 0.01
    trace_path: str | None = None
    ring_length_m: float | None = None
    tagged: list | None = None
    means: list[float] | None = None
    on_empty: Literal["error", "fail"] = "fail"


def _default_conditions() -> NetworkConditions:
    return NetworkConditions.from_density(2.0, 1 / 3)


@dataclass
class ExperimentConfig:
    seed: int
    policy: str = "ltra"
    K: int | None = None
    horizon: float = 600.0
    horizon_unit: Literal["s", "tasks"] = "s"
    background: Literal["same", "random"] = "same"
    conditions: NetworkConditions = field(default_factory=_default_conditions)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    metrics_csv: str | None = None
    summary_json: str | None = None

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.seed is None or isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)):
            raise ConfigError("seed", f"an integer seed is required, got {self.seed!r}")
        if self.policy not in POLICIES:
            raise ConfigError("policy", f"must be one of {POLICIES}, got {self.policy!r}")
        if self.K is not None and (not isinstance(self.K, (int, np.integer)) or self.K < 1):
            raise ConfigError("K", f"must be a positive integer or null, got {self.K!r}")
        if not (isinstance(self.horizon, (int, float)) and self.horizon > 0):
            raise ConfigError("horizon", f"must be positive, got {self.horizon!r}")
        if self.horizon_unit not in ("s", "tasks"):
            raise ConfigError("horizon_unit", f"must be 's' or 'tasks', got {self.horizon_unit!r}")
        if self.background not in ("same", "random"):
            raise ConfigError("background", f"must be 'same' or 'random', got {self.background!r}")
        sc = self.scenario
        if sc.kind not in ("synthetic", "trace", "stationary"):
            raise ConfigError("scenario.kind", f"unknown scenario kind {sc.kind!r}")
        if sc.kind == "trace" and not sc.trace_path:
            raise ConfigError("scenario.trace_path", "required when scenario.kind is 'trace'")
        if sc.kind != "trace" and sc.trace_path:
            raise ConfigError("scenario.trace_path", "only allowed when scenario.kind is 'trace'")
        if sc.kind == "stationary":
            if not sc.means or any(not (m > 0) for m in sc.means):
                raise ConfigError("scenario.means", "stationary scenarios need positive mean delays")
            if self.horizon_unit != "tasks":
                raise ConfigError("horizon_unit", "stationary scenarios count horizon in tasks")
        if sc.kind == "synthetic" and not sc.road_km > 0:
            raise ConfigError("scenario.road_km", "must be positive")

    # -- (de)serialisation -------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": int(self.seed),
            "policy": self.policy,
            "K": self.K,
            "horizon": self.horizon,
            "horizon_unit": self.horizon_unit,
            "background": self.background,
            "conditions": dataclasses.asdict(self.conditions),
            "learner": {"alpha": self.learner.alpha, "l": self.learner.l, "d_max": self.learner.d_max},
            "scenario": dataclasses.asdict(self.scenario),
            "metrics_csv": self.metrics_csv,
            "summary_json": self.summary_json,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown config field")
        if "seed" not in data:
            raise ConfigError("seed", "an integer seed is required")
        try:
            cond = NetworkConditions(**data.pop("conditions")) if "conditions" in data else _default_conditions()
        except (TypeError, ValueError) as exc:
            raise ConfigError("conditions", str(exc)) from None
        try:
            learner = data.pop("learner", {}) or {}
            learner = LearnerConfig(**{k: v for k, v in learner.items() if k != "k_replicas"})
        except (TypeError, ValueError) as exc:
            raise ConfigError("learner", str(exc)) from None
        try:
            scenario = ScenarioSpec(**(data.pop("scenario", {}) or {}))
        except TypeError as exc:
            raise ConfigError("scenario", str(exc)) from None
        return cls(conditions=cond, learner=learner, scenario=scenario, **data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError("<json>", str(exc)) from None

    def replace(self, **changes: Any) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class MetricsRow:
    task_index: int
    policy: str
    K: int
    inst_delay_s: float
    mean_delay_s: float
    completion_ratio: float
    failed: bool

    def as_csv(self) -> list[str]:
        return [
            str(self.task_index),
            self.policy,
            str(self.K),
            repr(float(self.inst_delay_s)),
            repr(float(self.mean_delay_s)),
            repr(float(self.completion_ratio)),
            "1" if self.failed else "0",
        ]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[MetricsRow]
    summary: dict[str, Any]

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in self.rows:
            w.writerow(r.as_csv())
        return buf.getvalue()

    def summary_text(self) -> str:
        return json.dumps(self.summary, indent=2, sort_keys=True) + "\n"


def resolve_k(config: ExperimentConfig) -> tuple[int, ReplicaPlan | None]:
    """Replica count for the run and the plan it came from (if any)."""
    if config.policy in ("random", "genie", "single"):
        return 1, None
    if config.K is not None:
        return int(config.K), None
    plan = optimal_replicas(config.conditions)
    return plan.k_star, plan


def build_scenario(config: ExperimentConfig, duration: float) -> Scenario:
    cond = config.conditions
    sc = config.scenario
    tagged = frozenset(sc.tagged) if sc.tagged is not None else None
    pe = (max(cond.p_e - sc.pe_spread, 0.0), min(cond.p_e + sc.pe_spread, 1.0)) if sc.pe_spread else cond.p_e
    if sc.kind == "synthetic":
        ratio = cond.gamma_t / cond.gamma_s
        return Scenario.synthetic(
            cond.lambda0,
            ratio,
            duration,
            total_density=cond.gamma_t + cond.gamma_s,
            road_km=sc.road_km,
            R_m=cond.R * 1000.0,
            mu_range=(cond.mu_c - sc.mu_spread, cond.mu_c + sc.mu_spread),
            p_e=pe,
            max_speed=sc.max_speed,
            min_speed=sc.min_speed,
            d_max=config.learner.d_max,
            seed=config.seed,
            on_empty=sc.on_empty,
            tagged=tagged,
        )
    trace = load_trace(sc.trace_path, sc.ring_length_m)
    sevs = sorted({s.vehicle_id for s in trace.rows() if s.role == SEV})
    lo, hi = cond.mu_c - sc.mu_spread, cond.mu_c + sc.mu_spread
    mu = {v: lo + (hi - lo) * keyed_uniform(config.seed, "mu", v) for v in sevs}
    return Scenario(
        trace=trace,
        lambda0=cond.lambda0,
        mu=mu,
        R_m=cond.R * 1000.0,
        p_e=pe,
        d_max=config.learner.d_max,
        tagged=tagged,
        on_empty=sc.on_empty,
        name=f"trace({sc.trace_path})",
    )


def _rows_from_delays(policy: str, k: int, delays: Iterable[float], failed: Iterable[bool], met: Iterable[bool]) -> list[MetricsRow]:
    rows = []
    total = 0.0
    n_met = 0
    for i, (d, f, m) in enumerate(zip(delays, failed, met), start=1):
        total += d
        n_met += m
        rows.append(MetricsRow(i, policy, k, float(d), total / i, n_met / i, bool(f)))
    return rows


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run one configured experiment and write its CSV/JSON outputs if asked."""
    config.validate()
    k, plan = resolve_k(config)
    summary: dict[str, Any] = {
        "config": config.to_dict(),
        "seed": int(config.seed),
        "policy": config.policy,
        "K": k,
        "replica_plan": dataclasses.asdict(plan) if plan is not None else None,
    }
    learner = dataclasses.replace(config.learner, k_replicas=k)
    if config.scenario.kind == "stationary":
        if config.policy not in ("single", "ltra"):
            raise ConfigError("policy", "stationary scenarios only support the learning policies")
        means = {i: float(m) for i, m in enumerate(config.scenario.means)}
        env = StationaryEnvironment.exponential(means, learner.d_max)
        chosen, delays = run_stationary(env, learner, int(config.horizon), config.seed)
        rows = _rows_from_delays(config.policy, k, delays, [False] * len(delays), delays < learner.d_max)
        report = empirical_regret(chosen, env, k, delays)
        summary["regret"] = {
            "empirical": report.empirical_regret,
            "bound": report.bound,
            "best_subset_loss": report.mu_s_star,
        }
    else:
        if config.horizon_unit == "s":
            duration, max_tasks = float(config.horizon), None
        else:
            probe = build_scenario(config, 1.0)
            n_tags = len(probe.tagged) if probe.tagged is not None else len(probe.tav_ids)
            # generous time budget; generation stops at the task count
            duration = 2.0 * config.horizon / (config.conditions.lambda0 * n_tags) + 10.0
            max_tasks = int(config.horizon)
        scenario = build_scenario(config, duration)
        factory = make_policy_factory(config.policy, k, learner)
        sim = run(scenario, factory, duration, config.seed, max_tasks=max_tasks, background=config.background)
        recs = sim.records
        rows = _rows_from_delays(
            config.policy, k, (r.effective_delay for r in recs), (r.failed for r in recs), (r.deadline_met for r in recs)
        )
        summary["scenario"] = scenario.name
    n = len(rows)
    summary.update(
        {
            "n_tasks": n,
            "mean_delay_s": rows[-1].mean_delay_s if n else None,
            "completion_ratio": rows[-1].completion_ratio if n else None,
            "failure_ratio": (sum(r.failed for r in rows) / n) if n else None,
        }
    )
    result = ExperimentResult(config, rows, summary)
    if config.metrics_csv:
        Path(config.metrics_csv).parent.mkdir(parents=True, exist_ok=True)
        Path(config.metrics_csv).write_text(result.csv_text(), encoding="utf-8")
    if config.summary_json:
        Path(config.summary_json).parent.mkdir(parents=True, exist_ok=True)
        Path(config.summary_json).write_text(result.summary_text(), encoding="utf-8")
    return result


def point_seed(base_seed: int, axis: str, value: float) -> int:
    """Seed for one sweep point, hashed from (base seed, axis, value)."""
    msg = f"{int(base_seed)}|{axis}|{float(value)!r}".encode()
    return int.from_bytes(hashlib.blake2b(msg, digest_size=8).digest(), "little") >> 1


def point_config(base: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    seed = point_seed(base.seed, axis, value)
    cond = base.conditions
    if axis == "K":
        if float(value) != int(value) or int(value) < 1:
            raise ConfigError("K", f"sweep values must be positive integers, got {value!r}")
        return base.replace(K=int(value), seed=seed, metrics_csv=None, summary_json=None)
    if axis == "lambda0":
        cond = dataclasses.replace(cond, lambda0=float(value))
    elif axis == "ratio":
        total = cond.gamma_t + cond.gamma_s
        gamma_s = total / (1.0 + float(value))
        cond = dataclasses.replace(cond, gamma_t=total - gamma_s, gamma_s=gamma_s)
    else:
        raise ConfigError("axis", f"must be one of {SWEEP_AXES}, got {axis!r}")
    return base.replace(conditions=cond, seed=seed, metrics_csv=None, summary_json=None)


@dataclass
class SweepReport:
    axis: str
    values: list[float]
    results: dict[float, ExperimentResult]
    errors: dict[float, str]

    @property
    def complete(self) -> bool:
        return not self.errors

    def table(self) -> list[dict[str, Any]]:
        out = []
        for v in self.values:
            if v in self.results:
                s = self.results[v].summary
                out.append(
                    {
                        self.axis: v,
                        "status": "ok",
                        "K": s["K"],
                        "seed": s["seed"],
                        "n_tasks": s["n_tasks"],
                        "mean_delay_s": s["mean_delay_s"],
                        "completion_ratio": s["completion_ratio"],
                    }
                )
            else:
                out.append({self.axis: v, "status": f"error: {self.errors[v]}"})
        return out

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("axis", "value", *METRICS_HEADER))
        for v in self.values:
            if v in self.results:
                for r in self.results[v].rows:
                    w.writerow((self.axis, repr(float(v)), *r.as_csv()))
        return buf.getvalue()


def _run_point(cfg: ExperimentConfig) -> ExperimentResult:
    return run_experiment(cfg)


def sweep(
    base: ExperimentConfig,
    axis: str,
    values: Sequence[float],
    workers: int = 1,
    merged_csv: str | Path | None = None,
) -> SweepReport:
    """One :func:`run_experiment` per value; failures are collected, not raised.

    Raises:
        ConfigError: empty ``values`` or an unknown axis.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError("axis", f"must be one of {SWEEP_AXES}, got {axis!r}")
    values = list(values)
    if not values:
        raise ConfigError("values", "sweep needs at least one value")
    configs: dict[float, ExperimentConfig] = {}
    errors: dict[float, str] = {}
    for v in values:
        try:
            configs[v] = point_config(base, axis, v)
        except ValueError as exc:
            errors[v] = str(exc)
    results: dict[float, ExperimentResult] = {}
    if workers > 1 and len(configs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {v: pool.submit(_run_point, c) for v, c in configs.items()}
            for v, fut in futures.items():
                try:
                    results[v] = fut.result()
                except Exception as exc:  # noqa: BLE001 - reported per point
                    errors[v] = f"{type(exc).__name__}: {exc}"
    else:
        for v, c in configs.items():
            try:
                results[v] = run_experiment(c)
            except Exception as exc:  # noqa: BLE001 - reported per point
                errors[v] = f"{type(exc).__name__}: {exc}"
    report = SweepReport(axis, values, results, errors)
    if merged_csv is not None:
        Path(merged_csv).write_text(report.csv_text(), encoding="utf-8")
    return report


def mean_ci(values: Sequence[float], z: float = 1.96) -> tuple[float, float]:
    """Mean and normal-approximation half-width."""
    arr = np.asarray(values, dtype=float)
    if arr.size < 2:
        return float(arr.mean()) if arr.size else math.nan, math.inf
    return float(arr.mean()), float(z * arr.std(ddof=1) / math.sqrt(arr.size))

