"""Command-line entry point: ``vecrep <plan|validate|simulate|sweep|trace-gen>``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Sequence

from vecrep.analytics import (
    REPLICA_GRID_CELLS,
    NetworkConditions,
    optimal_replicas,
    table_conditions,
    theoretical_optimum_search,
)
from vecrep.harness.experiment import SWEEP_AXES, ConfigError, ExperimentConfig, run_experiment, sweep
from vecrep.harness.policies import POLICIES
from vecrep.simcore import monte_carlo_argmin
from vecrep.traffic import generate_ppp_snapshot, generate_synthetic_trace, uniform_speed_law, write_trace


def _echo(label: str, payload: dict) -> None:
    print(f"# {label}")
    print(json.dumps(payload, indent=2, sort_keys=True))


def _add_conditions(p: argparse.ArgumentParser, required: bool = False) -> None:
    g = p.add_argument_group("network conditions")
    g.add_argument("--lambda0", type=float, required=required, help="task arrival rate per TaV (tasks/s)")
    g.add_argument("--mu", type=float, default=None, help="mean SeV service rate (tasks/s), default 10")
    g.add_argument("--pe", type=float, default=None, help="packet erasure probability, default 0.02")
    g.add_argument("--gamma-t", type=float, default=None, help="TaV density (veh/km)")
    g.add_argument("--gamma-s", type=float, default=None, help="SeV density (veh/km)")
    g.add_argument("--ratio", type=float, default=None, help="TaV:SeV density ratio (with --total-density)")
    g.add_argument("--total-density", type=float, default=None, help="total vehicle density, default 25")
    g.add_argument("--range-km", type=float, default=None, help="communication range R (km), default 0.2")
    g.add_argument("--theta-f", type=float, default=None, help="failure-probability target, default 1")


def _conditions(args: argparse.Namespace, base: NetworkConditions | None = None) -> NetworkConditions:
    base = base or NetworkConditions.from_density(2.0, 1 / 3)
    gamma_t, gamma_s = base.gamma_t, base.gamma_s
    if args.ratio is not None or args.total_density is not None:
        if args.gamma_t is not None or args.gamma_s is not None:
            raise ConfigError("--ratio", "give either --ratio/--total-density or --gamma-t/--gamma-s")
        total = args.total_density if args.total_density is not None else gamma_t + gamma_s
        ratio = args.ratio if args.ratio is not None else gamma_t / gamma_s
        gamma_s = total / (1.0 + ratio)
        gamma_t = total - gamma_s
    else:
        gamma_t = args.gamma_t if args.gamma_t is not None else gamma_t
        gamma_s = args.gamma_s if args.gamma_s is not None else gamma_s

    def pick(v, d):
        return d if v is None else v

    try:
        return NetworkConditions(
            lambda0=pick(args.lambda0, base.lambda0),
            mu_c=pick(args.mu, base.mu_c),
            p_e=pick(args.pe, base.p_e),
            gamma_t=gamma_t,
            gamma_s=gamma_s,
            R=pick(args.range_km, base.R),
            theta_f=pick(args.theta_f, base.theta_f),
        )
    except ValueError as exc:
        raise ConfigError("conditions", str(exc)) from None


def _add_experiment(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config file; flags override its fields")
    p.add_argument("--seed", type=int, help="random seed (required unless in --config)")
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--K", type=int, dest="K", help="replica count for ltra (default: analytic K*)")
    p.add_argument("--horizon", type=float, help="simulated seconds, or tasks with --horizon-unit tasks")
    p.add_argument("--horizon-unit", choices=("s", "tasks"))
    p.add_argument("--background", choices=("same", "random"))
    p.add_argument("--alpha", type=float, help="learner exploration weight")
    p.add_argument("--levels", type=int, help="reward discretisation levels l")
    p.add_argument("--d-max", type=float, help="delay cap and deadline (s)")
    p.add_argument("--road-km", type=float, help="synthetic ring length (km)")
    p.add_argument("--trace", type=Path, help="mobility trace CSV instead of a synthetic road")
    p.add_argument("--ring-length-m", type=float, help="wrap length for a trace road")
    p.add_argument("--metrics-csv", type=Path)
    p.add_argument("--summary-json", type=Path)
    _add_conditions(p)


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    data: dict = {}
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("--config", str(exc)) from None
    for key in ("seed", "policy", "K", "horizon", "horizon_unit", "background"):
        v = getattr(args, key)
        if v is not None:
            data[key] = v
    if args.metrics_csv is not None:
        data["metrics_csv"] = str(args.metrics_csv)
    if args.summary_json is not None:
        data["summary_json"] = str(args.summary_json)
    learner = dict(data.get("learner", {}) or {})
    for flag, key in (("alpha", "alpha"), ("levels", "l"), ("d_max", "d_max")):
        v = getattr(args, flag)
        if v is not None:
            learner[key] = v
    data["learner"] = learner
    scenario = dict(data.get("scenario", {}) or {})
    if args.road_km is not None:
        scenario["road_km"] = args.road_km
    if args.trace is not None:
        scenario["kind"] = "trace"
        scenario["trace_path"] = str(args.trace)
    if args.ring_length_m is not None:
        scenario["ring_length_m"] = args.ring_length_m
    data["scenario"] = scenario
    try:
        base = NetworkConditions(**data["conditions"]) if "conditions" in data else None
    except (TypeError, ValueError) as exc:
        raise ConfigError("conditions", str(exc)) from None
    data["conditions"] = dataclasses.asdict(_conditions(args, base))
    if "seed" not in data:
        raise ConfigError("seed", "a seed is required (--seed or in --config)")
    return ExperimentConfig.from_dict(data)


def cmd_plan(args: argparse.Namespace) -> int:
    cond = _conditions(args)
    _echo("conditions", dataclasses.asdict(cond))
    plan = optimal_replicas(cond)
    _echo("replica plan", dataclasses.asdict(plan))
    print(f"k_tilde = {plan.k_tilde:.2f}, k_star = {plan.k_star}")
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    if args.cells != "table1":
        raise ConfigError("--cells", f"only 'table1' is available, got {args.cells!r}")
    cells = list(dict.fromkeys(REPLICA_GRID_CELLS))
    _echo(
        "validate",
        {"cells": args.cells, "tasks": args.tasks, "seed": args.seed, "k_max": args.k_max, "sojourn": args.sojourn},
    )
    print(f"{'lambda0':>8} {'ratio':>6} {'K_theory':>9} {'K_sim':>6}")
    matches = 0
    for lam, ratio in cells:
        cond = table_conditions(lam, ratio)
        k_th = theoretical_optimum_search(cond, args.k_max)
        k_sim, _ = monte_carlo_argmin(cond, args.k_max, args.tasks, seed=args.seed, sojourn=args.sojourn)
        matches += k_th == k_sim
        label = "1" if ratio == 1 else f"1/{round(1 / ratio)}"
        print(f"{lam:>8g} {label:>6} {k_th:>9d} {k_sim:>6d}")
    print(f"# agreement: {matches}/{len(cells)} cells")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _experiment_config(args)
    _echo("resolved config", cfg.to_dict())
    result = run_experiment(cfg)
    s = result.summary
    out = {k: s[k] for k in ("policy", "K", "n_tasks", "mean_delay_s", "completion_ratio", "failure_ratio")}
    if "regret" in s:
        out["regret"] = s["regret"]
    _echo("summary", out)
    return 0


def _parse_values(text: str) -> list[float]:
    vals = [v.strip() for v in text.split(",") if v.strip()]
    if not vals:
        raise ConfigError("--values", "need at least one value")
    try:
        return [float(v) for v in vals]
    except ValueError as exc:
        raise ConfigError("--values", str(exc)) from None


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _experiment_config(args)
    values = _parse_values(args.values)
    _echo("resolved config", cfg.to_dict())
    _echo("sweep", {"axis": args.axis, "values": values, "workers": args.workers})
    report = sweep(cfg, args.axis, values, workers=args.workers, merged_csv=args.merged_csv)
    for row in report.table():
        print(json.dumps(row, sort_keys=True))
    if not report.complete:
        print(f"# {len(report.errors)} of {len(values)} points failed", file=sys.stderr)
        return 1
    return 0


def cmd_trace_gen(args: argparse.Namespace) -> int:
    _echo("trace-gen", {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"})
    snap = generate_ppp_snapshot(args.road_km, args.gamma_t, args.gamma_s, args.seed, exact_counts=args.exact_counts)
    min_speed = 0.8 * args.max_speed if args.min_speed is None else args.min_speed
    trace = generate_synthetic_trace(
        snap,
        args.duration,
        args.timestep,
        args.road_km * 1000.0,
        uniform_speed_law(args.max_speed, min_speed),
        seed=args.seed + 1,
    )
    write_trace(trace, args.out)
    print(f"# wrote {len(trace)} frames, {len(snap)} vehicles to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vecrep", description="Task replication for vehicular edge computing.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("plan", help="closed-form replica plan for given conditions")
    _add_conditions(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("validate", help="analytic vs Monte Carlo optimal replica count over the grid")
    p.add_argument("--cells", default="table1")
    p.add_argument("--tasks", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k-max", type=int, default=8)
    p.add_argument("--sojourn", choices=("stationary", "queue"), default="stationary")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="run one experiment")
    _add_experiment(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run one experiment per value of an axis")
    _add_experiment(p)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--merged-csv", type=Path)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("trace-gen", help="write a synthetic 1-D mobility trace")
    p.add_argument("--road-km", type=float, default=4.0)
    p.add_argument("--gamma-t", type=float, default=6.25)
    p.add_argument("--gamma-s", type=float, default=18.75)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--timestep", type=float, default=1.0)
    p.add_argument("--max-speed", type=float, default=20.0)
    p.add_argument("--min-speed", type=float, default=None)
    p.add_argument("--exact-counts", action="store_true")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_trace_gen)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        parser.exit(2, f"vecrep {args.command}: error: {exc}\n")
    return 0  # pragma: no cover


if __name__ == "__main__":
    sys.exit(main())
