"""Command-line harness: run filtered episodes, sample inactive sets, verify
the set-inclusion theorems, and benchmark decision latency.

Exit codes: 0 success, 2 configuration error, 3 simulation divergence,
4 theorem violations. Every command writes a manifest.json next to its
outputs recording the invocation, seed, and schema version.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import statistics
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    sample_sets,
    save_summary,
    set_summary,
    sweep_horizon,
    verify_theorem3,
    verify_theorem4,
    write_set_csv,
)
from .dynamics import FlowDivergenceError
from .scenarios import (
    FILTER_NAMES,
    Metrics,
    build_scenario,
    compute_metrics,
    load_config,
    run_episode,
)
from .shields import GkWorkerPool, default_workers

SCHEMA_VERSION = "1"

_STATE_COLUMNS = {
    "double_integrator": ["x", "y", "vx", "vy"],
    "bicycle": ["px", "py", "psi", "r", "beta", "V", "delta", "tau"],
}
_INPUT_COLUMNS = {
    "double_integrator": ["ax", "ay"],
    "bicycle": ["ddelta", "dtau"],
}


class ConfigError(Exception):
    pass


def _write_manifest(out: Path, command: str, args_dict: dict, seed) -> None:
    manifest = {
        "command": command,
        "args": {k: str(v) for k, v in args_dict.items()},
        "seed": seed,
        "out": str(out),
        "version": f"shieldbench-{__version__}",
        "schema_version": SCHEMA_VERSION,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _load(scenario: str, seed=None):
    try:
        cfg = load_config(scenario)
        if seed is not None:
            cfg_dict = json.loads(cfg.to_json())
            cfg_dict["seed"] = seed
            cfg = load_config(cfg_dict)
        return cfg
    except (ValueError, TypeError, OSError, json.JSONDecodeError) as exc:
        raise ConfigError(str(exc)) from exc


def write_trajectory_csv(log, cfg, path) -> None:
    state_cols = _STATE_COLUMNS[cfg.model]
    input_cols = _INPUT_COLUMNS[cfg.model]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["t", *state_cols, *input_cols, "source", "T_S_star", "h_bcbf", "min_margin_C", "compute_ms"]
        )
        for i in range(len(log.times)):
            row = [f"{log.times[i]:.10g}"]
            row += [f"{v:.12g}" for v in log.states[i]]
            row += [f"{v:.12g}" for v in log.inputs[i]]
            row.append(log.sources[i])
            row.append("" if np.isnan(log.t_s_star[i]) else f"{log.t_s_star[i]:.10g}")
            row.append("" if np.isnan(log.h_bcbf[i]) else f"{log.h_bcbf[i]:.12g}")
            row.append(f"{log.margin_c[i]:.12g}")
            row.append(f"{log.compute_ms[i]:.6g}")
            writer.writerow(row)


def _metrics_dict(m: Metrics) -> dict:
    return {
        "nominal_fraction": m.nominal_fraction,
        "avg_T_S_star": m.avg_t_s_star,
        "reached_goal": bool(m.reached_goal),
        "avg_compute_ms": m.avg_compute_ms,
        "min_margin_C": m.min_margin_c,
        "violations": m.violations,
    }


def cmd_run(args) -> int:
    cfg = _load(args.scenario, args.seed)
    if args.filter not in FILTER_NAMES:
        raise ConfigError(f"unknown filter {args.filter!r}; valid options: {', '.join(FILTER_NAMES)}")
    monitor = {"every-step": "every_step", "certificate": "certificate"}[args.monitor]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenario = build_scenario(cfg)
    workers = args.workers or default_workers()
    pool = GkWorkerPool(scenario.shield_ctx, workers) if args.filter == "gk-par" else None

    per_trial = []
    try:
        for trial in range(args.trials):
            log = run_episode(
                scenario, args.filter, trial=trial, monitor=monitor,
                workers=workers, pool=pool,
            )
            if log.status == "divergence":
                print(f"trial {trial}: simulation diverged", file=sys.stderr)
                return 3
            write_trajectory_csv(log, cfg, out / f"trajectory_{trial:02d}.csv")
            metrics = compute_metrics(log)
            per_trial.append({"trial": trial, "status": log.status, **_metrics_dict(metrics)})
    finally:
        if pool is not None:
            pool.close()

    ts_values = [m["avg_T_S_star"] for m in per_trial if m["avg_T_S_star"] is not None]
    aggregate = {
        "trials": args.trials,
        "nominal_fraction": statistics.fmean(m["nominal_fraction"] for m in per_trial),
        "avg_T_S_star": statistics.fmean(ts_values) if ts_values else None,
        "reached_goal_count": sum(1 for m in per_trial if m["reached_goal"]),
        "avg_compute_ms": statistics.fmean(m["avg_compute_ms"] for m in per_trial),
        "violations": sum(m["violations"] for m in per_trial),
    }
    with open(out / "metrics.json", "w") as fh:
        json.dump(
            {"scenario": cfg.name, "filter": args.filter, "per_trial": per_trial, "aggregate": aggregate},
            fh, indent=2, sort_keys=True,
        )
    _write_manifest(out, "run", vars(args), cfg.seed)
    print(
        f"{cfg.name}/{args.filter}: nominal {aggregate['nominal_fraction']:.1f}%, "
        f"goal {aggregate['reached_goal_count']}/{args.trials}, "
        f"violations {aggregate['violations']}"
    )
    return 0


def cmd_sets(args) -> int:
    cfg = _load(args.scenario, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sample = sample_sets(build_scenario(cfg), resolution=args.grid)
    write_set_csv(sample, out / "sets.csv")
    save_summary(set_summary(sample), out / "summary.json")
    _write_manifest(out, "sets", vars(args), cfg.seed)
    print(f"sets: {sample.points.shape[0]} points -> {out/'sets.csv'}")
    return 0


def cmd_verify(args) -> int:
    cfg = _load(args.scenario, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sample = sample_sets(build_scenario(cfg), resolution=args.grid)
    if args.theorem == 3:
        report = verify_theorem3(sample)
    else:
        report = verify_theorem4(sample, epsilon_int=args.epsilon)
    with open(out / f"theorem{args.theorem}.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    _write_manifest(out, "verify", vars(args), cfg.seed)
    print(
        f"theorem {args.theorem}: tested {report.points_tested} points, "
        f"{len(report.violations)} violations -> {'pass' if report.passed else 'FAIL'}"
    )
    return 0 if report.passed else 4


def cmd_bench(args) -> int:
    cfg = _load(args.scenario, args.seed)
    if args.duration is not None:
        cfg_dict = json.loads(cfg.to_json())
        cfg_dict["duration"] = args.duration
        cfg = load_config(cfg_dict)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenario = build_scenario(cfg)
    workers_list = [int(w) for w in args.workers.split(",")]

    results = {}
    for name in ("bcbf", "mps", "gk"):
        log = run_episode(scenario, name, trial=0)
        results[name] = {
            "mean_ms": float(np.mean(log.compute_ms)),
            "median_ms": float(np.median(log.compute_ms)),
        }
    results["gk-par"] = {}
    for w in workers_list:
        pool = GkWorkerPool(scenario.shield_ctx, w)
        try:
            log = run_episode(scenario, "gk-par", trial=0, workers=w, pool=pool)
        finally:
            pool.close()
        results["gk-par"][str(w)] = {
            "mean_ms": float(np.mean(log.compute_ms)),
            "median_ms": float(np.median(log.compute_ms)),
        }
    with open(out / "bench.json", "w") as fh:
        json.dump({"scenario": cfg.name, "results": results}, fh, indent=2, sort_keys=True)
    _write_manifest(out, "bench", vars(args), cfg.seed)
    for name in ("bcbf", "mps", "gk"):
        print(f"{name:7s} mean {results[name]['mean_ms']:.2f} ms")
    for w, r in results["gk-par"].items():
        print(f"gk-par({w}) mean {r['mean_ms']:.2f} ms")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args.scenario, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t_h_values = [float(v) for v in args.horizons.split(",")]
    resolutions = [int(v) for v in args.grids.split(",")]
    rows = sweep_horizon(build_scenario(cfg), t_h_values, resolutions)
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["t_h", "resolution", "gk_fraction", "mean_search_ms"])
        writer.writeheader()
        writer.writerows(rows)
    _write_manifest(out, "sweep", vars(args), cfg.seed)
    print(f"sweep: {len(rows)} rows -> {out/'sweep.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shieldbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run filtered closed-loop episodes")
    p.add_argument("--scenario", required=True, help="built-in name or config JSON path")
    p.add_argument("--filter", required=True, help="bcbf | mps | gk | gk-par")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--monitor", choices=["every-step", "certificate"], default="every-step")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sets", help="sample inactive sets on the slice grid")
    p.add_argument("--scenario", default="di-slice")
    p.add_argument("--grid", type=int, default=101)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sets)

    p = sub.add_parser("verify", help="verify a set-inclusion theorem on the grid")
    p.add_argument("--theorem", type=int, choices=[3, 4], required=True)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--grid", type=int, default=101)
    p.add_argument("--scenario", default="di-slice")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="benchmark per-decision latency")
    p.add_argument("--scenario", default="reach-avoid")
    p.add_argument("--workers", default="1,4")
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="horizon/resolution sweep of the gatekeeper set")
    p.add_argument("--scenario", default="di-slice")
    p.add_argument("--horizons", default="0.05,0.1,0.25,3.0")
    p.add_argument("--grids", default="41")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FlowDivergenceError as exc:
        print(f"simulation divergence: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
