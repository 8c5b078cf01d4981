"""Command-line experiment harness.

    hetrt run --workload pathfinder-like --fleet pathfinder \
              --strategy perfcp,perfcp-avoidance \
              --sweep cpu0.abort_prob=0.1:0.9:0.1 --reps 1000 --seed 7 \
              --out results.csv
    hetrt run --spec experiment.yaml
    hetrt list-workloads
    hetrt dump-profile-db --path profiles.tsv
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, HetRtError
from .experiments import (ExperimentSpec, STRATEGY_ALIASES, run_experiment,
                          spec_from_yaml, sweep_range)
from .profiles import ProfileDB
from .workloads import builtin_workloads


def _parse_sweep(text: str) -> tuple[str, list]:
    if "=" not in text:
        raise ConfigError(f"--sweep must look like VAR=a:b:step or VAR=v1,v2,... got {text!r}")
    var, rhs = text.split("=", 1)
    if ":" in rhs:
        parts = rhs.split(":")
        if len(parts) != 3:
            raise ConfigError(f"--sweep range needs start:stop:step, got {rhs!r}")
        values = sweep_range(float(parts[0]), float(parts[1]), float(parts[2]))
    else:
        values = [float(v) if "." in v or "e" in v.lower() else int(v)
                  for v in rhs.split(",") if v]
    return var, values


def _cmd_run(args) -> int:
    if args.spec:
        spec = spec_from_yaml(args.spec)
    else:
        if not args.workload:
            raise ConfigError("either --spec or --workload is required")
        spec = ExperimentSpec(workload=args.workload)
    if args.workload:
        spec.workload = args.workload
    if args.fleet:
        spec.fleet = args.fleet
    if args.strategy:
        spec.strategies = [s.strip() for s in args.strategy.split(",") if s.strip()]
    if args.sweep:
        spec.sweep_var, spec.sweep_values = _parse_sweep(args.sweep)
    if args.reps is not None:
        spec.repetitions = args.reps
    if args.seed is not None:
        spec.seed = args.seed
    if args.size is not None:
        spec.size = args.size
    if args.out:
        spec.out = args.out
    if args.trace:
        spec.trace = args.trace
    if args.profile_db:
        spec.profile_db = args.profile_db
    if args.check_interval is not None:
        spec.check_interval = args.check_interval
    if args.attempt_limit is not None:
        spec.attempt_limit = args.attempt_limit
    if args.timeout_factor is not None:
        spec.timeout_factor = args.timeout_factor

    summaries = run_experiment(spec)
    from .experiments import CSV_HEADER
    print(CSV_HEADER)
    for s in summaries:
        print(s.csv_row())
    if spec.out:
        print(f"# csv written to {spec.out}", file=sys.stderr)
    return 0


def _cmd_list_workloads(_args) -> int:
    for name, w in sorted(builtin_workloads().items()):
        kernels = ", ".join(k for k, _, _ in w.variants)
        print(f"{name}: {w.description} (kernels: {kernels})")
    return 0


def _cmd_dump_profile_db(args) -> int:
    db = ProfileDB()
    db.load(args.path)
    print("kernel\tsize_bucket\tunit\tR_ns\tp\tv\tt")
    for key, rec in db.items():
        r = f"{rec.mean_runtime_ns:.1f}" if rec.mean_runtime_ns is not None else "-"
        p = f"{float(rec.fault_probability):.4f}" if rec.t else "-"
        print(f"{key.kernel}\t{key.size_bucket}\t{key.unit}\t{r}\t{p}\t{rec.v}\t{rec.t}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetrt",
                                     description="fault-tolerant heterogeneous runtime harness")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and emit CSV")
    run.add_argument("--spec", help="experiment spec YAML file")
    run.add_argument("--workload", help="built-in workload id")
    run.add_argument("--fleet", help="builtin fleet name or fleet YAML path")
    run.add_argument("--strategy", help=f"comma-separated strategies "
                                        f"({', '.join(sorted(STRATEGY_ALIASES))})")
    run.add_argument("--sweep", help="VAR=start:stop:step or VAR=v1,v2,...")
    run.add_argument("--reps", type=int, help="repetitions per sweep point")
    run.add_argument("--seed", type=int, help="experiment master seed")
    run.add_argument("--size", type=int, help="problem size in elements")
    run.add_argument("--out", help="CSV output path")
    run.add_argument("--trace", help="per-attempt trace output path")
    run.add_argument("--profile-db", help="profile database file to merge in and update")
    run.add_argument("--check-interval", type=int, help="quarantine probe interval (0 disables)")
    run.add_argument("--attempt-limit", type=int, help="per-task attempt budget")
    run.add_argument("--timeout-factor", type=float, help="timeout = estimated runtime x factor")
    run.set_defaults(fn=_cmd_run)

    lw = sub.add_parser("list-workloads", help="list built-in workloads")
    lw.set_defaults(fn=_cmd_list_workloads)

    dump = sub.add_parser("dump-profile-db", help="print a profile database file")
    dump.add_argument("--path", required=True)
    dump.set_defaults(fn=_cmd_dump_profile_db)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except HetRtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"run 'hetrt {args.command} --help' for usage", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
