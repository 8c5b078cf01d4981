"""Experiment driver: strategy comparisons and fault-probability sweeps.

One experiment runs a built-in workload under each requested strategy at
each sweep point. Every (strategy, point) pair gets a fresh runtime whose
profile database then learns across the point's repetitions, modeling an
application stream. Unit RNG seeds derive from (experiment seed, point)
only, so strategies at the same point face identical fault draws and the
whole run is reproducible byte for byte.

CSV columns (fixed):
  strategy, sweep_value, mean_time_ns, attempts_mean, faults_abort,
  faults_api, faults_timeout, faults_vote, voter_time_ns, transfer_time_ns
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .api import Runtime, RuntimeConfig
from .devices import ValueType, load_fleet
from .errors import ConfigError
from .fleets import fleet_config_from
from .mapping import Strategy, StrategyKind
from .voting import VoterConfig
from .workloads import get_workload

CSV_HEADER = ("strategy,sweep_value,mean_time_ns,attempts_mean,faults_abort,"
              "faults_api,faults_timeout,faults_vote,voter_time_ns,transfer_time_ns")

STRATEGY_ALIASES = {
    "perf": lambda **kw: Strategy(StrategyKind.PERF, **kw),
    "perfcp": lambda **kw: Strategy(StrategyKind.PERF_CP, **kw),
    "perfcp-fault-aware": lambda **kw: Strategy(StrategyKind.PERF_CP, **kw),
    "dmr": lambda **kw: Strategy(StrategyKind.DMR, **kw),
    "hetdmr": lambda **kw: Strategy(StrategyKind.HET_DMR, **kw),
    "perfcp-avoidance": lambda **kw: Strategy(
        StrategyKind.PERF_CP, rank_by="R", fault_policy="permanent-exclude", **kw),
    "perfcp-pinned": lambda **kw: Strategy(
        StrategyKind.PERF_CP, rank_by="R", fault_policy="pin", **kw),
}


def make_strategy(name: str, timeout_factor: float = 3.0,
                  voter_placement: str = "lowest-F") -> Strategy:
    try:
        factory = STRATEGY_ALIASES[name]
    except KeyError:
        raise ConfigError(f"unknown strategy {name!r}; available: "
                          f"{', '.join(sorted(STRATEGY_ALIASES))}") from None
    return factory(timeout_factor=timeout_factor, voter_placement=voter_placement)


@dataclass
class ExperimentSpec:
    workload: str
    fleet: object = "default"                 # builtin name, path, or config dict
    strategies: list[str] = field(default_factory=lambda: ["perfcp"])
    sweep_var: str = "none"                   # "none", "size", or "<unit>.<field>"
    sweep_values: list = field(default_factory=lambda: [0.0])
    repetitions: int = 1
    seed: int = 0
    size: int = 64
    out: Optional[str] = None
    trace: Optional[str] = None
    timeout_factor: float = 3.0
    check_interval: int = 10
    attempt_limit: int = 20
    voter_delta: float = 0.001
    voter_placement: str = "lowest-F"
    profile_db: Optional[str] = None

    def validate(self):
        if self.repetitions < 1:
            raise ConfigError(f"repetitions must be >= 1, got {self.repetitions}")
        if not self.strategies:
            raise ConfigError("at least one strategy is required")
        if not self.sweep_values:
            raise ConfigError("sweep needs at least one value")
        if self.sweep_var.endswith("_prob"):
            for v in self.sweep_values:
                if not 0.0 <= float(v) <= 1.0:
                    raise ConfigError(f"sweep value {v} outside [0, 1] for {self.sweep_var}")
        for name in self.strategies:
            if name not in STRATEGY_ALIASES:
                raise ConfigError(f"unknown strategy {name!r}")


@dataclass
class PointSummary:
    strategy: str
    sweep_value: object
    repetitions: int
    times_ns: list[int]
    attempts_total: int
    fault_totals: dict[str, int]
    voter_ns_total: int
    transfer_ns_total: int
    oracle_mismatches: int

    @property
    def mean_time_ns(self) -> float:
        return sum(self.times_ns) / self.repetitions

    def csv_row(self) -> str:
        sv = f"{self.sweep_value:g}" if isinstance(self.sweep_value, float) else str(self.sweep_value)
        return (f"{self.strategy},{sv},{self.mean_time_ns:.3f},"
                f"{self.attempts_total / self.repetitions:.4f},"
                f"{self.fault_totals['abort']},{self.fault_totals['api_error']},"
                f"{self.fault_totals['timeout']},{self.fault_totals['vote_mismatch']},"
                f"{self.voter_ns_total / self.repetitions:.3f},"
                f"{self.transfer_ns_total / self.repetitions:.3f}")


def sweep_range(start: float, stop: float, step: float) -> list[float]:
    """Inclusive range with decimal-safe rounding (0.1 steps stay 0.1)."""
    if step <= 0:
        raise ConfigError(f"sweep step must be > 0, got {step}")
    n = int(round((stop - start) / step))
    return [round(start + i * step, 12) for i in range(n + 1)]


def _apply_sweep(cfg: dict, var: str, value, spec: ExperimentSpec) -> int:
    """Returns the problem size for this point (sweeps may change it)."""
    if var in ("none", ""):
        return spec.size
    if var == "size":
        return int(value)
    if "." not in var:
        raise ConfigError(f"sweep var must be 'size' or '<unit>.<field>', got {var!r}")
    unit_id, fld = var.split(".", 1)
    for unit in cfg["units"]:
        if unit["id"] == unit_id:
            unit[fld] = value
            return spec.size
    raise ConfigError(f"sweep var {var!r}: no unit {unit_id!r} in fleet")


def _reseed(cfg: dict, seed: int, point_idx: int) -> None:
    for k, unit in enumerate(cfg["units"]):
        unit["seed"] = seed * 1_000_003 + point_idx * 10_007 + k * 101 + 17


def run_point(spec: ExperimentSpec, strategy_name: str, point_idx: int,
              sweep_value, trace_sink: Optional[list] = None) -> PointSummary:
    cfg = fleet_config_from(spec.fleet)
    size = _apply_sweep(cfg, spec.sweep_var, sweep_value, spec)
    _reseed(cfg, spec.seed, point_idx)
    fleet = load_fleet(cfg)
    workload = get_workload(spec.workload)
    strategy = make_strategy(strategy_name, spec.timeout_factor, spec.voter_placement)

    def trace(line: str):
        trace_sink.append(f"[{strategy_name} p{point_idx} {spec.sweep_var}={sweep_value}] {line}")

    rt = Runtime(fleet, RuntimeConfig(
        timeout_factor=spec.timeout_factor,
        check_interval=spec.check_interval,
        attempt_limit=spec.attempt_limit,
        voter=VoterConfig(float_delta=spec.voter_delta, placement=spec.voter_placement),
        trace=trace if trace_sink is not None else None))
    if spec.profile_db and Path(spec.profile_db).exists():
        rt.load_profiles(spec.profile_db)

    task = rt.declare_task(workload.name, workload.params)
    for kernel, kind, body in workload.variants:
        rt.attach_kernel(task, kernel, kind, body)

    data_rng = random.Random(spec.seed * 7_919 + point_idx)
    times, attempts, voter_ns, transfer_ns, mismatches = [], 0, 0, 0, 0
    faults = {"abort": 0, "api_error": 0, "timeout": 0, "vote_mismatch": 0}
    for _ in range(spec.repetitions):
        data = workload.make_input(size, data_rng)
        inp = rt.register_data(data.tobytes(), size, ValueType.FLOAT32, "r")
        out = rt.register_data(bytes(4 * size), size, ValueType.FLOAT32, "w")
        report = rt.invoke(task, {"input": inp, "output": out, "count": size}, strategy)
        times.append(report.total_ns)
        attempts += report.attempts
        voter_ns += report.voter_ns
        transfer_ns += report.transfer_ns + report.checkpoint_ns
        for k in faults:
            faults[k] += report.fault_counts[k]
        committed = rt.read_array(out)
        expected = workload.oracle(data)
        if not np.allclose(committed, expected, rtol=spec.voter_delta, atol=0.0):
            mismatches += 1
    rt.close()
    if spec.profile_db:
        rt.persist_profiles(spec.profile_db)
    return PointSummary(strategy_name, sweep_value, spec.repetitions, times,
                        attempts, faults, voter_ns, transfer_ns, mismatches)


def run_experiment(spec: ExperimentSpec) -> list[PointSummary]:
    """Run all (strategy, sweep point) pairs sequentially; deterministic
    given the spec's seed. Writes the CSV/trace files when paths are set."""
    spec.validate()
    trace_sink: Optional[list] = [] if spec.trace else None
    summaries = []
    for strategy_name in spec.strategies:
        for point_idx, value in enumerate(spec.sweep_values):
            summaries.append(run_point(spec, strategy_name, point_idx, value, trace_sink))
    if spec.out:
        write_csv(spec.out, summaries)
    if spec.trace:
        Path(spec.trace).write_text("\n".join(trace_sink) + "\n", encoding="utf-8")
    return summaries


def write_csv(path, summaries: list[PointSummary]) -> None:
    lines = [CSV_HEADER] + [s.csv_row() for s in summaries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def spec_from_yaml(path) -> ExperimentSpec:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: experiment spec must be a mapping")
    sweep = raw.pop("sweep", None)
    spec = ExperimentSpec(**{k.replace("-", "_"): v for k, v in raw.items()})
    if sweep:
        spec.sweep_var = sweep.get("var", "none")
        if "values" in sweep:
            spec.sweep_values = list(sweep["values"])
        else:
            spec.sweep_values = sweep_range(float(sweep["start"]), float(sweep["stop"]),
                                            float(sweep["step"]))
    return spec
