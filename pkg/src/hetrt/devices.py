"""Simulated processing units: speed profiles, fault injection, fleets.

Units stand in for real hardware at desk scale. A unit's runtime for a
problem size is deterministic (affine model plus optional exact-size
overrides); faults are drawn from a per-unit seeded RNG so that a given
(fleet config, seed, dispatch sequence) replays bit-identically.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import yaml

from .errors import ConfigError, DispatchError


class FaultClass(Enum):
    ABORT = "abort"
    API_ERROR = "api_error"
    HANG = "hang"
    CORRUPT = "corrupt"


class ValueType(Enum):
    """Element type of a registered memory area."""

    INT = "int"          # bitwise-comparable, element width fixed at registration
    FLOAT32 = "float32"
    FLOAT64 = "float64"

    @property
    def numpy_dtype(self):
        if self is ValueType.FLOAT32:
            return np.float32
        if self is ValueType.FLOAT64:
            return np.float64
        return None  # INT areas are viewed as raw bytes

    @property
    def fixed_width(self) -> Optional[int]:
        if self is ValueType.FLOAT32:
            return 4
        if self is ValueType.FLOAT64:
            return 8
        return None


@dataclass(frozen=True)
class MemorySpace:
    id: str
    label: str = ""
    is_host: bool = False

    def __post_init__(self):
        if not self.label:
            object.__setattr__(self, "label", self.id)


@dataclass
class SpeedProfile:
    """Deterministic runtime model: base + per-element cost, in nanoseconds.

    `table_ns` entries are exact-size overrides and take precedence over
    the affine model. `jitter_ns` adds uniform noise from a dedicated RNG
    stream (off by default; fault draws are unaffected).
    """

    base_latency_ns: int
    per_elem_cost_ns: float = 0.0
    table_ns: dict[int, int] = field(default_factory=dict)
    jitter_ns: int = 0

    def __post_init__(self):
        if self.base_latency_ns <= 0:
            raise ConfigError(f"base_latency_ns must be > 0, got {self.base_latency_ns}")
        if self.per_elem_cost_ns < 0:
            raise ConfigError(f"per_elem_cost_ns must be >= 0, got {self.per_elem_cost_ns}")
        for size, ns in self.table_ns.items():
            if ns <= 0:
                raise ConfigError(f"table_ns[{size}] must be > 0, got {ns}")

    def runtime_ns(self, size_elements: int) -> int:
        if size_elements in self.table_ns:
            return self.table_ns[size_elements]
        return max(1, round(self.base_latency_ns + self.per_elem_cost_ns * size_elements))


@dataclass
class CorruptionSpec:
    """Where and how hard a corrupt outcome perturbs the output.

    `element=None` picks a pseudo-random output element. The relative
    magnitude is configurable so tests can place corruption inside or
    outside the voter's acceptance delta.
    """

    relative_magnitude: float = 0.01
    element: Optional[int] = None


@dataclass
class FaultModel:
    abort_prob: float = 0.0
    api_error_prob: float = 0.0
    hang_prob: float = 0.0
    corrupt_prob: float = 0.0
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("abort_prob", "api_error_prob", "hang_prob", "corrupt_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be within [0, 1], got {p}")
        total = self.abort_prob + self.api_error_prob + self.hang_prob + self.corrupt_prob
        if total > 1.0 + 1e-12:
            raise ConfigError(f"fault probabilities sum to {total}, must be <= 1")


@dataclass
class ProcessingUnit:
    """One simulated device. The fault RNG is per-unit mutable state;
    concurrent attempts on the same unit must be serialized by the caller."""

    id: str
    kind: str
    memory_space: str
    speed: SpeedProfile
    fault_model: FaultModel = field(default_factory=FaultModel)

    def __post_init__(self):
        self.reset_rng()

    def reset_rng(self):
        self._rng = random.Random(self.fault_model.rng_seed)
        self._jitter_rng = random.Random(self.fault_model.rng_seed ^ 0x5EED)

    def draw_fault(self) -> Optional[FaultClass]:
        """One categorical draw over {abort, api_error, hang, corrupt, none}."""
        fm = self.fault_model
        r = self._rng.random()
        edge = fm.abort_prob
        if r < edge:
            return FaultClass.ABORT
        edge += fm.api_error_prob
        if r < edge:
            return FaultClass.API_ERROR
        edge += fm.hang_prob
        if r < edge:
            return FaultClass.HANG
        edge += fm.corrupt_prob
        if r < edge:
            return FaultClass.CORRUPT
        return None

    def runtime_ns(self, size_elements: int) -> int:
        ns = self.speed.runtime_ns(size_elements)
        if self.speed.jitter_ns > 0:
            ns += self._jitter_rng.randint(-self.speed.jitter_ns, self.speed.jitter_ns)
        return max(1, ns)


@dataclass
class TransferCostModel:
    """Per-byte transfer cost between memory spaces; same-space cost is 0."""

    rates: dict[tuple[str, str], float] = field(default_factory=dict)
    default_ns_per_byte: float = 0.0

    def __post_init__(self):
        if self.default_ns_per_byte < 0:
            raise ConfigError(f"default_ns_per_byte must be >= 0, got {self.default_ns_per_byte}")
        for pair, rate in self.rates.items():
            if rate < 0:
                raise ConfigError(f"transfer rate {pair} must be >= 0, got {rate}")

    def ns_per_byte(self, src: str, dst: str) -> float:
        if src == dst:
            return 0.0
        return self.rates.get((src, dst), self.default_ns_per_byte)

    def cost_ns(self, src: str, dst: str, n_bytes: int) -> int:
        if src == dst:
            return 0
        return round(n_bytes * self.ns_per_byte(src, dst))


@dataclass
class ExecutionOutcome:
    """Per-attempt record from the device model. `duration_ns` is None for
    hang outcomes (the executor owns wall-clock behavior)."""

    unit: str
    kernel: str
    size_elements: int
    duration_ns: Optional[int]
    fault: Optional[FaultClass]
    corrupted_index: Optional[int] = None


def _corrupt_buffer(rng: random.Random, view: np.ndarray, value_type: ValueType,
                    spec: CorruptionSpec) -> int:
    """Perturb one element of `view` in place; returns the element index."""
    n = view.size if value_type.numpy_dtype is not None else len(view)
    if n == 0:
        return -1
    idx = spec.element if spec.element is not None else rng.randrange(n)
    idx = min(idx, n - 1)
    if value_type.numpy_dtype is not None:
        x = float(view[idx])
        view[idx] = x * (1.0 + spec.relative_magnitude) if x != 0.0 else spec.relative_magnitude
    else:
        view[idx] = view[idx] ^ 0x01
    return idx


def simulate_execution(unit: ProcessingUnit, kernel: str, kind: str, size_elements: int,
                       body: Optional[Callable[[], None]] = None,
                       write_views: Sequence[tuple[np.ndarray, ValueType]] = ()) -> ExecutionOutcome:
    """Simulate one kernel attempt on `unit`.

    The duration comes from the unit's speed profile and never depends on
    the fault draw (hang excepted, which reports no duration). On a clean
    or corrupt draw the kernel body runs; corrupt then perturbs one output
    element. On abort/api_error the body is skipped and the provisional
    output buffers are scribbled to simulate an undefined state. A body
    that raises is intercepted and reported as an abort.
    """
    if kind != unit.kind:
        raise DispatchError(f"kernel {kernel!r} targets kind {kind!r}, unit {unit.id!r} is {unit.kind!r}")
    fault = unit.draw_fault()
    duration = unit.runtime_ns(size_elements)
    if fault is FaultClass.HANG:
        return ExecutionOutcome(unit.id, kernel, size_elements, None, fault)
    if fault in (FaultClass.ABORT, FaultClass.API_ERROR):
        for view, vt in write_views:
            raw = view.view(np.uint8) if vt.numpy_dtype is not None else view
            n = min(8, raw.size)
            if n:
                raw[:n] = [unit._rng.randrange(256) for _ in range(n)]
        return ExecutionOutcome(unit.id, kernel, size_elements, duration, fault)
    corrupted = None
    if body is not None:
        try:
            body()
        except Exception:
            # a crashing kernel body is intercepted like a segfault
            return ExecutionOutcome(unit.id, kernel, size_elements, duration, FaultClass.ABORT)
    if fault is FaultClass.CORRUPT and write_views:
        which = unit._rng.randrange(len(write_views))
        view, vt = write_views[which]
        corrupted = _corrupt_buffer(unit._rng, view, vt, unit.fault_model.corruption)
    return ExecutionOutcome(unit.id, kernel, size_elements, duration, fault, corrupted)


@dataclass
class Fleet:
    spaces: dict[str, MemorySpace]
    units: dict[str, ProcessingUnit]
    transfers: TransferCostModel

    @property
    def host_space(self) -> str:
        for sp in self.spaces.values():
            if sp.is_host:
                return sp.id
        raise ConfigError("fleet has no host space")

    def unit(self, unit_id: str) -> ProcessingUnit:
        return self.units[unit_id]

    def reset_rngs(self):
        for u in self.units.values():
            u.reset_rng()


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def load_fleet(source) -> Fleet:
    """Build a Fleet from a config dict, a YAML path, or YAML text.

    Validation errors name the offending field. The config declares memory
    spaces (exactly one marked host), units, and a transfer matrix; omitted
    transfer pairs fall back to `default_ns_per_byte` and same-space pairs
    are forced to zero.
    """
    if isinstance(source, (str, Path)) and "\n" not in str(source):
        with open(source, "r", encoding="utf-8") as fh:
            cfg = yaml.safe_load(fh)
    elif isinstance(source, str):
        cfg = yaml.safe_load(source)
    else:
        cfg = source
    if not isinstance(cfg, dict):
        raise ConfigError("fleet config must be a mapping")

    spaces: dict[str, MemorySpace] = {}
    host_count = 0
    for i, raw in enumerate(cfg.get("memory_spaces", [])):
        _require(isinstance(raw, dict) and "id" in raw, f"memory_spaces[{i}]: missing id")
        sid = str(raw["id"])
        _require(sid not in spaces, f"memory_spaces[{i}].id: duplicate {sid!r}")
        sp = MemorySpace(sid, str(raw.get("label", "")), bool(raw.get("host", False)))
        host_count += sp.is_host
        spaces[sid] = sp
    _require(bool(spaces), "memory_spaces: at least one space is required")
    _require(host_count == 1, f"memory_spaces: exactly one host space required, found {host_count}")

    units: dict[str, ProcessingUnit] = {}
    raw_units = cfg.get("units", [])
    _require(bool(raw_units), "units: fleet must contain at least one unit")
    for i, raw in enumerate(raw_units):
        _require(isinstance(raw, dict) and "id" in raw, f"units[{i}]: missing id")
        uid = str(raw["id"])
        _require(uid not in units, f"units[{i}].id: duplicate {uid!r}")
        for key in ("kind", "memory_space"):
            _require(key in raw, f"units[{i}].{key}: missing")
        _require(raw["memory_space"] in spaces,
                 f"units[{i}].memory_space: unknown space {raw['memory_space']!r}")
        try:
            speed = SpeedProfile(
                base_latency_ns=round(float(raw.get("base_latency_us", 1.0)) * 1000.0),
                per_elem_cost_ns=float(raw.get("per_elem_cost_ns", 0.0)),
                table_ns={int(k): int(v) for k, v in (raw.get("runtime_table_ns") or {}).items()},
                jitter_ns=int(raw.get("jitter_ns", 0)),
            )
            corruption = CorruptionSpec(
                relative_magnitude=float(raw.get("corrupt_rel_magnitude", 0.01)),
                element=raw.get("corrupt_element"),
            )
            fm = FaultModel(
                abort_prob=float(raw.get("abort_prob", 0.0)),
                api_error_prob=float(raw.get("api_error_prob", 0.0)),
                hang_prob=float(raw.get("hang_prob", 0.0)),
                corrupt_prob=float(raw.get("corrupt_prob", 0.0)),
                corruption=corruption,
                rng_seed=int(raw.get("seed", 0)),
            )
        except ConfigError as exc:
            raise ConfigError(f"units[{i}] ({uid}): {exc}") from None
        units[uid] = ProcessingUnit(uid, str(raw["kind"]), str(raw["memory_space"]), speed, fm)

    rates: dict[tuple[str, str], float] = {}
    for i, raw in enumerate(cfg.get("transfers", [])):
        _require(isinstance(raw, dict) and "from" in raw and "to" in raw,
                 f"transfers[{i}]: needs 'from' and 'to'")
        src, dst = str(raw["from"]), str(raw["to"])
        _require(src in spaces, f"transfers[{i}].from: unknown space {src!r}")
        _require(dst in spaces, f"transfers[{i}].to: unknown space {dst!r}")
        rate = float(raw.get("ns_per_byte", 0.0))
        _require(rate >= 0, f"transfers[{i}].ns_per_byte: must be >= 0, got {rate}")
        if src != dst:  # same-space pairs are forced to zero
            rates[(src, dst)] = rate
    default_rate = float(cfg.get("default_ns_per_byte", 0.0))
    _require(default_rate >= 0, f"default_ns_per_byte: must be >= 0, got {default_rate}")

    return Fleet(spaces=spaces, units=units,
                 transfers=TransferCostModel(rates=rates, default_ns_per_byte=default_rate))
