"""Heterogeneity-aware result voting.

Integer-like areas must match bit for bit. Float areas tolerate a relative
delta (default 0.1%): x and y agree when |x - y| <= delta * max(|x|, |y|).
Different units may reorder instructions or round differently, so exact
equality would reject correct results.

The voter is itself a schedulable task: each voter kernel (single-threaded,
parallel-CPU, GPU) has a byte-based speed profile, and placement picks the
cheapest (kernel, unit) including the cost of shipping both result sets to
the voter's memory space. The default calibration puts the single-threaded
kernel ahead below ~10 kB and the GPU kernel ahead above ~100 kB.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .devices import Fleet, ValueType
from .errors import DispatchError


@dataclass
class VoterKernelProfile:
    kernel: str
    unit_kind: str
    base_ns: int
    per_byte_ns: float

    def cost_ns(self, size_bytes: int) -> int:
        return max(1, round(self.base_ns + self.per_byte_ns * size_bytes))


def default_voter_profiles() -> list[VoterKernelProfile]:
    return [
        VoterKernelProfile("voter_single", "cpu", 1_000, 1.0),
        VoterKernelProfile("voter_parallel", "cpu", 10_000, 0.1),
        VoterKernelProfile("voter_gpu", "gpu", 19_000, 0.001),
    ]


@dataclass
class VoterConfig:
    float_delta: float = 0.001
    placement: str = "lowest-F"              # or "avoid-task-units"
    profiles: list[VoterKernelProfile] = field(default_factory=default_voter_profiles)

    def __post_init__(self):
        if self.float_delta < 0:
            raise ValueError(f"float_delta must be >= 0, got {self.float_delta}")
        if self.placement not in ("lowest-F", "avoid-task-units"):
            raise ValueError(f"unknown voter placement {self.placement!r}")


@dataclass
class VoteOutcome:
    verdict: str                                  # "match" | "mismatch"
    first_divergence: Optional[tuple[str, int, object, object]] = None

    @property
    def is_match(self) -> bool:
        return self.verdict == "match"


def _compare_floats(a: np.ndarray, b: np.ndarray, delta: float):
    """Index of the first diverging element, or None. NaN matches NaN
    positionally; everything else uses the symmetric relative rule."""
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    with np.errstate(invalid="ignore"):
        diff = np.abs(a64 - b64)
        # the relative rule only applies to finite differences; opposite-sign
        # infinities must not pass via an infinite bound
        ok = (diff <= delta * np.maximum(np.abs(a64), np.abs(b64))) & np.isfinite(diff)
        ok |= a64 == b64                       # covers equal infinities exactly
        ok |= np.isnan(a64) & np.isnan(b64)
    bad = np.flatnonzero(~ok)
    return int(bad[0]) if bad.size else None


def compare_payloads(a: bytes, b: bytes, value_type: ValueType, elem_width: int,
                     delta: float):
    """First diverging element index (or None) for one area's two payloads."""
    if len(a) != len(b):
        raise DispatchError(f"result payloads differ in size: {len(a)} vs {len(b)} bytes")
    if value_type.numpy_dtype is not None:
        av = np.frombuffer(a, dtype=value_type.numpy_dtype)
        bv = np.frombuffer(b, dtype=value_type.numpy_dtype)
        idx = _compare_floats(av, bv, delta)
        if idx is None:
            return None
        return idx, float(av[idx]), float(bv[idx])
    if a == b:
        return None
    av = np.frombuffer(a, dtype=np.uint8)
    bv = np.frombuffer(b, dtype=np.uint8)
    byte_idx = int(np.flatnonzero(av != bv)[0])
    idx = byte_idx // elem_width
    lo, hi = idx * elem_width, (idx + 1) * elem_width
    return idx, bytes(a[lo:hi]), bytes(b[lo:hi])


def compare(result_a: dict[str, tuple[bytes, ValueType, int]],
            result_b: dict[str, tuple[bytes, ValueType, int]],
            config: VoterConfig) -> VoteOutcome:
    """Compare two result sets keyed by area id. Values are
    (payload bytes, value type, element width)."""
    if set(result_a) != set(result_b):
        raise DispatchError(f"result sets cover different areas: "
                            f"{sorted(result_a)} vs {sorted(result_b)}")
    for area in sorted(result_a):
        pa, vt_a, w_a = result_a[area]
        pb, vt_b, w_b = result_b[area]
        if vt_a is not vt_b or w_a != w_b:
            raise DispatchError(f"area {area!r}: value type mismatch between results")
        div = compare_payloads(pa, pb, vt_a, w_a, config.float_delta)
        if div is not None:
            idx, va, vb = div
            return VoteOutcome("mismatch", (area, idx, va, vb))
    return VoteOutcome("match")


def voter_cost_ns(config: VoterConfig, unit_kind: str, size_bytes: int) -> int:
    """Cheapest voter kernel cost on a unit of the given kind."""
    costs = [p.cost_ns(size_bytes) for p in config.profiles if p.unit_kind == unit_kind]
    if not costs:
        raise DispatchError(f"no voter kernel for unit kind {unit_kind!r}")
    return min(costs)


@dataclass
class VoterPlacement:
    kernel: str
    unit_id: str
    compute_ns: int
    transfer_ns: int

    @property
    def total_ns(self) -> int:
        return self.compute_ns + self.transfer_ns


def place_voter(fleet: Fleet, config: VoterConfig,
                results: Sequence[tuple[int, str, str]],
                task_units: Sequence[str] = ()) -> VoterPlacement:
    """Pick the (voter kernel, unit) minimizing compare cost plus the cost
    of shipping both result copies into the voter's space.

    `results` holds (n_bytes, space_of_copy_a, space_of_copy_b) per output
    area. Under the avoid-task-units policy, units that executed the
    replicas are skipped whenever any alternative exists.
    """
    size_bytes = sum(r[0] for r in results)
    candidates = []
    for prof in config.profiles:
        for unit in fleet.units.values():
            if unit.kind != prof.unit_kind:
                continue
            ship = 0
            for n_bytes, sp_a, sp_b in results:
                ship += fleet.transfers.cost_ns(sp_a, unit.memory_space, n_bytes)
                ship += fleet.transfers.cost_ns(sp_b, unit.memory_space, n_bytes)
            candidates.append(VoterPlacement(prof.kernel, unit.id, prof.cost_ns(size_bytes), ship))
    if not candidates:
        raise DispatchError("no voter-capable unit in the fleet")
    if config.placement == "avoid-task-units":
        avoid = set(task_units)
        outside = [c for c in candidates if c.unit_id not in avoid]
        if outside:
            candidates = outside
    return min(candidates, key=lambda c: (c.total_ns, c.unit_id, c.kernel))
