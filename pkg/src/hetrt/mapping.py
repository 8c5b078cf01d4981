"""Kernel/unit selection under the four execution strategies.

The fault-aware runtime F of a candidate is its mean fault-free runtime R
stretched by the expected number of tries: F = R / (1 - p) with fault
probability p = (t - v) / t. A candidate whose every past attempt faulted
(p = 1) has infinite F and is quarantined: it only re-enters as a probe
once a configured number of dispatches has elapsed.

Candidate ordering uses exact rational arithmetic so that ties (for
example the crossover p = 1 - 1/k between a fast-but-flaky unit and a
k-times-slower clean one) resolve deterministically instead of drifting
on float rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence

from .devices import Fleet
from .errors import StrategyInfeasibleError, UnrecoverableTaskError
from .profiles import ProfileDB, ProfileKey


class StrategyKind(Enum):
    PERF = "perf"
    PERF_CP = "perfcp"
    DMR = "dmr"
    HET_DMR = "hetdmr"

    @property
    def replicas(self) -> int:
        return 2 if self in (StrategyKind.DMR, StrategyKind.HET_DMR) else 1


@dataclass(frozen=True)
class Strategy:
    """A strategy kind plus its tunables.

    rank_by/fault_policy exist for the experiment baselines: ordering by
    raw runtime with permanent exclusion of ever-faulted candidates
    ("avoidance"), or with no reordering at all ("pin").
    """

    kind: StrategyKind
    timeout_factor: float = 3.0
    voter_placement: str = "lowest-F"       # or "avoid-task-units"
    rank_by: str = "F"                      # or "R"
    fault_policy: str = "next-best"         # or "permanent-exclude" | "pin"
    degrade_on_infeasible: bool = False

    def __post_init__(self):
        if self.timeout_factor <= 1.0:
            raise ValueError(f"timeout_factor must be > 1, got {self.timeout_factor}")
        if self.voter_placement not in ("lowest-F", "avoid-task-units"):
            raise ValueError(f"unknown voter placement {self.voter_placement!r}")
        if self.rank_by not in ("F", "R"):
            raise ValueError(f"rank_by must be 'F' or 'R', got {self.rank_by!r}")
        if self.fault_policy not in ("next-best", "permanent-exclude", "pin"):
            raise ValueError(f"unknown fault policy {self.fault_policy!r}")
        if self.kind is StrategyKind.PERF:
            # raw performance mapping: rank by fault-free runtime alone
            object.__setattr__(self, "rank_by", "R")

    @property
    def protect(self) -> bool:
        return self.kind is not StrategyKind.PERF


@dataclass
class FaultAwareEstimate:
    key: ProfileKey
    R: Optional[float]          # mean fault-free runtime, ns; None if never timed
    p: float                    # fault probability in [0, 1]
    F: float                    # R / (1 - p); math.inf when p == 1
    p_exact: Fraction = Fraction(0)
    F_exact: Optional[Fraction] = None   # None encodes infinity


def fault_aware_estimate(R: float, v: int, t: int, key: Optional[ProfileKey] = None) -> FaultAwareEstimate:
    """Estimate from a mean fault-free runtime and the v/t counters."""
    if t <= 0:
        raise ValueError("t must be positive")
    if v > t or v < 0:
        raise ValueError(f"need 0 <= v <= t, got v={v}, t={t}")
    p_exact = Fraction(t - v, t)
    if v == 0:
        return FaultAwareEstimate(key, R, 1.0, math.inf, p_exact, None)
    f_exact = Fraction(R) * Fraction(t, v) if R is not None else None
    f_float = R * t / v if R is not None else math.inf
    return FaultAwareEstimate(key, R, float(p_exact), f_float, p_exact, f_exact)


@dataclass(frozen=True)
class Selection:
    kernel: str
    unit_id: str


@dataclass
class MappingDecision:
    selections: list[Selection]
    protect: bool
    timeouts_ns: list[Optional[int]]
    voter: Optional[Selection] = None
    rationale: str = ""


@dataclass
class TaskRetryState:
    """Per task-instance bookkeeping threaded through select/on_fault."""

    attempt_limit: int
    attempts_used: int = 0
    excluded: set[Selection] = field(default_factory=set)


@dataclass
class MapperConfig:
    check_interval: int = 10          # dispatches between quarantine probes; 0 disables quarantine
    attempt_limit: int = 20
    default_deadline_ns: int = 100_000_000  # bootstrap timeout for unprofiled candidates
    explore_unprofiled: bool = True


# rank tiers: probes and unprofiled candidates are tried before profiled ones
_TIER_PROBE = 0
_TIER_UNPROFILED = 1
_TIER_PROFILED = 2
_TIER_INFINITE = 3


class Mapper:
    def __init__(self, fleet: Fleet, profiles: ProfileDB, config: Optional[MapperConfig] = None):
        self._fleet = fleet
        self._profiles = profiles
        self.config = config or MapperConfig()
        self._probe_clock: dict[ProfileKey, int] = {}
        self._permanent_excluded: set[Selection] = set()

    # -- estimation ---------------------------------------------------------

    def estimate(self, key: ProfileKey) -> Optional[FaultAwareEstimate]:
        rec = self._profiles.record(key)
        if rec is None or rec.t == 0:
            return None
        est = fault_aware_estimate(rec.mean_runtime_ns, rec.v, rec.t, key)
        if rec.v > 0 and rec.runtime_count > 0:
            # exact rank value straight from the integer counters
            est.F_exact = Fraction(rec.runtime_sum_ns * rec.t, rec.runtime_count * rec.v)
        return est

    def timeout_ns(self, key: ProfileKey, timeout_factor: float) -> int:
        rec = self._profiles.record(key)
        if rec is None or rec.runtime_count == 0:
            return self.config.default_deadline_ns
        return max(1, round(rec.mean_runtime_ns * timeout_factor))

    # -- quarantine ---------------------------------------------------------

    def check_quarantine(self, key: ProfileKey) -> bool:
        """True when a p=1 candidate may run a probe attempt."""
        if self.config.check_interval <= 0:
            return True
        return self._probe_clock.get(key, 0) >= self.config.check_interval

    def _tick_quarantine(self, key: ProfileKey) -> None:
        self._probe_clock[key] = self._probe_clock.get(key, 0) + 1

    def _note_probe(self, key: ProfileKey) -> None:
        self._probe_clock[key] = 0

    # -- candidate ranking ----------------------------------------------------

    def _rank(self, strategy: Strategy, size: int, sel: Selection):
        """Sort key: (tier, exact cost, unit id, kernel). Returns None for
        candidates that are quarantined and not yet eligible to probe."""
        key = self._profiles.key_for(sel.kernel, size, sel.unit_id)
        est = self.estimate(key)
        if est is None:
            tier = _TIER_UNPROFILED if self.config.explore_unprofiled else _TIER_PROFILED
            return (tier, Fraction(0), sel.unit_id, sel.kernel)
        if est.p_exact == 1:
            if self.config.check_interval > 0:
                self._tick_quarantine(key)
                if self.check_quarantine(key):
                    return (_TIER_PROBE, Fraction(0), sel.unit_id, sel.kernel)
                return None  # quarantined, sit this dispatch out
            return (_TIER_INFINITE, Fraction(0), sel.unit_id, sel.kernel)
        if est.R is None:
            # valid runs exist but none were timed (merged records); explore it
            return (_TIER_UNPROFILED, Fraction(0), sel.unit_id, sel.kernel)
        if strategy.rank_by == "R":
            rec = self._profiles.record(key)
            cost = Fraction(rec.runtime_sum_ns, rec.runtime_count)
        else:
            cost = est.F_exact
        return (_TIER_PROFILED, cost, sel.unit_id, sel.kernel)

    def _ranked(self, strategy: Strategy, size: int, candidates: Sequence[Selection],
                excluded: set[Selection]) -> list[Selection]:
        rows = []
        for sel in candidates:
            if sel in excluded or sel in self._permanent_excluded:
                continue
            rank = self._rank(strategy, size, sel)
            if rank is not None:
                rows.append((rank, sel))
        rows.sort(key=lambda r: r[0])
        return [sel for _, sel in rows]

    # -- selection ------------------------------------------------------------

    def select(self, strategy: Strategy, size: int, candidates: Sequence[Selection],
               state: Optional[TaskRetryState] = None) -> MappingDecision:
        """Pick the strategy's (kernel, unit) selections from `candidates`."""
        if not candidates:
            raise StrategyInfeasibleError("task has no compatible (kernel, unit) candidates")
        excluded = state.excluded if state is not None else set()
        ranked = self._ranked(strategy, size, candidates, excluded)
        if not ranked and excluded:
            # every candidate was tried and failed this instance: start over
            excluded.clear()
            ranked = self._ranked(strategy, size, candidates, excluded)
        if strategy.kind.replicas == 1:
            if not ranked:
                raise StrategyInfeasibleError("no eligible candidate (all quarantined)")
            sel = ranked[0]
            self._note_probe_if_needed(size, sel)
            return MappingDecision(
                selections=[sel], protect=strategy.protect,
                timeouts_ns=[self.timeout_for(sel, size, strategy)],
                rationale=self._why(strategy, size, sel))
        return self._select_pair(strategy, size, candidates, ranked, excluded)

    def _select_pair(self, strategy, size, candidates, ranked, excluded) -> MappingDecision:
        het = strategy.kind is StrategyKind.HET_DMR
        pair = None
        for i in range(len(ranked)):
            for j in range(i + 1, len(ranked)):
                a, b = ranked[i], ranked[j]
                if a.unit_id == b.unit_id:
                    continue
                if het and a.kernel == b.kernel:
                    continue
                pair = (a, b)
                break
            if pair:
                break
        if pair is None:
            return self._degrade(strategy, size, candidates, excluded)
        for sel in pair:
            self._note_probe_if_needed(size, sel)
        return MappingDecision(
            selections=list(pair), protect=True,
            timeouts_ns=[self.timeout_for(s, size, strategy) for s in pair],
            rationale=self._why(strategy, size, pair[0]) + "+" + self._why(strategy, size, pair[1]))

    def _degrade(self, strategy, size, candidates, excluded) -> MappingDecision:
        if not strategy.degrade_on_infeasible:
            raise StrategyInfeasibleError(
                f"{strategy.kind.value}: cannot find two candidates with distinct units"
                + (" and distinct kernels" if strategy.kind is StrategyKind.HET_DMR else ""))
        if strategy.kind is StrategyKind.HET_DMR:
            fallback = Strategy(StrategyKind.DMR, strategy.timeout_factor, strategy.voter_placement,
                                strategy.rank_by, strategy.fault_policy, True)
        else:
            fallback = Strategy(StrategyKind.PERF_CP, strategy.timeout_factor, strategy.voter_placement,
                                strategy.rank_by, strategy.fault_policy, True)
        state = TaskRetryState(attempt_limit=0)
        state.excluded = excluded
        return self.select(fallback, size, candidates, state)

    def on_fault(self, strategy: Strategy, size: int, candidates: Sequence[Selection],
                 state: TaskRetryState, failed: Selection) -> MappingDecision:
        """Next decision after a fault/timeout on `failed`; raises when the
        task-wide attempt budget is spent."""
        if state.attempts_used >= state.attempt_limit:
            raise UnrecoverableTaskError(
                f"gave up after {state.attempts_used} attempts (limit {state.attempt_limit})")
        if strategy.fault_policy == "permanent-exclude":
            self._permanent_excluded.add(failed)
        elif strategy.fault_policy == "next-best":
            state.excluded.add(failed)
        # "pin": no exclusion; the same best candidate is selected again
        return self.select(strategy, size, candidates, state)

    def replace_replica(self, strategy: Strategy, size: int, candidates: Sequence[Selection],
                        state: TaskRetryState, failed: Selection,
                        keep: Selection) -> Selection:
        """Re-dispatch one replica, honoring the diversity constraint against
        the surviving replica `keep`."""
        if state.attempts_used >= state.attempt_limit:
            raise UnrecoverableTaskError(
                f"gave up after {state.attempts_used} attempts (limit {state.attempt_limit})")
        if strategy.fault_policy == "permanent-exclude":
            self._permanent_excluded.add(failed)
        else:
            state.excluded.add(failed)
        het = strategy.kind is StrategyKind.HET_DMR

        def feasible(ranked):
            for sel in ranked:
                if sel.unit_id == keep.unit_id:
                    continue
                if het and sel.kernel == keep.kernel:
                    continue
                return sel
            return None

        ranked = self._ranked(strategy, size, candidates, state.excluded)
        sel = feasible(ranked)
        if sel is None and state.excluded:
            state.excluded.clear()
            sel = feasible(self._ranked(strategy, size, candidates, state.excluded))
        if sel is None:
            raise StrategyInfeasibleError(
                f"{strategy.kind.value}: no diverse replacement for {failed}")
        self._note_probe_if_needed(size, sel)
        return sel

    # -- helpers ----------------------------------------------------------------

    def timeout_for(self, sel: Selection, size: int, strategy: Strategy) -> int:
        key = self._profiles.key_for(sel.kernel, size, sel.unit_id)
        return self.timeout_ns(key, strategy.timeout_factor)

    def _note_probe_if_needed(self, size: int, sel: Selection) -> None:
        key = self._profiles.key_for(sel.kernel, size, sel.unit_id)
        if key in self._probe_clock:
            est = self.estimate(key)
            if est is not None and est.p_exact == 1:
                self._note_probe(key)
            else:
                self._probe_clock.pop(key, None)

    def _why(self, strategy: Strategy, size: int, sel: Selection) -> str:
        key = self._profiles.key_for(sel.kernel, size, sel.unit_id)
        est = self.estimate(key)
        if est is None:
            return "explore"
        if est.p_exact == 1:
            return "probe"
        if strategy.rank_by == "R":
            return f"R={est.R:.0f}"
        return f"F={est.F:.0f}"
