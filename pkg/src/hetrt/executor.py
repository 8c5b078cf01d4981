"""Attempt execution, fault interception, rollback, and redundancy voting.

Control flow per strategy:

* Perf       - one unprotected attempt; a direct fault surfaces to the caller.
* Perf+CP    - checkpoint-protected attempts in a retry loop; after a direct
               fault the touched device-space siblings are invalidated and the
               mapper supplies the next best (kernel, unit).
* DMR/HetDMR - two protected replica attempts, each writing its own
               provisional output buffers; a voter compares the outputs and
               one replica's buffers are committed on a match. A direct fault
               re-dispatches the affected replica, a mismatch re-dispatches
               both, always under the pair diversity constraint.

Hang outcomes convert to timeout faults at the attempt's deadline
(estimated runtime x timeout factor); an attempt whose simulated duration
overruns its deadline is likewise killed at the deadline and retried, which
costs time but never correctness.

All durations are virtual nanoseconds. Accounting is centralized here:
serial attempts add up, concurrently launched replicas contribute the
maximum of their round, and transfer/checkpoint/voter costs are tracked
separately so the report's total is exactly the sum of its parts.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .devices import FaultClass, Fleet, ValueType, simulate_execution
from .errors import (BindingError, StrategyInfeasibleError, TaskFaultError,
                     UnrecoverableTaskError)
from .mapping import Mapper, MappingDecision, Selection, Strategy, StrategyKind, TaskRetryState
from .memory import MemoryManager, SiblingHandle
from .profiles import ProfileDB
from .voting import VoterConfig, compare, place_voter

FAULT_EVENT_CLASSES = ("abort", "api_error", "timeout", "vote_mismatch")


@dataclass
class TaskParam:
    name: str
    is_area: bool
    mode: Optional[str] = None       # r | w | rw for area params


@dataclass
class BoundTask:
    """A task invocation resolved down to executor-level terms."""

    name: str
    params: list[TaskParam]
    bindings: dict[str, object]                       # param name -> area id or scalar
    variants: dict[str, tuple[str, Callable]]         # kernel -> (unit kind, body)
    size_elements: int
    float_delta: Optional[float] = None


class KernelContext:
    """Argument access for kernel bodies.

    Payload views are only handed out through request(), which checks the
    declared access mode; a body that skips the request simply has no way
    to reach the buffer, so protocol violations fail the attempt.
    """

    def __init__(self, handles: dict[str, SiblingHandle], scalars: dict[str, object],
                 count: int):
        self._handles = handles
        self._scalars = scalars
        self.count = count
        self.requested: set[str] = set()

    def request(self, name: str, mode: str) -> np.ndarray:
        h = self._handles.get(name)
        if h is None:
            raise BindingError(f"kernel requested unknown area argument {name!r}")
        if mode != h.access:
            raise BindingError(f"kernel requested {name!r} with mode {mode!r}, "
                               f"declared mode is {h.access!r}")
        self.requested.add(name)
        arr = _payload_view(h)
        if h.access == "r":
            arr = arr.view()
            arr.flags.writeable = False
        return arr

    def arg(self, name: str):
        if name not in self._scalars:
            raise BindingError(f"kernel requested unknown scalar argument {name!r}")
        return self._scalars[name]


def _payload_view(handle: SiblingHandle) -> np.ndarray:
    vt = handle.meta.value_type
    if vt.numpy_dtype is not None:
        return np.frombuffer(handle.payload, dtype=vt.numpy_dtype)
    width = handle.meta.elem_width
    dtype = {1: np.uint8, 2: np.uint16, 4: np.uint32, 8: np.uint64}.get(width, np.uint8)
    return np.frombuffer(handle.payload, dtype=dtype)


@dataclass
class PreparedAttempt:
    selection: Selection
    unit_kind: str
    space: str
    handles: dict[str, SiblingHandle]
    ctx: KernelContext
    body: Callable
    deadline_ns: int
    transfer_ns: int
    checkpoint_ns: int


@dataclass
class AttemptResult:
    prepared: PreparedAttempt
    fault: Optional[str]             # abort | api_error | timeout | None
    duration_ns: Optional[int]       # raw simulated duration (None for hang)
    elapsed_ns: int                  # virtual time the attempt occupied


@dataclass
class RunReport:
    task: str
    strategy: str
    success: bool = False
    attempts: int = 0
    rounds: int = 0
    compute_ns: int = 0
    transfer_ns: int = 0
    checkpoint_ns: int = 0
    voter_ns: int = 0
    fault_counts: dict[str, int] = field(
        default_factory=lambda: {c: 0 for c in FAULT_EVENT_CLASSES})
    votes: list[str] = field(default_factory=list)
    committed: Optional[Selection] = None

    @property
    def total_ns(self) -> int:
        return self.compute_ns + self.transfer_ns + self.checkpoint_ns + self.voter_ns

    def breakdown(self) -> dict[str, int]:
        return {"compute_ns": self.compute_ns, "transfer_ns": self.transfer_ns,
                "checkpoint_ns": self.checkpoint_ns, "voter_ns": self.voter_ns}


class Executor:
    def __init__(self, fleet: Fleet, memory: MemoryManager, profiles: ProfileDB,
                 mapper: Mapper, voter_config: VoterConfig,
                 trace: Optional[Callable[[str], None]] = None,
                 serial_replicas: bool = False):
        self._fleet = fleet
        self._memory = memory
        self._profiles = profiles
        self._mapper = mapper
        self._voter_config = voter_config
        self._trace = trace
        self._serial_replicas = serial_replicas
        self._pool: Optional[ThreadPoolExecutor] = None
        self._pool_lock = threading.Lock()

    # -- public entry ---------------------------------------------------------

    def candidates_for(self, task: BoundTask) -> list[Selection]:
        sels = []
        for kernel in sorted(task.variants):
            kind, _ = task.variants[kernel]
            for uid in sorted(self._fleet.units):
                if self._fleet.units[uid].kind == kind:
                    sels.append(Selection(kernel, uid))
        return sels

    def run_task(self, task: BoundTask, strategy: Strategy) -> RunReport:
        candidates = self.candidates_for(task)
        if not candidates:
            raise StrategyInfeasibleError(
                f"task {task.name!r}: no fleet unit matches any kernel variant")
        report = RunReport(task.name, strategy.kind.value)
        state = TaskRetryState(attempt_limit=self._mapper.config.attempt_limit)
        decision = self._mapper.select(strategy, task.size_elements, candidates, state)
        if len(decision.selections) == 1:
            self._run_single(task, strategy, candidates, state, decision, report)
        else:
            self._run_redundant(task, strategy, candidates, state, decision, report)
        return report

    # -- single-selection strategies -------------------------------------------

    def _run_single(self, task, strategy, candidates, state, decision, report):
        while True:
            sel = decision.selections[0]
            att = self._attempt(task, sel, decision.protect, decision.timeouts_ns[0],
                                state, report, decision.rationale)
            report.rounds += 1
            report.compute_ns += att.elapsed_ns
            if att.fault is None:
                self._memory.commit_success(att.prepared.handles.values())
                report.success = True
                report.committed = sel
                self._emit_done(task, report)
                return
            report.fault_counts[att.fault] += 1
            self._rollback(att.prepared)
            if strategy.kind is StrategyKind.PERF:
                self._emit_done(task, report)
                raise TaskFaultError(att.fault, f"task {task.name!r} faulted on "
                                                f"{sel.unit_id}: {att.fault}")
            try:
                decision = self._mapper.on_fault(strategy, task.size_elements,
                                                 candidates, state, sel)
            except UnrecoverableTaskError:
                self._emit_done(task, report)
                raise

    # -- DMR / HetDMR ------------------------------------------------------------

    def _run_redundant(self, task, strategy, candidates, state, decision, report):
        size = task.size_elements
        pending: list[tuple[int, Selection, Optional[int]]] = [
            (i, sel, decision.timeouts_ns[i]) for i, sel in enumerate(decision.selections)]
        slots: list[Optional[AttemptResult]] = [None, None]
        sels: list[Selection] = list(decision.selections)
        why = decision.rationale
        while True:
            results = self._launch_round(task, pending, state, report, why)
            report.rounds += 1
            report.compute_ns += max(att.elapsed_ns for att in results.values())
            pending = []
            faulted: list[int] = []
            for slot, att in sorted(results.items()):
                if att.fault is None:
                    slots[slot] = att
                else:
                    report.fault_counts[att.fault] += 1
                    self._rollback(att.prepared)
                    faulted.append(slot)
            if faulted:
                why = "refill"
                if len(faulted) == 2:
                    for slot in faulted:
                        state.excluded.add(sels[slot])
                    self._check_budget(task, state, report)
                    fresh = self._mapper.select(strategy, size, candidates, state)
                    sels = list(fresh.selections)
                    pending = [(i, sels[i], fresh.timeouts_ns[i]) for i in range(2)]
                else:
                    slot = faulted[0]
                    other = sels[1 - slot]
                    try:
                        new_sel = self._mapper.replace_replica(
                            strategy, size, candidates, state, sels[slot], keep=other)
                    except UnrecoverableTaskError:
                        self._emit_done(task, report)
                        raise
                    sels[slot] = new_sel
                    pending = [(slot, new_sel,
                                self._mapper.timeout_for(new_sel, size, strategy))]
                continue
            # both replicas completed fault-free: vote on their outputs
            verdict = self._vote(task, sels, slots, report)
            if verdict:
                self._memory.commit_success(slots[0].prepared.handles.values())
                report.success = True
                report.committed = sels[0]
                self._emit_done(task, report)
                return
            report.fault_counts["vote_mismatch"] += 1
            for slot in (0, 1):
                key = self._profiles.key_for(sels[slot].kernel, size, sels[slot].unit_id)
                self._profiles.record_outcome(key, fault_free=False)
                state.excluded.add(sels[slot])
            self._check_budget(task, state, report)
            fresh = self._mapper.select(strategy, size, candidates, state)
            sels = list(fresh.selections)
            slots = [None, None]
            pending = [(i, sels[i], fresh.timeouts_ns[i]) for i in range(2)]
            why = "revote"

    def _launch_round(self, task, pending, state, report, why) -> dict[int, AttemptResult]:
        """Run the pending replica attempts of one round. Handles are acquired
        in slot order on the dispatching thread; only the kernel bodies and
        fault draws run on the worker pool."""
        prepared: list[tuple[int, PreparedAttempt]] = []
        for slot, sel, deadline in pending:
            pa = self._prepare(task, sel, True, deadline)
            state.attempts_used += 1
            report.attempts += 1
            report.transfer_ns += pa.transfer_ns
            report.checkpoint_ns += pa.checkpoint_ns
            prepared.append((slot, pa))
        results: dict[int, AttemptResult] = {}
        if len(prepared) > 1 and not self._serial_replicas:
            pool = self._get_pool()
            futures = [(slot, pool.submit(self._execute, task, pa)) for slot, pa in prepared]
            for slot, fut in futures:
                results[slot] = fut.result()
        else:
            for slot, pa in prepared:
                results[slot] = self._execute(task, pa)
        for slot, _ in prepared:
            self._emit_attempt(task, results[slot], why)
        return results

    def _vote(self, task, sels, slots, report) -> bool:
        cfg = self._voter_config
        if task.float_delta is not None:
            cfg = replace(cfg, float_delta=task.float_delta)
        out_a: dict[str, tuple[bytes, ValueType, int]] = {}
        out_b: dict[str, tuple[bytes, ValueType, int]] = {}
        shapes: list[tuple[int, str, str]] = []
        for name, ha in slots[0].prepared.handles.items():
            if not ha.is_write:
                continue
            hb = slots[1].prepared.handles[name]
            out_a[ha.area] = (bytes(ha.payload), ha.meta.value_type, ha.meta.elem_width)
            out_b[hb.area] = (bytes(hb.payload), hb.meta.value_type, hb.meta.elem_width)
            shapes.append((ha.meta.nbytes, ha.space, hb.space))
        placement = place_voter(self._fleet, cfg, shapes,
                                task_units=[s.unit_id for s in sels])
        report.voter_ns += placement.compute_ns
        report.transfer_ns += placement.transfer_ns
        vkey = self._profiles.key_for(placement.kernel, sum(s[0] for s in shapes),
                                      placement.unit_id)
        self._profiles.record_outcome(vkey, True, placement.compute_ns)
        outcome = compare(out_a, out_b, cfg)
        report.votes.append(outcome.verdict)
        self._emit_vote(task, placement, outcome.verdict, outcome.first_divergence)
        return outcome.is_match

    def _check_budget(self, task, state, report) -> None:
        if state.attempts_used >= state.attempt_limit:
            self._emit_done(task, report)
            raise UnrecoverableTaskError(
                f"task {task.name!r}: gave up after {state.attempts_used} attempts "
                f"(limit {state.attempt_limit})")

    # -- shared attempt machinery ---------------------------------------------

    def _attempt(self, task, sel, protect, deadline, state, report, why="") -> AttemptResult:
        prepared = self._prepare(task, sel, protect, deadline)
        state.attempts_used += 1
        report.attempts += 1
        report.transfer_ns += prepared.transfer_ns
        report.checkpoint_ns += prepared.checkpoint_ns
        att = self._execute(task, prepared)
        self._emit_attempt(task, att, why)
        return att

    def _prepare(self, task: BoundTask, sel: Selection, protect: bool,
                 deadline: Optional[int]) -> PreparedAttempt:
        unit = self._fleet.units[sel.unit_id]
        kind, body = task.variants[sel.kernel]
        handles: dict[str, SiblingHandle] = {}
        scalars: dict[str, object] = {}
        for p in task.params:
            if p.is_area:
                handles[p.name] = self._memory.request(
                    task.bindings[p.name], unit.memory_space, p.mode, protect)
            else:
                scalars[p.name] = task.bindings[p.name]
        ctx = KernelContext(handles, scalars, task.size_elements)
        return PreparedAttempt(
            selection=sel, unit_kind=kind, space=unit.memory_space, handles=handles,
            ctx=ctx, body=body,
            deadline_ns=deadline if deadline is not None else self._mapper.config.default_deadline_ns,
            transfer_ns=sum(h.transfer_ns for h in handles.values()),
            checkpoint_ns=sum(h.checkpoint_ns for h in handles.values()))

    def _execute(self, task: BoundTask, prepared: PreparedAttempt) -> AttemptResult:
        unit = self._fleet.units[prepared.selection.unit_id]
        write_views = [(_payload_view(h), h.meta.value_type)
                       for h in prepared.handles.values() if h.is_write]
        outcome = simulate_execution(
            unit, prepared.selection.kernel, prepared.unit_kind, task.size_elements,
            body=lambda: prepared.body(prepared.ctx), write_views=write_views)
        if outcome.fault is FaultClass.HANG:
            fault, elapsed = "timeout", prepared.deadline_ns
        elif outcome.duration_ns > prepared.deadline_ns:
            # the real runtime would have killed the attempt at the deadline
            fault, elapsed = "timeout", prepared.deadline_ns
        elif outcome.fault is FaultClass.ABORT:
            fault, elapsed = "abort", outcome.duration_ns
        elif outcome.fault is FaultClass.API_ERROR:
            fault, elapsed = "api_error", outcome.duration_ns
        else:
            fault, elapsed = None, outcome.duration_ns
        key = self._profiles.key_for(prepared.selection.kernel, task.size_elements,
                                     prepared.selection.unit_id)
        self._profiles.record_outcome(key, fault is None,
                                      outcome.duration_ns if fault is None else None)
        return AttemptResult(prepared, fault, outcome.duration_ns, elapsed)

    def _rollback(self, prepared: PreparedAttempt) -> None:
        """Simulated device-context reset: every sibling the attempt touched
        in its device space becomes invalid. Host memory is not a device
        context; attempts running there only discard provisional buffers."""
        if prepared.space == self._fleet.host_space:
            return
        seen = set()
        for h in prepared.handles.values():
            if (h.area, h.space) not in seen:
                self._memory.invalidate(h.area, h.space)
                seen.add((h.area, h.space))

    # -- trace -------------------------------------------------------------------

    def _emit_attempt(self, task, att: AttemptResult, why: str):
        if self._trace is None:
            return
        p = att.prepared
        dur = "-" if att.duration_ns is None else str(att.duration_ns)
        self._trace(f"ATT task={task.name} kernel={p.selection.kernel} unit={p.selection.unit_id} "
                    f"fault={att.fault or 'none'} duration_ns={dur} elapsed_ns={att.elapsed_ns} "
                    f"transfer_ns={p.transfer_ns} checkpoint_ns={p.checkpoint_ns} why={why}")

    def _emit_vote(self, task, placement, verdict, divergence):
        if self._trace is None:
            return
        div = "-" if divergence is None else f"{divergence[0]}:{divergence[1]}"
        self._trace(f"VOTE task={task.name} kernel={placement.kernel} unit={placement.unit_id} "
                    f"verdict={verdict} compute_ns={placement.compute_ns} "
                    f"ship_ns={placement.transfer_ns} divergence={div}")

    def _emit_done(self, task, report: RunReport):
        if self._trace is None:
            return
        self._trace(f"DONE task={task.name} strategy={report.strategy} "
                    f"success={int(report.success)} attempts={report.attempts} "
                    f"total_ns={report.total_ns}")

    def _get_pool(self) -> ThreadPoolExecutor:
        with self._pool_lock:
            if self._pool is None:
                self._pool = ThreadPoolExecutor(max_workers=2,
                                                thread_name_prefix="hetrt-replica")
            return self._pool

    def close(self):
        with self._pool_lock:
            if self._pool is not None:
                self._pool.shutdown(wait=True)
                self._pool = None
