"""Public dispatch layer: declare tasks, attach kernel variants, register
data, and invoke.

A task is declared once with its argument signature. Kernel variants attach
per unit kind; dispatch picks (kernel, unit) combinations by strategy. Area
arguments are registered buffers tracked by the memory manager; scalar
arguments pass by value. Kernel bodies receive a context and must request
each area argument before using it:

    def inc_cpu(ctx):
        src = ctx.request("input", "r")
        dst = ctx.request("output", "w")
        dst[:ctx.arg("count")] = src[:ctx.arg("count")] + 1.0

After a successful invoke the committed output is observed with
`read_area`, which performs a host-space read request.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .devices import Fleet, ValueType
from .errors import BindingError, DeclarationError
from .executor import BoundTask, Executor, RunReport, TaskParam
from .mapping import Mapper, MapperConfig, Strategy, StrategyKind
from .memory import MemoryManager
from .profiles import ProfileDB
from .voting import VoterConfig


@dataclass(frozen=True)
class Param:
    name: str
    is_area: bool
    mode: Optional[str] = None

    @staticmethod
    def area(name: str, mode: str) -> "Param":
        if mode not in ("r", "w", "rw"):
            raise DeclarationError(f"area parameter {name!r}: mode must be r/w/rw, got {mode!r}")
        return Param(name, True, mode)

    @staticmethod
    def scalar(name: str) -> "Param":
        return Param(name, False)


@dataclass
class KernelVariant:
    kernel: str
    unit_kind: str
    body: Callable


@dataclass
class TaskDecl:
    name: str
    params: tuple[Param, ...]
    variants: dict[str, KernelVariant] = field(default_factory=dict)
    float_delta: Optional[float] = None


@dataclass
class RuntimeConfig:
    default_strategy: Strategy = field(default_factory=lambda: Strategy(StrategyKind.PERF_CP))
    timeout_factor: float = 3.0
    check_interval: int = 10
    attempt_limit: int = 20
    default_deadline_ns: int = 100_000_000
    voter: VoterConfig = field(default_factory=VoterConfig)
    profile_bucketing: str = "exact"
    serial_replicas: bool = False
    trace: Optional[Callable[[str], None]] = None


class Runtime:
    """One runtime instance: a fleet plus memory, profiles, mapper, executor."""

    def __init__(self, fleet: Fleet, config: Optional[RuntimeConfig] = None,
                 profiles: Optional[ProfileDB] = None):
        self.config = config or RuntimeConfig()
        self.fleet = fleet
        self.memory = MemoryManager(fleet)
        self.profiles = profiles if profiles is not None else ProfileDB(self.config.profile_bucketing)
        self.mapper = Mapper(fleet, self.profiles, MapperConfig(
            check_interval=self.config.check_interval,
            attempt_limit=self.config.attempt_limit,
            default_deadline_ns=self.config.default_deadline_ns))
        self.executor = Executor(fleet, self.memory, self.profiles, self.mapper,
                                 self.config.voter, trace=self.config.trace,
                                 serial_replicas=self.config.serial_replicas)
        self._tasks: dict[str, TaskDecl] = {}

    # -- data ------------------------------------------------------------------

    def register_data(self, payload, size_elements: int, value_type: ValueType,
                      mode: str) -> str:
        return self.memory.register(payload, size_elements, value_type, mode)

    def read_area(self, area: str) -> bytes:
        """Committed bytes of an area, via a host-space read request."""
        handle = self.memory.request(area, self.fleet.host_space, "r", protect=False)
        return bytes(handle.payload)

    def read_array(self, area: str) -> np.ndarray:
        meta = self.memory.meta(area)
        dtype = meta.value_type.numpy_dtype or np.uint8
        return np.frombuffer(self.read_area(area), dtype=dtype)

    # -- declaration --------------------------------------------------------------

    def declare_task(self, name: str, params, float_delta: Optional[float] = None) -> TaskDecl:
        if name in self._tasks:
            raise DeclarationError(f"task {name!r} is already declared")
        params = tuple(params)
        if not params:
            raise DeclarationError(f"task {name!r}: signature needs at least one parameter")
        seen = set()
        for p in params:
            if p.name in seen:
                raise DeclarationError(f"task {name!r}: duplicate parameter {p.name!r}")
            seen.add(p.name)
        decl = TaskDecl(name, params, float_delta=float_delta)
        self._tasks[name] = decl
        return decl

    def attach_kernel(self, task: TaskDecl, kernel: str, unit_kind: str, body: Callable,
                      params=None) -> None:
        if kernel in task.variants:
            raise DeclarationError(f"kernel {kernel!r} is already attached to {task.name!r}")
        if params is not None and tuple(params) != task.params:
            raise DeclarationError(
                f"kernel {kernel!r}: signature does not match task {task.name!r}")
        task.variants[kernel] = KernelVariant(kernel, unit_kind, body)

    # -- invocation -----------------------------------------------------------------

    def invoke(self, task: TaskDecl, bindings: dict, strategy: Optional[Strategy] = None,
               size_elements: Optional[int] = None) -> RunReport:
        """Run the task to completion under the strategy; blocks until the
        result is committed or the attempt budget is exhausted."""
        if not task.variants:
            raise DeclarationError(f"task {task.name!r} has no kernel variants attached")
        strategy = strategy or self.config.default_strategy
        area_sizes = []
        for p in task.params:
            if p.name not in bindings:
                raise BindingError(f"task {task.name!r}: missing argument {p.name!r}")
            if p.is_area:
                area = bindings[p.name]
                try:
                    meta = self.memory.meta(area)
                except Exception:
                    raise BindingError(
                        f"task {task.name!r}: argument {p.name!r} is not a registered area"
                    ) from None
                if meta.declared_mode != p.mode:
                    raise BindingError(
                        f"task {task.name!r}: argument {p.name!r} declared {p.mode!r} "
                        f"but area {area!r} was registered {meta.declared_mode!r}")
                area_sizes.append(meta.size_elements)
        extra = set(bindings) - {p.name for p in task.params}
        if extra:
            raise BindingError(f"task {task.name!r}: unknown arguments {sorted(extra)}")
        if size_elements is None:
            if not area_sizes:
                raise BindingError(f"task {task.name!r}: give size_elements explicitly "
                                   "for tasks without area arguments")
            size_elements = max(area_sizes)
        bound = BoundTask(
            name=task.name,
            params=[TaskParam(p.name, p.is_area, p.mode) for p in task.params],
            bindings=dict(bindings),
            variants={k: (v.unit_kind, v.body) for k, v in task.variants.items()},
            size_elements=size_elements,
            float_delta=task.float_delta)
        return self.executor.run_task(bound, strategy)

    # -- profile persistence -----------------------------------------------------------

    def persist_profiles(self, path) -> None:
        self.profiles.persist(path)

    def load_profiles(self, path) -> None:
        self.profiles.load(path)

    def close(self):
        self.executor.close()
