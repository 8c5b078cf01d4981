"""Fault-tolerant task execution over simulated heterogeneous processing units.

The runtime maps tasks onto the (kernel, unit) combination with the best
fault-aware runtime estimate, keeps versioned sibling copies of registered
memory areas across device memories with automatic transfers and
checkpointing, recovers from aborts, API errors, and hangs by rollback and
re-dispatch, and detects silent data corruption through dual-modular
redundancy with a heterogeneity-aware voter.
"""

from .api import Param, Runtime, RuntimeConfig, TaskDecl
from .devices import (CorruptionSpec, ExecutionOutcome, FaultClass, FaultModel, Fleet,
                      MemorySpace, ProcessingUnit, SpeedProfile, TransferCostModel,
                      ValueType, load_fleet, simulate_execution)
from .errors import (BindingError, ConfigError, DataLossError, DeclarationError,
                     DispatchError, HetRtError, ProfileLoadError, RegistrationError,
                     StrategyInfeasibleError, TaskFaultError, UnknownAreaError,
                     UnknownSiblingError, UnknownSpaceError, UnrecoverableTaskError,
                     WorkloadError)
from .executor import Executor, RunReport
from .fleets import build_fleet, default_fleet_config, pathfinder_fleet_config
from .mapping import (FaultAwareEstimate, Mapper, MapperConfig, MappingDecision,
                      Selection, Strategy, StrategyKind, TaskRetryState,
                      fault_aware_estimate)
from .memory import MemoryManager, Sibling, SiblingHandle
from .profiles import ProfileDB, ProfileKey, ProfileRecord
from .voting import (VoteOutcome, VoterConfig, VoterKernelProfile, VoterPlacement,
                     compare, default_voter_profiles, place_voter, voter_cost_ns)
from .workloads import Workload, builtin_workloads, get_workload

__version__ = "0.1.0"

__all__ = [
    "Param", "Runtime", "RuntimeConfig", "TaskDecl",
    "CorruptionSpec", "ExecutionOutcome", "FaultClass", "FaultModel", "Fleet",
    "MemorySpace", "ProcessingUnit", "SpeedProfile", "TransferCostModel", "ValueType",
    "load_fleet", "simulate_execution",
    "BindingError", "ConfigError", "DataLossError", "DeclarationError", "DispatchError",
    "HetRtError", "ProfileLoadError", "RegistrationError", "StrategyInfeasibleError",
    "TaskFaultError", "UnknownAreaError", "UnknownSiblingError", "UnknownSpaceError",
    "UnrecoverableTaskError", "WorkloadError",
    "Executor", "RunReport",
    "build_fleet", "default_fleet_config", "pathfinder_fleet_config",
    "FaultAwareEstimate", "Mapper", "MapperConfig", "MappingDecision", "Selection",
    "Strategy", "StrategyKind", "TaskRetryState", "fault_aware_estimate",
    "MemoryManager", "Sibling", "SiblingHandle",
    "ProfileDB", "ProfileKey", "ProfileRecord",
    "VoteOutcome", "VoterConfig", "VoterKernelProfile", "VoterPlacement", "compare",
    "default_voter_profiles", "place_voter", "voter_cost_ns",
    "Workload", "builtin_workloads", "get_workload",
]
