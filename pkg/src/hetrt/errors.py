"""Exception hierarchy for the runtime."""


class HetRtError(Exception):
    """Base class for all runtime errors."""


class ConfigError(HetRtError):
    """Malformed fleet or experiment configuration; message names the field."""


class RegistrationError(HetRtError):
    """Invalid memory-area registration (zero size, unknown value type, ...)."""


class UnknownAreaError(HetRtError):
    """Lookup of an area id that was never registered."""


class UnknownSpaceError(HetRtError):
    """Lookup of a memory space that does not exist in the fleet."""


class UnknownSiblingError(HetRtError):
    """Operation on an (area, space) pair with no sibling."""


class DataLossError(HetRtError):
    """No valid sibling left for an area. Signals a runtime bug: an
    invalidation happened without a surviving checkpoint copy."""


class DispatchError(HetRtError):
    """Kernel dispatched to an incompatible unit, or voter inputs with
    mismatched shape/type. Signals a mapper bug."""


class BindingError(HetRtError):
    """Bad task argument binding (unregistered area, mode mismatch, ...)."""


class DeclarationError(HetRtError):
    """Bad task declaration or kernel attachment."""


class StrategyInfeasibleError(HetRtError):
    """The strategy's diversity constraint cannot be satisfied by the
    available (kernel, unit) candidates."""


class TaskFaultError(HetRtError):
    """A direct fault surfaced to the caller (unprotected Perf runs)."""

    def __init__(self, fault_class: str, message: str = ""):
        super().__init__(message or f"task attempt faulted: {fault_class}")
        self.fault_class = fault_class


class UnrecoverableTaskError(HetRtError):
    """Attempt limit exhausted without a committed result."""


class ProfileLoadError(HetRtError):
    """Malformed profile database file; message names the line."""


class WorkloadError(HetRtError):
    """Unknown built-in workload."""
