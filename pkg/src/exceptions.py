"""
Simulation Errors
Exception hierarchy shared by every service and mapped to CLI exit codes
"""

from typing import Optional


class SimulationError(ValueError):
    """Base class for all toolkit errors"""


class InvalidInputError(SimulationError):
    """Malformed arguments: non-finite coordinates, empty clouds, size mismatches"""


class DomainError(SimulationError):
    """A query falls outside the region where it is defined"""

    def __init__(self, message: str, blow_up_time: Optional[float] = None):
        super().__init__(message)
        self.blow_up_time = blow_up_time


class PreconditionError(SimulationError):
    """An operation was called on state that violates its precondition"""


class ConfigurationError(SimulationError):
    """Invalid run or experiment configuration (CLI exit code 2)"""


class TimeCoverageError(SimulationError):
    """A density provider was queried outside its solved time range"""


class StateError(SimulationError):
    """Coupled state is inconsistent, e.g. clouds at different times"""


class AcceptanceError(SimulationError):
    """An experiment finished but failed its acceptance check (CLI exit code 3)"""

    def __init__(self, message: str, failures: Optional[list] = None):
        super().__init__(message)
        self.failures = failures or []
