"""Exception hierarchy for analogverify.

Every module raises its own subclass of :class:`AnalogVerifyError` so callers
(and the command-line entry point) can react per failure domain.
"""

from typing import Optional


class AnalogVerifyError(Exception):
    """Base class for all analogverify errors."""

    pass


class QuantumCoreError(AnalogVerifyError):
    """Custom exception for operator and state construction errors."""

    pass


class DynamicsError(AnalogVerifyError):
    """Custom exception for time-evolution errors."""

    pass


class NoiseError(AnalogVerifyError):
    """Custom exception for noise specification and application errors."""

    pass


class CompilerError(AnalogVerifyError):
    """Custom exception for inverse-compiler errors."""

    pass


class NoConvergence(CompilerError):
    """Raised when every compiler worker exhausts its step budget.

    Attributes:
        best_population: Largest basis-state population any worker reached
        steps_used: Total proposals evaluated across all workers
    """

    def __init__(self, message: str, best_population: float, steps_used: Optional[int] = None):
        super().__init__(message)
        self.best_population = best_population
        self.steps_used = steps_used


class ProtocolError(AnalogVerifyError):
    """Custom exception for verification protocol errors."""

    pass


class ModelError(AnalogVerifyError):
    """Custom exception for model presets and lattice subsystems."""

    pass


class ConfigError(AnalogVerifyError):
    """Custom exception for configuration loading and validation errors."""

    pass


class ArchiveError(AnalogVerifyError):
    """Custom exception for result persistence errors."""

    pass
