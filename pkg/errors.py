"""Exception hierarchy shared by the lab modules.

Library code raises these; only ``lab.py`` catches them and maps each one to a
process exit code.
"""

from typing import Any

EXIT_OK = 0
EXIT_EMPTY = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_ACCEPTANCE = 4


class LabError(Exception):
    exit_code = EXIT_NUMERICAL


class ConfigError(LabError):
    exit_code = EXIT_CONFIG


class PreconditionError(LabError):
    """An operation was called outside its domain (odd width, non-unit input, ...)."""

    exit_code = EXIT_CONFIG


class ShapeError(LabError):
    exit_code = EXIT_CONFIG


class NumericalError(LabError):
    exit_code = EXIT_NUMERICAL


class ConvergenceError(NumericalError):
    def __init__(self, message: str, best_estimate: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.best_estimate = best_estimate
        self.iterations = iterations


class DivergenceError(NumericalError):
    def __init__(self, message: str, partial: Any = None):
        super().__init__(message)
        self.partial = partial


class AcceptanceError(LabError):
    exit_code = EXIT_ACCEPTANCE
