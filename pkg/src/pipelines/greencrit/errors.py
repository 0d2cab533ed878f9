from __future__ import annotations

from typing import Any, Optional


class GreenCritError(Exception):
    exit_code = 5


class PreconditionError(GreenCritError, ValueError):
    pass


class OutOfRangeError(PreconditionError):
    pass


class ConfigError(PreconditionError):
    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None) -> None:
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


class DivergenceError(GreenCritError):
    pass


class NumericalFailureError(GreenCritError):
    exit_code = 6

    def __init__(self, message: str, partial_estimate: Optional[float] = None) -> None:
        super().__init__(message)
        self.partial_estimate = partial_estimate


class BracketError(GreenCritError):
    exit_code = 3


class ConstructionRefusedError(GreenCritError):
    exit_code = 1


class PicardDivergenceError(GreenCritError):
    exit_code = 4

    def __init__(self, message: str, trace: Any = None) -> None:
        super().__init__(message)
        self.trace = trace


class NonConvergenceError(GreenCritError):
    exit_code = 6

    def __init__(self, message: str, trace: Any = None) -> None:
        super().__init__(message)
        self.trace = trace
