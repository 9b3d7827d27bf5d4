"""Exception hierarchy shared by all fibermercer modules."""
from __future__ import annotations


class FiberMercerError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(FiberMercerError, ValueError):
    pass


class GridMismatch(FiberMercerError, ValueError):
    pass


class UnsupportedOperation(FiberMercerError, TypeError):
    pass


class KernelValidationError(FiberMercerError):
    """Raised when a kernel that failed validation is handed to a spectral routine."""


class NumericalFailure(FiberMercerError, ArithmeticError):
    def __init__(self, message: str, fiber: int | None = None):
        super().__init__(message)
        self.fiber = fiber


class ParseError(FiberMercerError, ValueError):
    """Malformed input file. ``line`` is 1-based."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
