"""Exception hierarchy.

Errors fall in two families that the CLI maps to exit codes: data errors
(bad or degenerate inputs, exit 2) and numerical failures (exit 3).
"""

from __future__ import annotations


class DispliftError(Exception):
    """Base class for all library errors."""

    exit_code = 2

    def to_json(self) -> dict:
        return {"error": type(self).__name__, "message": str(self), "exit_code": self.exit_code}


class DataError(DispliftError, ValueError):
    exit_code = 2


class NumericalError(DispliftError, ArithmeticError):
    exit_code = 3


class DegenerateRange(DataError):
    pass


class InvalidFov(DataError):
    pass


class EmptyMask(DataError):
    pass


class EmptyCloud(DataError):
    pass


class InvalidThreshold(DataError):
    pass


class NonPositiveDepth(DataError):
    def __init__(self, message: str, count: int = 0):
        super().__init__(message)
        self.count = count

    def to_json(self) -> dict:
        out = super().to_json()
        out["count"] = self.count
        return out


class PointBehindCamera(DataError):
    pass


class DegenerateVisible(DataError):
    pass


class InfeasibleScene(DataError):
    pass


class InvalidSceneSpec(DataError):
    pass


class MalformedFile(DataError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset

    def to_json(self) -> dict:
        out = super().to_json()
        out["offset"] = self.offset
        return out


class DimensionMismatch(DataError):
    pass


class AllRestartsInfeasible(NumericalError):
    pass


class NonFiniteGradient(NumericalError):
    pass


class UnsupportedPropertyWarning(UserWarning):
    """Emitted when a file carries properties this library ignores."""
