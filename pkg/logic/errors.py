from __future__ import annotations

from typing import Any


class QFPMEError(Exception):
    """Base class for every error raised by the solver library."""

    def __init__(self, message: str, **details: Any) -> None:
        super().__init__(message)
        self.message = message
        self.details = details

    def to_report(self) -> dict:
        """Machine-readable form written to stderr by the CLI."""
        return {
            "error": type(self).__name__,
            "message": self.message,
            "details": {k: _jsonable(v) for k, v in self.details.items()},
        }


class ConfigError(QFPMEError, ValueError):
    """Invalid parameters, unknown keys, dimension mismatches."""


class NumericalError(QFPMEError, ArithmeticError):
    """A computation could not produce a trustworthy result."""


class SingularSystemError(NumericalError):
    pass


class ResonanceError(NumericalError):
    pass


class DefectiveSpectrumError(NumericalError):
    pass


class DegenerateKernelError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass


class TruncationError(NumericalError):
    pass


class StiffnessError(NumericalError):
    pass


class NormCollapseError(NumericalError):
    pass


class UndefinedConditionalError(NumericalError):
    pass


def _jsonable(value: Any) -> Any:
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "tolist"):
        return _jsonable(value.tolist())
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return value
