"""
errors.py
---------
Exception hierarchy shared by every service.

The CLI turns these into exit codes: shape / config / usage / artifact problems
exit with 1, anything under ``NumericError`` exits with 2.
"""

from __future__ import annotations


class MlcError(Exception):
    """Root of all library errors."""


# ── numeric failures (exit code 2) ─────────────────────────────────────────
class NumericError(MlcError):
    pass


class NotSpd(NumericError):
    pass


class ConvergenceFailure(NumericError):
    pass


class NotDoublyStochastic(NumericError):
    pass


class ZeroMatrix(NumericError):
    pass


class DegenerateAffinity(NumericError):
    pass


# ── shape / length problems ────────────────────────────────────────────────
class ShapeError(MlcError, ValueError):
    pass


class DimensionMismatch(ShapeError):
    pass


class ShapeMismatch(ShapeError):
    pass


class LengthMismatch(ShapeError):
    pass


# ── forward/backward bookkeeping ───────────────────────────────────────────
class TraceError(MlcError):
    pass


class IterationMismatch(TraceError):
    pass


class TraceMismatch(TraceError):
    pass


# ── configuration, CLI usage and artifacts ─────────────────────────────────
class ConfigError(MlcError):
    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UsageError(MlcError):
    pass


class ArtifactError(MlcError):
    pass
