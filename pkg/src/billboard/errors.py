"""Exception taxonomy shared across the engine.

CLI exit codes and HTTP statuses are derived from these classes:
ValidationError -> exit 1 / HTTP 422, DuplicateSubmissionError -> HTTP 409,
anything else -> exit 2 / HTTP 500.
"""

from __future__ import annotations


class BillboardError(Exception):
    """Base class for all engine errors."""


class ValidationError(BillboardError):
    """A submission or input file violates an invariant."""


class DuplicateSubmissionError(ValidationError):
    """A generator or metric id is already present on the board."""


class BoardStateError(BillboardError):
    """The board directory is missing, uninitialized, or corrupt."""


class ScoringError(BillboardError):
    """A metric failed to produce scores (crash, timeout, bad output)."""

    def __init__(self, message: str, stderr: str | None = None):
        super().__init__(message)
        self.stderr = stderr


class ProtocolError(ScoringError):
    """An external metric violated the line protocol."""


class DegenerateMetricError(BillboardError):
    """A metric produced zero-variance scores where variance is required."""


class ConvergenceError(BillboardError):
    """An iterative fit exhausted its iteration budget."""


class AnalysisError(BillboardError):
    """An analysis precondition is unmet (too few generators, metrics, ...)."""


class SignatureCollisionError(BillboardError):
    """Two different ensemble models map to the same signature string."""
