"""Refusals raised by the recurrence engine.

Every refusal carries a machine-readable ``reason`` which the command line
front door turns into an exit code.
"""
from typing import Any, Dict


class RecurrenceError(Exception):
    """Base class for explicit refusals."""

    reason = "refusal"

    def __init__(self, message: str, **details: Any) -> None:
        super().__init__(message)
        self.details = details

    def as_payload(self) -> Dict[str, Any]:
        return {**self.details, "error": self.reason, "detail": str(self)}


class ConfigError(RecurrenceError):
    reason = "config-error"


class BudgetExceededError(RecurrenceError):
    """Accumulated arithmetic error would blur an entourage query."""

    reason = "budget-refusal"


class NotMinimalError(RecurrenceError):
    reason = "not-minimal"


class NotPrimitiveError(RecurrenceError):
    reason = "not-primitive"


class CoveringSearchError(RecurrenceError):
    reason = "covering-refusal"


class DegenerateWindowError(RecurrenceError, ValueError):
    reason = "degenerate-window"


class RegionError(RecurrenceError):
    reason = "region-refusal"


class IncomparablePointsError(RecurrenceError, TypeError):
    reason = "incomparable-points"


class BoundViolationError(RecurrenceError):
    """A certified inequality failed; this indicates an implementation bug."""

    reason = "bound-violation"
