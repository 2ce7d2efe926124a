"""Exception types shared across the package."""

from __future__ import annotations

from typing import Any


class StepGroundingError(Exception):
    """Base class for all errors raised by this package."""


class MalformedRecord(StepGroundingError):
    """A parsed record violates the canonical schema.

    Carries the name of the offending field so callers can point at the
    exact location in the source file.
    """

    def __init__(self, field: str, detail: str = ""):
        self.field = field
        message = f"malformed field {field!r}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class EmptySteps(MalformedRecord):
    """A task record declares no steps."""


class DuplicateStepIndex(MalformedRecord):
    """Two step entries claim the same index."""


class NonPositiveDuration(StepGroundingError):
    """A duration that must be strictly positive is not."""


class SimplexViolation(StepGroundingError):
    """A probability vector is not a valid simplex."""


class DimensionMismatch(StepGroundingError):
    """Array shapes disagree with the task's step count or with each other."""


class OutOfRangeProgress(StepGroundingError):
    """A progress value falls outside [0, 1]."""


class EmptyAnnotation(StepGroundingError):
    """An operation requires at least one annotated interval."""


class EmptyGroundTruth(StepGroundingError):
    """Metric evaluation requires non-empty ground truth."""


class ProviderUnavailable(StepGroundingError):
    """The remote provider could not be reached; safe to retry."""


class MalformedProviderResponse(StepGroundingError):
    """The remote provider answered with an unusable payload.

    The raw payload is preserved for debugging.
    """

    def __init__(self, message: str, payload: Any = None):
        self.payload = payload
        super().__init__(message)


class LogitsUnavailable(StepGroundingError):
    """The endpoint cannot return first-token log-probabilities."""


class LabelTokenCollision(StepGroundingError):
    """Two option labels resolve to the same first token."""

    def __init__(self, labels: tuple[str, ...]):
        self.labels = labels
        super().__init__(f"option labels share a first token: {', '.join(labels)}")


class MissingObservation(StepGroundingError):
    """A replay file does not cover the requested segment."""


class CorruptReplayFile(StepGroundingError):
    """A replay file cannot be parsed or has inconsistent shapes."""


class ConfigurationError(StepGroundingError):
    """A run configuration is invalid; nothing was processed."""
