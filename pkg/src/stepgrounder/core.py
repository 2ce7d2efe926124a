"""Domain types, validation, and the canonical JSON file formats."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateStepIndex,
    EmptySteps,
    MalformedRecord,
    NonPositiveDuration,
    SimplexViolation,
)

#: Absolute tolerance when accepting an externally supplied probability vector.
SIMPLEX_ATOL = 1e-6


def frozen_array(values: Any, dtype: Any = np.float64) -> np.ndarray:
    """Copy ``values`` into a read-only array."""
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def renormalize(values: Any) -> np.ndarray:
    """Scale a nonnegative vector so it sums to one.

    This is the single place where probability vectors are normalized.
    Type constructors reject out-of-tolerance vectors instead of fixing
    them up silently.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise SimplexViolation(f"expected a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise SimplexViolation("vector contains non-finite entries")
    if np.any(arr < 0.0):
        raise SimplexViolation("vector contains negative entries")
    total = float(arr.sum())
    if total <= 0.0:
        raise SimplexViolation("vector has no mass to normalize")
    return arr / total


def check_simplex(arr: np.ndarray, what: str, atol: float = SIMPLEX_ATOL) -> None:
    """Raise :class:`SimplexViolation` unless ``arr`` is a probability simplex."""
    if arr.ndim != 1:
        raise SimplexViolation(f"{what} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise SimplexViolation(f"{what} contains non-finite entries")
    if np.any(arr < 0.0) or np.any(arr > 1.0 + atol):
        raise SimplexViolation(f"{what} entries must lie in [0, 1]")
    deviation = abs(float(arr.sum()) - 1.0)
    if deviation > atol:
        raise SimplexViolation(
            f"{what} sums to {float(arr.sum()):.12f} (deviation {deviation:.3e} exceeds {atol:.0e})"
        )


@dataclass(frozen=True)
class TaskSpec:
    """A procedural task: a goal plus an ordered list of step descriptions."""

    task_id: str
    goal: str
    steps: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise EmptySteps("steps", "a task needs at least one step")
        for i, step in enumerate(self.steps):
            if not isinstance(step, str) or not step:
                raise MalformedRecord(f"steps[{i}]", "step description must be a non-empty string")

    @property
    def num_steps(self) -> int:
        return len(self.steps)

    def to_dict(self) -> dict[str, Any]:
        return {"task_id": self.task_id, "goal": self.goal, "steps": list(self.steps)}

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "TaskSpec":
        return validate_task(raw)


def validate_task(raw: Mapping[str, Any]) -> TaskSpec:
    """Validate a parsed task record and construct a :class:`TaskSpec`.

    Step entries are plain strings, or ``{"index": int, "text": str}``
    objects whose indices must densely cover ``0..S-1``.
    """
    if not isinstance(raw, Mapping):
        raise MalformedRecord("record", "task record must be a JSON object")
    task_id = raw.get("task_id", "")
    if not isinstance(task_id, str):
        raise MalformedRecord("task_id", "must be a string")
    goal = raw.get("goal")
    if not isinstance(goal, str):
        raise MalformedRecord("goal", "must be a string")
    steps_raw = raw.get("steps")
    if not isinstance(steps_raw, Sequence) or isinstance(steps_raw, (str, bytes)):
        raise MalformedRecord("steps", "must be an array")
    if len(steps_raw) == 0:
        raise EmptySteps("steps", "a task needs at least one step")

    if all(isinstance(entry, Mapping) for entry in steps_raw):
        slots: dict[int, str] = {}
        for pos, entry in enumerate(steps_raw):
            index = entry.get("index")
            text = entry.get("text")
            if isinstance(index, bool) or not isinstance(index, int):
                raise MalformedRecord(f"steps[{pos}].index", "must be an integer")
            if index in slots:
                raise DuplicateStepIndex(f"steps[{pos}].index", f"index {index} appears more than once")
            if not isinstance(text, str) or not text:
                raise MalformedRecord(f"steps[{pos}].text", "must be a non-empty string")
            slots[index] = text
        if set(slots) != set(range(len(steps_raw))):
            raise MalformedRecord("steps", "step indices must densely cover 0..S-1")
        steps = tuple(slots[i] for i in range(len(steps_raw)))
    else:
        collected: list[str] = []
        for pos, entry in enumerate(steps_raw):
            if not isinstance(entry, str) or not entry:
                raise MalformedRecord(f"steps[{pos}]", "step description must be a non-empty string")
            collected.append(entry)
        steps = tuple(collected)
    return TaskSpec(task_id=task_id, goal=goal, steps=steps)


@dataclass(frozen=True)
class SegmentTimeline:
    """A video split into fixed-duration, non-overlapping segments.

    Segment ``t`` spans ``[t * d, (t + 1) * d)`` seconds where ``d`` is the
    segment duration; indices are 0-based.
    """

    video_id: str
    segment_duration_s: float
    num_segments: int

    def __post_init__(self) -> None:
        if self.segment_duration_s <= 0.0:
            raise NonPositiveDuration(f"segment_duration_s must be > 0, got {self.segment_duration_s}")
        if self.num_segments < 1:
            raise NonPositiveDuration(f"num_segments must be >= 1, got {self.num_segments}")

    def start_s(self, t: int) -> float:
        return t * self.segment_duration_s

    def midpoint_s(self, t: int) -> float:
        return (t + 0.5) * self.segment_duration_s

    def to_dict(self) -> dict[str, Any]:
        return {
            "video_id": self.video_id,
            "segment_duration_s": self.segment_duration_s,
            "num_segments": self.num_segments,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "SegmentTimeline":
        return cls(
            video_id=str(raw["video_id"]),
            segment_duration_s=float(raw["segment_duration_s"]),
            num_segments=int(raw["num_segments"]),
        )


def timeline_from_duration(
    video_length_s: float,
    segment_duration_s: float,
    *,
    video_id: str = "",
    rounding: str = "ceil",
) -> SegmentTimeline:
    """Build a timeline covering ``video_length_s`` seconds.

    ``rounding`` selects how a trailing partial segment is counted:
    ``"ceil"`` (default) keeps it as one extra index so no suffix of the
    video is dropped, ``"floor"`` drops it (but never below one segment).
    """
    if video_length_s <= 0.0:
        raise NonPositiveDuration(f"video_length_s must be > 0, got {video_length_s}")
    if segment_duration_s <= 0.0:
        raise NonPositiveDuration(f"segment_duration_s must be > 0, got {segment_duration_s}")
    ratio = video_length_s / segment_duration_s
    if rounding == "ceil":
        count = math.ceil(ratio)
    elif rounding == "floor":
        count = max(1, math.floor(ratio))
    else:
        raise ValueError(f"rounding must be 'ceil' or 'floor', got {rounding!r}")
    return SegmentTimeline(
        video_id=video_id,
        segment_duration_s=float(segment_duration_s),
        num_segments=int(count),
    )


@dataclass(frozen=True)
class ObservationScores:
    """Per-segment class scores: one entry per step plus a trailing "none" entry."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = frozen_array(self.values)
        check_simplex(arr, "observation scores")
        if arr.shape[0] < 2:
            raise DimensionMismatch("observation scores need at least one step plus the none entry")
        object.__setattr__(self, "values", arr)

    @property
    def num_steps(self) -> int:
        return int(self.values.shape[0]) - 1

    def to_list(self) -> list[float]:
        return [float(x) for x in self.values]


@dataclass(frozen=True)
class ProgressDistribution:
    """Distribution over the ten progress tokens 0..9 for one (segment, step) pair."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = frozen_array(self.values)
        check_simplex(arr, "progress distribution")
        if arr.shape[0] != 10:
            raise DimensionMismatch(f"progress distribution must have 10 entries, got {arr.shape[0]}")
        object.__setattr__(self, "values", arr)

    def to_list(self) -> list[float]:
        return [float(x) for x in self.values]


@dataclass(frozen=True)
class Belief:
    """Posterior over steps plus the trailing "none" state."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = frozen_array(self.values)
        check_simplex(arr, "belief")
        if arr.shape[0] < 2:
            raise DimensionMismatch("belief needs at least one step plus the none entry")
        object.__setattr__(self, "values", arr)

    @classmethod
    def uniform(cls, num_steps: int) -> "Belief":
        if num_steps < 1:
            raise DimensionMismatch("num_steps must be >= 1")
        return cls(np.full(num_steps + 1, 1.0 / (num_steps + 1)))

    @property
    def num_steps(self) -> int:
        return int(self.values.shape[0]) - 1

    def to_list(self) -> list[float]:
        return [float(x) for x in self.values]


@dataclass(frozen=True)
class StepInterval:
    """One annotated occurrence of a step."""

    step: int
    start_s: float
    end_s: float

    def __post_init__(self) -> None:
        if self.step < 0:
            raise MalformedRecord("step", "step index must be >= 0")
        if not (0.0 <= self.start_s < self.end_s):
            raise MalformedRecord("start_s/end_s", f"need 0 <= start < end, got [{self.start_s}, {self.end_s}]")

    def to_dict(self) -> dict[str, Any]:
        return {"step": self.step, "start_s": self.start_s, "end_s": self.end_s}


@dataclass(frozen=True)
class GroundTruthAnnotation:
    """Ground-truth step intervals for one video. A step may recur."""

    video_id: str
    task_id: str
    length_s: float | None
    intervals: tuple[StepInterval, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "intervals", tuple(self.intervals))

    @property
    def steps_present(self) -> tuple[int, ...]:
        return tuple(sorted({iv.step for iv in self.intervals}))

    def intervals_for(self, step: int) -> tuple[StepInterval, ...]:
        return tuple(iv for iv in self.intervals if iv.step == step)

    def first_start(self, step: int) -> float:
        spans = self.intervals_for(step)
        if not spans:
            raise KeyError(f"step {step} not annotated in video {self.video_id!r}")
        return min(iv.start_s for iv in spans)

    def to_dict(self) -> dict[str, Any]:
        record: dict[str, Any] = {
            "video_id": self.video_id,
            "task_id": self.task_id,
            "segments": [iv.to_dict() for iv in self.intervals],
        }
        if self.length_s is not None:
            record["length_s"] = self.length_s
        return record

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "GroundTruthAnnotation":
        return validate_annotation(raw)


def validate_annotation(raw: Mapping[str, Any], num_steps: int | None = None) -> GroundTruthAnnotation:
    """Validate a parsed annotation record.

    When ``num_steps`` is given, every interval's step index must be below it.
    """
    if not isinstance(raw, Mapping):
        raise MalformedRecord("record", "annotation record must be a JSON object")
    video_id = raw.get("video_id")
    if not isinstance(video_id, str) or not video_id:
        raise MalformedRecord("video_id", "must be a non-empty string")
    task_id = raw.get("task_id", "")
    if not isinstance(task_id, str):
        raise MalformedRecord("task_id", "must be a string")
    length_s = raw.get("length_s")
    if length_s is not None:
        length_s = float(length_s)
        if length_s <= 0.0:
            raise MalformedRecord("length_s", "must be > 0 when present")
    segments = raw.get("segments")
    if not isinstance(segments, Sequence):
        raise MalformedRecord("segments", "must be an array")
    intervals: list[StepInterval] = []
    for pos, entry in enumerate(segments):
        if not isinstance(entry, Mapping):
            raise MalformedRecord(f"segments[{pos}]", "must be an object")
        try:
            step = int(entry["step"])
            start_s = float(entry["start_s"])
            end_s = float(entry["end_s"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRecord(f"segments[{pos}]", str(exc)) from exc
        if num_steps is not None and step >= num_steps:
            raise DimensionMismatch(
                f"segments[{pos}].step = {step} exceeds the task's {num_steps} steps"
            )
        intervals.append(StepInterval(step=step, start_s=start_s, end_s=end_s))
    return GroundTruthAnnotation(
        video_id=video_id, task_id=task_id, length_s=length_s, intervals=tuple(intervals)
    )


@dataclass(frozen=True)
class AlignmentMatrix:
    """Per-video beliefs stacked by segment: shape (num_segments, S + 1)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = frozen_array(self.values)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 2:
            raise DimensionMismatch(f"alignment matrix must be (T, S+1) with T >= 1, got {arr.shape}")
        for t in range(arr.shape[0]):
            check_simplex(arr[t], f"alignment row {t}")
        object.__setattr__(self, "values", arr)

    @property
    def num_segments(self) -> int:
        return int(self.values.shape[0])

    @property
    def num_steps(self) -> int:
        return int(self.values.shape[1]) - 1

    def step_column(self, step: int) -> np.ndarray:
        if not (0 <= step < self.num_steps):
            raise DimensionMismatch(f"step {step} out of range for {self.num_steps} steps")
        return self.values[:, step]


def read_json(path: str | Path) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_json(path: str | Path, payload: Any) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_task(path: str | Path) -> TaskSpec:
    return validate_task(read_json(path))


def save_task(path: str | Path, task: TaskSpec) -> None:
    write_json(path, task.to_dict())


def load_annotation(path: str | Path, num_steps: int | None = None) -> GroundTruthAnnotation:
    return validate_annotation(read_json(path), num_steps=num_steps)


def save_annotation(path: str | Path, annotation: GroundTruthAnnotation) -> None:
    write_json(path, annotation.to_dict())
