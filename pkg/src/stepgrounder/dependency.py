"""Step dependency matrices: construction, thresholding, and violation analysis.

``D[i][j]`` is the probability that step ``j`` must be completed before
step ``i`` can occur.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .core import GroundTruthAnnotation, TaskSpec, frozen_array, read_json, write_json
from .errors import DimensionMismatch, EmptyAnnotation, MalformedRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DependencyMatrix:
    """Soft prerequisite matrix with zero diagonal and entries in [0, 1]."""

    values: np.ndarray
    task_id: str = ""

    def __post_init__(self) -> None:
        arr = frozen_array(self.values)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DimensionMismatch(f"dependency matrix must be square, got {arr.shape}")
        if arr.shape[0] < 1:
            raise DimensionMismatch("dependency matrix needs at least one step")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
            raise MalformedRecord("matrix", "entries must be finite and lie in [0, 1]")
        if np.any(np.diagonal(arr) != 0.0):
            raise MalformedRecord("matrix", "diagonal must be zero (a step is not its own prerequisite)")
        object.__setattr__(self, "values", arr)

    @property
    def num_steps(self) -> int:
        return int(self.values.shape[0])

    @classmethod
    def zeros(cls, num_steps: int, task_id: str = "") -> "DependencyMatrix":
        return cls(np.zeros((num_steps, num_steps)), task_id=task_id)

    def to_dict(self) -> dict[str, Any]:
        return {"task_id": self.task_id, "matrix": [[float(x) for x in row] for row in self.values]}

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "DependencyMatrix":
        if not isinstance(raw, Mapping):
            raise MalformedRecord("record", "dependency record must be a JSON object")
        task_id = raw.get("task_id", "")
        if not isinstance(task_id, str):
            raise MalformedRecord("task_id", "must be a string")
        matrix = raw.get("matrix")
        if not isinstance(matrix, Sequence) or not matrix:
            raise MalformedRecord("matrix", "must be a non-empty array of rows")
        return cls(np.asarray(matrix, dtype=np.float64), task_id=task_id)


def load_dependency(path: str | Path) -> DependencyMatrix:
    return DependencyMatrix.from_dict(read_json(path))


def save_dependency(path: str | Path, dep: DependencyMatrix) -> None:
    write_json(path, dep.to_dict())


class PrerequisiteScorer(Protocol):
    """Anything that can score "must step j precede step i" as a probability."""

    def prerequisite_probability(self, task: TaskSpec, step_index: int, prerequisite_index: int) -> float:
        ...


def build_dependency_remote(
    task: TaskSpec,
    scorer: PrerequisiteScorer,
    *,
    max_workers: int = 4,
    cache_path: str | Path | None = None,
) -> DependencyMatrix:
    """Query ``scorer`` for every ordered step pair and assemble the matrix.

    Queries run concurrently up to ``max_workers``; assembly is indexed by
    pair so the result does not depend on completion order. Nothing is
    persisted unless every pair succeeds.
    """
    size = task.num_steps
    pairs = [(i, j) for i in range(size) for j in range(size) if i != j]
    matrix = np.zeros((size, size))

    def query(pair: tuple[int, int]) -> float:
        i, j = pair
        return float(scorer.prerequisite_probability(task, i, j))

    if max_workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            probabilities = list(pool.map(query, pairs))
    else:
        probabilities = [query(pair) for pair in pairs]

    for (i, j), prob in zip(pairs, probabilities):
        matrix[i, j] = min(max(prob, 0.0), 1.0)

    dep = DependencyMatrix(matrix, task_id=task.task_id)
    if cache_path is not None:
        save_dependency(cache_path, dep)
    return dep


def build_dependency_chain_oracle(annotation: GroundTruthAnnotation, num_steps: int) -> DependencyMatrix:
    """Derive a chain dependency from a video's observed step order.

    Steps are ordered by the start of their first occurrence; each step in
    the chain becomes the sole prerequisite of the next. Steps absent from
    the annotation keep all-zero rows and columns.
    """
    if not annotation.intervals:
        raise EmptyAnnotation(f"video {annotation.video_id!r} has no annotated intervals")
    present = annotation.steps_present
    if present and present[-1] >= num_steps:
        raise DimensionMismatch(
            f"annotation references step {present[-1]} but the task has {num_steps} steps"
        )
    order = sorted(present, key=annotation.first_start)
    matrix = np.zeros((num_steps, num_steps))
    for earlier, later in zip(order, order[1:]):
        matrix[later, earlier] = 1.0
    return DependencyMatrix(matrix, task_id=annotation.task_id)


def threshold_matrix(dep: DependencyMatrix | np.ndarray, theta: float) -> np.ndarray:
    """Binarize a soft dependency matrix at ``theta``.

    An entry turns on when it is ``>= theta``, except at ``theta == 0``
    where the rule is strictly ``> 0`` so exact zeros never turn on.
    """
    if not (0.0 <= theta <= 1.0):
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    values = dep.values if isinstance(dep, DependencyMatrix) else np.asarray(dep, dtype=np.float64)
    if theta == 0.0:
        binary = values > 0.0
    else:
        binary = values >= theta
    out = binary.astype(np.int64)
    np.fill_diagonal(out, 0)
    return out


@dataclass(frozen=True)
class TaskViolationDetail:
    task_id: str
    declared: int
    violated: int
    num_videos: int

    @property
    def violated_fraction(self) -> float:
        return self.violated / self.declared if self.declared else 0.0


@dataclass(frozen=True)
class ViolationStats:
    """How often declared dependencies contradict observed step order."""

    threshold: float
    violated_dependency_fraction: float
    tasks_with_violation_fraction: float
    per_task: tuple[TaskViolationDetail, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "threshold": self.threshold,
            "violated_dependency_fraction": self.violated_dependency_fraction,
            "tasks_with_violation_fraction": self.tasks_with_violation_fraction,
            "per_task": [
                {
                    "task_id": d.task_id,
                    "declared": d.declared,
                    "violated": d.violated,
                    "num_videos": d.num_videos,
                }
                for d in self.per_task
            ],
        }


def _violations_for_task(
    task_id: str, binary: np.ndarray, annotations: Sequence[GroundTruthAnnotation]
) -> TaskViolationDetail:
    size = binary.shape[0]
    for ann in annotations:
        for step in ann.steps_present:
            if step >= size:
                raise DimensionMismatch(
                    f"video {ann.video_id!r} references step {step} but the matrix covers {size} steps"
                )
    declared = [(i, j) for i in range(size) for j in range(size) if binary[i, j]]
    violated = 0
    for i, j in declared:
        # (i requires j) is violated when some video shows i starting
        # before j's first occurrence, with both steps present.
        for ann in annotations:
            present = set(ann.steps_present)
            if i in present and j in present and ann.first_start(i) < ann.first_start(j):
                violated += 1
                break
    return TaskViolationDetail(
        task_id=task_id, declared=len(declared), violated=violated, num_videos=len(annotations)
    )


def analyze_violations(
    dependencies: np.ndarray | DependencyMatrix | Mapping[str, np.ndarray],
    annotations: Iterable[GroundTruthAnnotation],
    threshold: float = float("nan"),
) -> ViolationStats:
    """Check binarized dependencies against observed first-occurrence order.

    ``dependencies`` is either a single binary matrix (all annotations must
    then belong to one task) or a mapping ``task_id -> binary matrix``;
    annotations are grouped by their ``task_id`` field.
    """
    grouped: dict[str, list[GroundTruthAnnotation]] = {}
    for ann in annotations:
        grouped.setdefault(ann.task_id, []).append(ann)

    if isinstance(dependencies, (np.ndarray, DependencyMatrix)):
        if len(grouped) > 1:
            raise DimensionMismatch(
                f"a single matrix was given but annotations span {len(grouped)} tasks"
            )
        values = dependencies.values if isinstance(dependencies, DependencyMatrix) else dependencies
        task_id = next(iter(grouped)) if grouped else ""
        matrices = {task_id: np.asarray(values)}
    else:
        matrices = {task_id: np.asarray(matrix) for task_id, matrix in dependencies.items()}

    details = []
    for task_id in sorted(matrices):
        details.append(_violations_for_task(task_id, matrices[task_id], grouped.get(task_id, [])))

    total_declared = sum(d.declared for d in details)
    total_violated = sum(d.violated for d in details)
    tasks_with_violation = sum(1 for d in details if d.violated > 0)
    return ViolationStats(
        threshold=float(threshold),
        violated_dependency_fraction=(total_violated / total_declared if total_declared else 0.0),
        tasks_with_violation_fraction=(tasks_with_violation / len(details) if details else 0.0),
        per_task=tuple(details),
    )
