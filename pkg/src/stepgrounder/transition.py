"""Transition modeling: base matrix from dependencies, per-segment adjustment.

The base matrix is static. Each segment it gets re-weighted by two gates
derived from the running-max progress of every step:

* readiness of step ``i``: the dependency-weighted mean progress of its
  prerequisites, 1.0 when it has none;
* validity of step ``i``: the dependency-weighted mean *incompleteness*
  of its successors, 1.0 when it has none.

The adjusted matrix covers ``S + 1`` states, the extra one being the
"none" (background) state appended at index ``S``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .core import frozen_array
from .dependency import DependencyMatrix
from .errors import DimensionMismatch, OutOfRangeProgress

ROW_SUM_ATOL = 1e-9


def _check_row_stochastic(arr: np.ndarray, what: str) -> None:
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionMismatch(f"{what} must be square, got {arr.shape}")
    if np.any(arr < 0.0) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} entries must be finite and nonnegative")
    deviation = np.abs(arr.sum(axis=1) - 1.0).max()
    if deviation > ROW_SUM_ATOL:
        raise ValueError(f"{what} rows must sum to 1 (max deviation {deviation:.3e})")


@dataclass(frozen=True)
class BaseTransition:
    """Row-stochastic step-to-step transition matrix (no "none" state)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = frozen_array(self.values)
        _check_row_stochastic(arr, "base transition")
        object.__setattr__(self, "values", arr)

    @property
    def num_steps(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class AdjustedTransition:
    """Row-stochastic (S+1) x (S+1) matrix including the "none" state."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = frozen_array(self.values)
        _check_row_stochastic(arr, "adjusted transition")
        object.__setattr__(self, "values", arr)

    @property
    def num_states(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class ProgressTracker:
    """Running maximum progress per step, over strictly past segments."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = frozen_array(self.values)
        if arr.ndim != 1:
            raise DimensionMismatch(f"progress tracker must be 1-D, got shape {arr.shape}")
        if np.any(arr < 0.0) or np.any(arr > 1.0) or not np.all(np.isfinite(arr)):
            raise OutOfRangeProgress("tracked progress must lie in [0, 1]")
        object.__setattr__(self, "values", arr)

    @classmethod
    def zeros(cls, num_steps: int) -> "ProgressTracker":
        return cls(np.zeros(num_steps))

    @property
    def num_steps(self) -> int:
        return int(self.values.shape[0])

    def observe(self, per_step_progress: Any) -> "ProgressTracker":
        return observe_progress(self, per_step_progress)


def observe_progress(tracker: ProgressTracker, per_step_progress: Any) -> ProgressTracker:
    """Fold one segment's progress estimates into the running maximum.

    Must be called only after the segment's predict/update has run, so a
    segment's own progress never feeds its own transition adjustment.
    """
    incoming = np.asarray(per_step_progress, dtype=np.float64)
    if incoming.shape != tracker.values.shape:
        raise DimensionMismatch(
            f"progress vector shape {incoming.shape} does not match tracker {tracker.values.shape}"
        )
    if np.any(incoming < 0.0) or np.any(incoming > 1.0) or not np.all(np.isfinite(incoming)):
        raise OutOfRangeProgress("per-step progress must lie in [0, 1]")
    return ProgressTracker(np.maximum(tracker.values, incoming))


def init_transition(dep: DependencyMatrix, *, no_prereq_rule: str = "column") -> BaseTransition:
    """Initialize the base transition matrix from a dependency matrix.

    The matrix starts as the transpose of the dependencies, then
    self-transitions are forced on, prerequisite-free steps are opened up,
    and rows are normalized. Two variants exist for the prerequisite-free
    fix-up: ``"column"`` (default) opens transitions from every step into
    each prerequisite-free step; ``"row"`` instead fills any all-zero
    outgoing row before self-transitions are inserted.
    """
    dmat = dep.values
    if no_prereq_rule == "column":
        t = dmat.T.copy()
        np.fill_diagonal(t, 1.0)
        prereq_free = dmat.sum(axis=1) == 0.0
        t[:, prereq_free] = 1.0
    elif no_prereq_rule == "row":
        t = dmat.T.copy()
        t[t.sum(axis=1) == 0.0, :] = 1.0
        np.fill_diagonal(t, 1.0)
    else:
        raise ValueError(f"no_prereq_rule must be 'column' or 'row', got {no_prereq_rule!r}")
    # Self-transitions guarantee every row has mass before normalization.
    return BaseTransition(t / t.sum(axis=1, keepdims=True))


def readiness(dep: DependencyMatrix, tracker: ProgressTracker) -> np.ndarray:
    """Dependency-weighted mean progress of each step's prerequisites.

    ``r[i] = sum_j D[i][j] * maxprog[j] / sum_j D[i][j]``, and 1.0 for
    steps without prerequisites (absence of constraints should not
    suppress a step).
    """
    _check_dep_tracker(dep, tracker)
    weights = dep.values.sum(axis=1)
    weighted = dep.values @ tracker.values
    out = np.ones_like(weights)
    has = weights > 0.0
    out[has] = weighted[has] / weights[has]
    return out


def validity(dep: DependencyMatrix, tracker: ProgressTracker) -> np.ndarray:
    """Dependency-weighted mean incompleteness of each step's successors.

    ``v[i] = sum_j D[j][i] * (1 - maxprog[j]) / sum_j D[j][i]``, and 1.0
    for steps without successors.
    """
    _check_dep_tracker(dep, tracker)
    incoming = dep.values.T
    weights = incoming.sum(axis=1)
    weighted = incoming @ (1.0 - tracker.values)
    out = np.ones_like(weights)
    has = weights > 0.0
    out[has] = weighted[has] / weights[has]
    return out


def _check_dep_tracker(dep: DependencyMatrix, tracker: ProgressTracker) -> None:
    if tracker.num_steps != dep.num_steps:
        raise DimensionMismatch(
            f"tracker covers {tracker.num_steps} steps, dependency matrix {dep.num_steps}"
        )


def adjust(
    base: BaseTransition,
    step_readiness: np.ndarray,
    step_validity: np.ndarray,
    *,
    eps: float = 1e-8,
    eps_none: float | None = None,
) -> AdjustedTransition:
    """Gate the base matrix by readiness and validity and append "none".

    Step-block weights are ``T[i][j] * r[j] * v[j] + eps``; the ``eps``
    floor keeps rows alive when every step is gated off (as happens at the
    start of a video, before any progress accrues). Each step row also gets
    a fixed escape weight ``eps_none`` toward the "none" state (default
    ``1 / (S + 1)``), and the "none" row spreads uniformly over all states.
    Rows of the result sum to one.
    """
    num_steps = base.num_steps
    r = np.asarray(step_readiness, dtype=np.float64)
    v = np.asarray(step_validity, dtype=np.float64)
    if r.shape != (num_steps,) or v.shape != (num_steps,):
        raise DimensionMismatch(
            f"readiness/validity must have shape ({num_steps},), got {r.shape} and {v.shape}"
        )
    if eps_none is None:
        eps_none = 1.0 / (num_steps + 1)
    weights = np.empty((num_steps + 1, num_steps + 1))
    weights[:num_steps, :num_steps] = base.values * (r * v)[None, :] + eps
    weights[:num_steps, num_steps] = eps_none
    weights[num_steps, :] = 1.0 / (num_steps + 1)
    return AdjustedTransition(_normalize_rows(weights))


def _normalize_rows(weights: np.ndarray) -> np.ndarray:
    sums = weights.sum(axis=1, keepdims=True)
    # A row can only collapse to zero when eps and eps_none are both
    # disabled and every step is gated off; fall back to uniform.
    dead = sums[:, 0] <= 0.0
    if np.any(dead):
        weights = weights.copy()
        weights[dead, :] = 1.0
        sums = weights.sum(axis=1, keepdims=True)
    return weights / sums


@dataclass(frozen=True)
class TransitionConfig:
    """Knobs for building and adjusting the transition model.

    ``none_mode`` controls how the "none" state is wired in. ``"escape"``
    gives every step row a fixed escape weight toward "none" and spreads
    the "none" row uniformly. ``"neutral"`` instead treats "none" as an
    ordinary dependency-free state appended to the dependency matrix, which
    makes the adjusted matrix exactly uniform when no dependencies exist.
    """

    eps: float = 1e-8
    eps_none: float | None = None
    none_mode: str = "escape"
    no_prereq_rule: str = "column"

    def __post_init__(self) -> None:
        if self.none_mode not in ("escape", "neutral"):
            raise ValueError(f"none_mode must be 'escape' or 'neutral', got {self.none_mode!r}")
        if self.no_prereq_rule not in ("column", "row"):
            raise ValueError(f"no_prereq_rule must be 'column' or 'row', got {self.no_prereq_rule!r}")
        if self.eps < 0.0:
            raise ValueError("eps must be >= 0")


class TransitionModel:
    """Owns the base matrix for a task and produces per-segment adjustments."""

    def __init__(self, dep: DependencyMatrix, config: TransitionConfig | None = None):
        self.config = config or TransitionConfig()
        self.dep = dep
        self.base = init_transition(dep, no_prereq_rule=self.config.no_prereq_rule)
        if self.config.none_mode == "neutral":
            size = dep.num_steps + 1
            padded = np.zeros((size, size))
            padded[: dep.num_steps, : dep.num_steps] = dep.values
            self._neutral_base = init_transition(
                DependencyMatrix(padded), no_prereq_rule=self.config.no_prereq_rule
            )
        else:
            self._neutral_base = None

    @property
    def num_steps(self) -> int:
        return self.dep.num_steps

    def adjusted(self, step_readiness: np.ndarray, step_validity: np.ndarray) -> AdjustedTransition:
        if self._neutral_base is not None:
            r = np.append(np.asarray(step_readiness, dtype=np.float64), 1.0)
            v = np.append(np.asarray(step_validity, dtype=np.float64), 1.0)
            weights = self._neutral_base.values * (r * v)[None, :] + self.config.eps
            return AdjustedTransition(_normalize_rows(weights))
        return adjust(
            self.base,
            step_readiness,
            step_validity,
            eps=self.config.eps,
            eps_none=self.config.eps_none,
        )

    def adjusted_for(self, tracker: ProgressTracker) -> AdjustedTransition:
        return self.adjusted(readiness(self.dep, tracker), validity(self.dep, tracker))
