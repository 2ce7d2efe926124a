"""The online predict/update loop producing one belief per segment.

Per segment the recursion is

    prior    = belief @ adjusted_transition          (predict)
    belief'  = normalize(likelihood * prior)         (update)

where the likelihood comes from the per-segment class scores, optionally
re-weighted by a step prior. Progress estimates enter the tracker only
after the segment's belief is emitted, so the adjustment for segment ``t``
depends on strictly earlier segments.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .core import AlignmentMatrix, Belief, ObservationScores, TaskSpec, renormalize
from .dependency import DependencyMatrix
from .errors import ConfigurationError, DimensionMismatch
from .transition import (
    ProgressTracker,
    TransitionConfig,
    TransitionModel,
    readiness,
    validity,
)

logger = logging.getLogger(__name__)

STEP_PRIOR_VARIANTS = ("uniform", "next_step", "propagated")

#: Floor applied to non-uniform step priors before dividing by them.
PRIOR_FLOOR = 1e-12


@dataclass(frozen=True)
class FilterConfig:
    """Filter-level knobs; transition knobs nest under ``transition``."""

    step_prior: str = "uniform"
    transition: TransitionConfig = field(default_factory=TransitionConfig)

    def __post_init__(self) -> None:
        if self.step_prior not in STEP_PRIOR_VARIANTS:
            raise ConfigurationError(
                f"step_prior must be one of {STEP_PRIOR_VARIANTS}, got {self.step_prior!r}"
            )


@dataclass(frozen=True)
class FilterState:
    """Everything one video's filter run carries between segments."""

    task: TaskSpec
    dep: DependencyMatrix
    model: TransitionModel
    config: FilterConfig
    belief: Belief
    tracker: ProgressTracker
    t: int = 0
    history: tuple[Belief, ...] = ()
    propagated: np.ndarray | None = None
    degenerate_segments: tuple[int, ...] = ()

    @property
    def num_steps(self) -> int:
        return self.task.num_steps

    def alignment_matrix(self) -> AlignmentMatrix:
        if not self.history:
            raise ValueError("no segments processed yet")
        return AlignmentMatrix(np.vstack([b.values for b in self.history]))


def init_filter(
    task: TaskSpec,
    dep: DependencyMatrix,
    transition: TransitionModel | None = None,
    config: FilterConfig | None = None,
) -> FilterState:
    """Build the initial state: uniform belief over S+1, zero progress."""
    config = config or FilterConfig()
    if dep.num_steps != task.num_steps:
        raise DimensionMismatch(
            f"dependency matrix covers {dep.num_steps} steps, task has {task.num_steps}"
        )
    model = transition or TransitionModel(dep, config.transition)
    if model.num_steps != task.num_steps:
        raise DimensionMismatch(
            f"transition model covers {model.num_steps} steps, task has {task.num_steps}"
        )
    size = task.num_steps + 1
    propagated = np.full(size, 1.0 / size) if config.step_prior == "propagated" else None
    return FilterState(
        task=task,
        dep=dep,
        model=model,
        config=config,
        belief=Belief.uniform(task.num_steps),
        tracker=ProgressTracker.zeros(task.num_steps),
        propagated=propagated,
    )


def forward_step(
    belief: np.ndarray, transition: np.ndarray, observation: np.ndarray
) -> tuple[np.ndarray, bool]:
    """One raw recursion step over plain arrays.

    Returns the new belief and a flag marking a degenerate update, where
    the observation put no mass on any reachable state and the predicted
    prior was kept unchanged.
    """
    prior = belief @ transition
    weighted = prior * observation
    total = float(weighted.sum())
    if total <= 0.0:
        return prior, True
    return weighted / total, False


def _adjusted(state: FilterState):
    r = readiness(state.dep, state.tracker)
    v = validity(state.dep, state.tracker)
    return state.model.adjusted(r, v)


def predict(state: FilterState) -> np.ndarray:
    """Prior over the S+1 states for the upcoming segment."""
    return state.belief.values @ _adjusted(state).values


def update(
    prior: np.ndarray, obs: ObservationScores, state_prior: np.ndarray | None = None
) -> Belief:
    """Combine a predicted prior with one segment's class scores.

    With the default uniform step prior the likelihood is the score vector
    itself; otherwise scores are divided by ``state_prior`` (floored to
    stay finite). An all-zero product falls back to the prior unchanged
    and is logged.
    """
    belief, degenerate = _update(prior, obs.values, state_prior)
    if degenerate:
        logger.warning("degenerate update: observation puts no mass on reachable states; keeping prior")
    return belief


def _update(
    prior: np.ndarray, scores: np.ndarray, state_prior: np.ndarray | None
) -> tuple[Belief, bool]:
    if prior.shape != scores.shape:
        raise DimensionMismatch(f"prior shape {prior.shape} does not match scores {scores.shape}")
    likelihood = scores
    if state_prior is not None:
        likelihood = scores / np.maximum(state_prior, PRIOR_FLOOR)
    weighted = prior * likelihood
    total = float(weighted.sum())
    if total <= 0.0:
        return Belief(renormalize(prior)), True
    return Belief(renormalize(weighted)), False


def step(
    state: FilterState,
    obs: ObservationScores,
    per_step_progress: Any,
    *,
    next_step_scores: np.ndarray | None = None,
) -> tuple[FilterState, Belief]:
    """Process one segment: predict, update, then ingest progress.

    ``next_step_scores`` is only consulted under the ``next_step`` step
    prior; it must then be a simplex over the S+1 states.
    """
    if obs.num_steps != state.num_steps:
        raise DimensionMismatch(
            f"observation covers {obs.num_steps} steps, task has {state.num_steps}"
        )
    tmat = _adjusted(state)
    prior = state.belief.values @ tmat.values

    variant = state.config.step_prior
    if variant == "next_step":
        if next_step_scores is None:
            raise ConfigurationError("step_prior='next_step' requires next_step_scores per segment")
        state_prior = np.asarray(next_step_scores, dtype=np.float64)
    elif variant == "propagated":
        state_prior = state.propagated
    else:
        state_prior = None

    belief, degenerate = _update(prior, obs.values, state_prior)
    if degenerate:
        logger.warning(
            "degenerate update at segment %d of video task %r; keeping prior", state.t, state.task.task_id
        )

    propagated = state.propagated
    if propagated is not None:
        propagated = propagated @ tmat.values

    new_state = replace(
        state,
        belief=belief,
        tracker=state.tracker.observe(per_step_progress),
        t=state.t + 1,
        history=state.history + (belief,),
        propagated=propagated,
        degenerate_segments=(
            state.degenerate_segments + (state.t,) if degenerate else state.degenerate_segments
        ),
    )
    return new_state, belief


def run_frozen(
    transitions: Sequence[np.ndarray],
    observations: Sequence[np.ndarray],
    initial: np.ndarray | None = None,
) -> list[Belief]:
    """Run the raw recursion with externally supplied transition matrices.

    Useful when the per-segment matrices are known ahead of time, e.g. for
    cross-checking against exhaustive path-sum marginals.
    """
    if len(transitions) != len(observations):
        raise DimensionMismatch("need one transition matrix per observation")
    if not observations:
        return []
    size = np.asarray(observations[0]).shape[0]
    belief = np.full(size, 1.0 / size) if initial is None else np.asarray(initial, dtype=np.float64)
    out: list[Belief] = []
    for tmat, obs in zip(transitions, observations):
        belief, _ = forward_step(belief, np.asarray(tmat, dtype=np.float64), np.asarray(obs, dtype=np.float64))
        belief = renormalize(belief)
        out.append(Belief(belief))
    return out


def save_alignment_jsonl(path: str | Path, matrix: AlignmentMatrix) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in range(matrix.num_segments):
            fh.write(json.dumps({"t": t, "belief": [float(x) for x in matrix.values[t]]}))
            fh.write("\n")


def load_alignment_jsonl(path: str | Path) -> AlignmentMatrix:
    rows: dict[int, list[float]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            rows[int(record["t"])] = [float(x) for x in record["belief"]]
    if not rows:
        raise ValueError(f"no alignment rows in {path}")
    ordered = [rows[t] for t in sorted(rows)]
    return AlignmentMatrix(np.asarray(ordered))


def save_alignment_csv(path: str | Path, matrix: AlignmentMatrix) -> None:
    header = [f"step_{i}" for i in range(matrix.num_steps)] + ["none"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + header)
        for t in range(matrix.num_segments):
            writer.writerow([t] + [repr(float(x)) for x in matrix.values[t]])
