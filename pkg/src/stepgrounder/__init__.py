"""stepgrounder: online video step grounding via Bayesian filtering.

The engine maintains a belief over a task's steps (plus a "none" state)
per video segment, combining per-segment class scores from an observation
provider with a transition model derived from step dependencies and
estimated step progress. Localization and evaluation tooling turn the
resulting alignment matrices into timed step segments and benchmark
reports.
"""

from .core import (
    AlignmentMatrix,
    Belief,
    GroundTruthAnnotation,
    ObservationScores,
    ProgressDistribution,
    SegmentTimeline,
    StepInterval,
    TaskSpec,
    renormalize,
    timeline_from_duration,
    validate_annotation,
    validate_task,
)
from .dependency import (
    DependencyMatrix,
    ViolationStats,
    analyze_violations,
    build_dependency_chain_oracle,
    build_dependency_remote,
    threshold_matrix,
)
from .filtering import FilterConfig, FilterState, init_filter, predict, run_frozen, step, update
from .transition import (
    AdjustedTransition,
    BaseTransition,
    ProgressTracker,
    TransitionConfig,
    TransitionModel,
    adjust,
    init_transition,
    observe_progress,
    readiness,
    validity,
)

__version__ = "0.1.0"

__all__ = [
    "AdjustedTransition",
    "AlignmentMatrix",
    "BaseTransition",
    "Belief",
    "DependencyMatrix",
    "FilterConfig",
    "FilterState",
    "GroundTruthAnnotation",
    "ObservationScores",
    "ProgressDistribution",
    "ProgressTracker",
    "SegmentTimeline",
    "StepInterval",
    "TaskSpec",
    "TransitionConfig",
    "TransitionModel",
    "ViolationStats",
    "adjust",
    "analyze_violations",
    "build_dependency_chain_oracle",
    "build_dependency_remote",
    "init_filter",
    "init_transition",
    "observe_progress",
    "predict",
    "readiness",
    "renormalize",
    "run_frozen",
    "step",
    "threshold_matrix",
    "timeline_from_duration",
    "update",
    "validate_annotation",
    "validate_task",
    "validity",
]
