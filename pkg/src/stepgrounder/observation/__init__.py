"""Observation scoring: prompts, providers, and the remote client."""

from .labels import index_to_label, label_to_index, option_labels
from .prompts import (
    NONE_OPTION_TEXT,
    build_binary_vsg_prompt,
    build_next_step_prompt,
    build_prereq_prompt,
    build_progress_prompt,
    build_vsg_prompt,
    render_options,
    vsg_option_labels,
)
from .providers import (
    ObservationProvider,
    ReplayProvider,
    SegmentScoreCache,
    SyntheticOracleProvider,
    expected_progress,
    progress_vector,
    replay_provider,
    synthetic_oracle_provider,
    write_replay_file,
)
from .remote import (
    RemoteEndpointConfig,
    RemoteObservationProvider,
    RemotePrerequisiteScorer,
    RemoteScoringClient,
    progress_segment_remote,
    restricted_softmax,
    score_segment_remote,
)

__all__ = [
    "NONE_OPTION_TEXT",
    "ObservationProvider",
    "RemoteEndpointConfig",
    "RemoteObservationProvider",
    "RemotePrerequisiteScorer",
    "RemoteScoringClient",
    "ReplayProvider",
    "SegmentScoreCache",
    "SyntheticOracleProvider",
    "build_binary_vsg_prompt",
    "build_next_step_prompt",
    "build_prereq_prompt",
    "build_progress_prompt",
    "build_vsg_prompt",
    "expected_progress",
    "index_to_label",
    "label_to_index",
    "option_labels",
    "progress_segment_remote",
    "progress_vector",
    "render_options",
    "replay_provider",
    "restricted_softmax",
    "score_segment_remote",
    "synthetic_oracle_provider",
    "vsg_option_labels",
    "write_replay_file",
]
