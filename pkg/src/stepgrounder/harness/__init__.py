"""CLI orchestration: per-video runs, benchmarks, and sweeps."""

from .runner import (
    BenchmarkResult,
    RunConfig,
    VideoJob,
    VideoResult,
    load_manifest,
    resolve_dependency,
    run_benchmark,
    run_video,
    run_violation_analysis,
    video_seed,
    write_video_outputs,
)

__all__ = [
    "BenchmarkResult",
    "RunConfig",
    "VideoJob",
    "VideoResult",
    "load_manifest",
    "resolve_dependency",
    "run_benchmark",
    "run_video",
    "run_violation_analysis",
    "video_seed",
    "write_video_outputs",
]
