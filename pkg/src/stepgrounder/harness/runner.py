"""Orchestration: per-video streaming runs, benchmarks, and sweeps."""

from __future__ import annotations

import json
import logging
import os
import threading
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from ..core import (
    AlignmentMatrix,
    GroundTruthAnnotation,
    SegmentTimeline,
    TaskSpec,
    load_annotation,
    load_task,
    timeline_from_duration,
    write_json,
)
from ..dependency import (
    DependencyMatrix,
    ViolationStats,
    analyze_violations,
    build_dependency_chain_oracle,
    build_dependency_remote,
    load_dependency,
    threshold_matrix,
)
from ..errors import ConfigurationError, StepGroundingError
from ..filtering import FilterConfig, init_filter, save_alignment_csv, save_alignment_jsonl, step
from ..localization import DetectedSegment, ScaleSet, localize, save_detections
from ..metrics import (
    Detection,
    EvalReport,
    Reference,
    build_report,
    format_table,
    recall_at_1,
    save_report_csv,
    save_report_json,
)
from ..observation.providers import (
    ObservationProvider,
    ReplayProvider,
    SegmentScoreCache,
    SyntheticOracleProvider,
    progress_vector,
)
from ..observation.remote import (
    RemoteEndpointConfig,
    RemoteObservationProvider,
    RemotePrerequisiteScorer,
    RemoteScoringClient,
)
from ..transition import TransitionConfig

logger = logging.getLogger(__name__)

PROVIDER_KINDS = ("remote", "replay", "synthetic")
DEPENDENCY_SOURCES = ("remote-llm", "oracle-chain", "file")
VIOLATION_THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(11))


@dataclass
class RunConfig:
    """Everything a run needs; CLI flags mirror these fields in kebab-case."""

    provider: str = "replay"
    dependency_source: str = "file"
    segment_duration_s: float = 2.0
    segment_rounding: str = "ceil"
    step_prior: str = "uniform"
    vsg_prompt: str = "multi-choice"
    eps: float = 1e-8
    eps_none: float | None = None
    none_mode: str = "escape"
    no_prereq_rule: str = "column"
    localization_enabled: bool = True
    response_threshold: float = 1e-3
    nms_iou: float = 0.5
    scale_spacing: str = "log"
    interpolation: str = "all"
    task_pooling: str = "video-mean"
    dump_transitions: bool = False
    output_dir: Path | None = None
    deps_dir: Path | None = None
    seed: int = 0
    noise: float = 0.0
    max_workers: int | None = None
    remote: RemoteEndpointConfig | None = None

    def __post_init__(self) -> None:
        if self.provider not in PROVIDER_KINDS:
            raise ConfigurationError(f"provider must be one of {PROVIDER_KINDS}, got {self.provider!r}")
        if self.dependency_source not in DEPENDENCY_SOURCES:
            raise ConfigurationError(
                f"dependency_source must be one of {DEPENDENCY_SOURCES}, got {self.dependency_source!r}"
            )
        if self.segment_rounding not in ("ceil", "floor"):
            raise ConfigurationError("segment_rounding must be 'ceil' or 'floor'")
        if self.vsg_prompt not in ("multi-choice", "binary"):
            raise ConfigurationError("vsg_prompt must be 'multi-choice' or 'binary'")
        if self.scale_spacing not in ("log", "linear"):
            raise ConfigurationError("scale_spacing must be 'log' or 'linear'")
        if self.task_pooling not in ("video-mean", "step-pooled"):
            raise ConfigurationError("task_pooling must be 'video-mean' or 'step-pooled'")
        if self.segment_duration_s <= 0.0:
            raise ConfigurationError("segment_duration_s must be > 0")
        if not (0.0 <= self.noise <= 1.0):
            raise ConfigurationError("noise must lie in [0, 1]")

    def filter_config(self) -> FilterConfig:
        return FilterConfig(
            step_prior=self.step_prior,
            transition=TransitionConfig(
                eps=self.eps,
                eps_none=self.eps_none,
                none_mode=self.none_mode,
                no_prereq_rule=self.no_prereq_rule,
            ),
        )

    def scales(self) -> ScaleSet:
        return ScaleSet.logarithmic() if self.scale_spacing == "log" else ScaleSet.linear()

    def worker_count(self) -> int:
        workers = self.max_workers or os.cpu_count() or 1
        if self.remote is not None:
            workers = min(workers, self.remote.max_concurrent)
        return max(1, workers)


@dataclass(frozen=True)
class VideoJob:
    """One manifest entry; paths already resolved to absolute."""

    task_path: Path
    annotation_path: Path | None = None
    replay_path: Path | None = None
    media: str | None = None
    dependency_path: Path | None = None


def load_manifest(path: str | Path) -> list[VideoJob]:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read manifest {path}: {exc}") from exc
    entries = raw.get("videos") if isinstance(raw, Mapping) else None
    if not isinstance(entries, list) or not entries:
        raise ConfigurationError(f"manifest {path} must hold a non-empty 'videos' array")
    base = path.parent
    jobs = []
    for pos, entry in enumerate(entries):
        if not isinstance(entry, Mapping) or "task" not in entry:
            raise ConfigurationError(f"manifest entry {pos} must be an object with a 'task' path")

        def resolve(key: str) -> Path | None:
            value = entry.get(key)
            return (base / value) if value else None

        task_path = base / entry["task"]
        if not task_path.exists():
            raise ConfigurationError(f"manifest entry {pos}: task file {task_path} does not exist")
        jobs.append(
            VideoJob(
                task_path=task_path,
                annotation_path=resolve("annotation"),
                replay_path=resolve("replay"),
                media=entry.get("media"),
                dependency_path=resolve("dependency"),
            )
        )
    return jobs


def video_seed(seed: int, video_id: str) -> int:
    """Stable per-video RNG seed (independent of process hash randomization)."""
    return (seed * 0x9E3779B1 + zlib.crc32(video_id.encode("utf-8"))) % (2**32)


@dataclass
class VideoResult:
    video_id: str
    task_id: str
    timeline: SegmentTimeline
    alignment: AlignmentMatrix
    observations: AlignmentMatrix
    detections: list[DetectedSegment]
    r1: float | None
    raw_r1: float | None
    num_gt_steps: int
    degenerate_segments: tuple[int, ...]

    def metrics_dict(self) -> dict[str, Any]:
        return {
            "video_id": self.video_id,
            "task_id": self.task_id,
            "num_segments": self.timeline.num_segments,
            "num_gt_steps": self.num_gt_steps,
            "recall_at_1": self.r1,
            "raw_observation_recall_at_1": self.raw_r1,
            "num_detections": len(self.detections),
            "degenerate_segments": list(self.degenerate_segments),
        }


def resolve_dependency(
    config: RunConfig,
    task: TaskSpec,
    annotation: GroundTruthAnnotation | None,
    dependency_path: Path | None = None,
    client: RemoteScoringClient | None = None,
) -> DependencyMatrix:
    """Obtain the task's dependency matrix per the configured source.

    A missing dependency file fails before any segment is processed.
    """
    source = config.dependency_source
    if source == "file":
        path = dependency_path
        if path is None and config.deps_dir is not None:
            path = Path(config.deps_dir) / f"{task.task_id}.json"
        if path is None or not Path(path).exists():
            raise ConfigurationError(
                f"dependency_source='file' but no dependency file found for task {task.task_id!r}"
            )
        dep = load_dependency(path)
        if dep.num_steps != task.num_steps:
            raise ConfigurationError(
                f"dependency file {path} covers {dep.num_steps} steps, task has {task.num_steps}"
            )
        return dep
    if source == "oracle-chain":
        if annotation is None:
            raise ConfigurationError("dependency_source='oracle-chain' needs an annotation")
        return build_dependency_chain_oracle(annotation, task.num_steps)
    if config.remote is None:
        raise ConfigurationError("dependency_source='remote-llm' needs remote endpoint settings")
    cache_path = None
    if config.deps_dir is not None:
        Path(config.deps_dir).mkdir(parents=True, exist_ok=True)
        cache_path = Path(config.deps_dir) / f"{task.task_id}.json"
        if cache_path.exists():
            return load_dependency(cache_path)
    owns_client = client is None
    if owns_client:
        client = RemoteScoringClient(config.remote)
    try:
        scorer = RemotePrerequisiteScorer(client)
        return build_dependency_remote(
            task, scorer, max_workers=config.remote.max_concurrent, cache_path=cache_path
        )
    finally:
        if owns_client:
            client.close()


def _resolve_timeline(
    config: RunConfig,
    video_id: str,
    annotation: GroundTruthAnnotation | None,
    replay: ReplayProvider | None,
) -> SegmentTimeline:
    if annotation is not None and annotation.length_s is not None:
        return timeline_from_duration(
            annotation.length_s,
            config.segment_duration_s,
            video_id=video_id,
            rounding=config.segment_rounding,
        )
    if replay is not None:
        return SegmentTimeline(
            video_id=video_id,
            segment_duration_s=config.segment_duration_s,
            num_segments=replay.max_segment + 1,
        )
    raise ConfigurationError(
        f"cannot size the timeline for video {video_id!r}: no annotation length and no replay file"
    )


def run_video(
    config: RunConfig,
    task: TaskSpec,
    annotation: GroundTruthAnnotation | None = None,
    *,
    media: str | None = None,
    replay_path: str | Path | None = None,
    dep: DependencyMatrix | None = None,
    video_id: str | None = None,
    output_dir: str | Path | None = None,
    client: RemoteScoringClient | None = None,
) -> VideoResult:
    """Stream one video through the filter and emit all per-video outputs."""
    video_id = video_id or (annotation.video_id if annotation is not None else "video")

    owns_client = False
    if config.provider == "remote" and client is None:
        if config.remote is None:
            raise ConfigurationError("provider='remote' needs remote endpoint settings")
        client = RemoteScoringClient(config.remote)
        owns_client = True
    try:
        if dep is None:
            dep = resolve_dependency(config, task, annotation, client=client)

        replay: ReplayProvider | None = None
        if config.provider == "replay":
            if replay_path is None:
                raise ConfigurationError("provider='replay' needs a replay file")
            replay = ReplayProvider(replay_path, num_steps=task.num_steps)
        timeline = _resolve_timeline(config, video_id, annotation, replay)

        provider: ObservationProvider
        if config.provider == "replay":
            assert replay is not None
            provider = replay
        elif config.provider == "synthetic":
            if annotation is None:
                raise ConfigurationError("provider='synthetic' needs an annotation")
            provider = SyntheticOracleProvider(
                annotation,
                timeline,
                task.num_steps,
                noise=config.noise,
                seed=video_seed(config.seed, video_id),
            )
        else:
            assert client is not None
            cache = None
            if output_dir is not None:
                Path(output_dir).mkdir(parents=True, exist_ok=True)
                cache = SegmentScoreCache(Path(output_dir) / "scores.jsonl", task.num_steps)
            provider = RemoteObservationProvider(
                client, task, media, timeline, cache=cache, prompt_mode=config.vsg_prompt
            )

        state = init_filter(task, dep, config=config.filter_config())
        obs_rows = []
        adjusted_dump: list[np.ndarray] = []
        for t in range(timeline.num_segments):
            obs = provider.vsg_scores(t)
            progress = progress_vector(provider, t, task.num_steps)
            next_scores = None
            if config.step_prior == "next_step":
                scorer = getattr(provider, "next_step_scores", None)
                if scorer is None:
                    raise ConfigurationError(
                        f"step_prior='next_step' is not supported by the {config.provider} provider"
                    )
                next_scores = scorer(t)
            if config.dump_transitions and output_dir is not None:
                adjusted_dump.append(state.model.adjusted_for(state.tracker).values)
            state, _ = step(state, obs, progress, next_step_scores=next_scores)
            obs_rows.append(obs.values)

        alignment = state.alignment_matrix()
        observations = AlignmentMatrix(np.vstack(obs_rows))

        detections: list[DetectedSegment] = []
        if config.localization_enabled:
            detections = localize(
                alignment,
                timeline.segment_duration_s,
                scales=config.scales(),
                response_threshold=config.response_threshold,
                nms_iou=config.nms_iou,
            )

        r1 = raw_r1 = None
        num_gt = 0
        if annotation is not None and annotation.intervals:
            r1 = recall_at_1(alignment, annotation, timeline)
            raw_r1 = recall_at_1(observations, annotation, timeline)
            num_gt = len(annotation.steps_present)

        result = VideoResult(
            video_id=video_id,
            task_id=task.task_id,
            timeline=timeline,
            alignment=alignment,
            observations=observations,
            detections=detections,
            r1=r1,
            raw_r1=raw_r1,
            num_gt_steps=num_gt,
            degenerate_segments=state.degenerate_segments,
        )
        if output_dir is not None:
            write_video_outputs(result, output_dir)
            if config.dump_transitions:
                _dump_transitions(Path(output_dir), task.task_id, state.model, adjusted_dump)
        return result
    finally:
        if owns_client and client is not None:
            client.close()


def _dump_transitions(out: Path, task_id: str, model, adjusted: list[np.ndarray]) -> None:
    # Debug aid: matrices in the dependency-file JSON shape.
    write_json(
        out / "base_transition.json",
        {"task_id": task_id, "matrix": [[float(x) for x in row] for row in model.base.values]},
    )
    with open(out / "adjusted_transitions.jsonl", "w", encoding="utf-8") as fh:
        for t, matrix in enumerate(adjusted):
            record = {"t": t, "matrix": [[float(x) for x in row] for row in matrix]}
            fh.write(json.dumps(record) + "\n")


def write_video_outputs(result: VideoResult, output_dir: str | Path) -> None:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_alignment_jsonl(out / "alignment.jsonl", result.alignment)
    save_alignment_csv(out / "alignment.csv", result.alignment)
    save_detections(out / "detections.json", result.detections)
    write_json(out / "metrics.json", result.metrics_dict())


@dataclass
class BenchmarkResult:
    report: EvalReport | None
    failures: list[tuple[str, str]] = field(default_factory=list)
    results: list[VideoResult] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 2 if self.failures else 0


def run_benchmark(config: RunConfig, manifest_path: str | Path) -> BenchmarkResult:
    """Run every manifest video (bounded concurrency) and aggregate a report.

    Failed videos are recorded and skipped; the exit code reflects partial
    failure. Outputs are aggregated in video-id order, so results do not
    depend on scheduling.
    """
    jobs = load_manifest(manifest_path)
    if config.output_dir is None:
        raise ConfigurationError("run_benchmark needs output_dir")
    out_root = Path(config.output_dir)
    out_root.mkdir(parents=True, exist_ok=True)

    client: RemoteScoringClient | None = None
    if config.provider == "remote" or config.dependency_source == "remote-llm":
        if config.remote is None:
            raise ConfigurationError("remote settings required for the chosen provider/deps source")
        client = RemoteScoringClient(config.remote)

    dep_lock = threading.Lock()
    dep_cache: dict[str, DependencyMatrix] = {}

    def dependency_for(task: TaskSpec, annotation, job: VideoJob) -> DependencyMatrix:
        if config.dependency_source == "oracle-chain":
            # Chain matrices are per video, never shared across a task.
            return resolve_dependency(config, task, annotation, job.dependency_path, client)
        with dep_lock:
            if task.task_id not in dep_cache:
                dep_cache[task.task_id] = resolve_dependency(
                    config, task, annotation, job.dependency_path, client
                )
            return dep_cache[task.task_id]

    def process(job: VideoJob) -> VideoResult:
        task = load_task(job.task_path)
        annotation = (
            load_annotation(job.annotation_path, num_steps=task.num_steps)
            if job.annotation_path is not None
            else None
        )
        video_id = annotation.video_id if annotation is not None else job.task_path.stem
        dep = dependency_for(task, annotation, job)
        return run_video(
            config,
            task,
            annotation,
            media=job.media,
            replay_path=job.replay_path,
            dep=dep,
            video_id=video_id,
            output_dir=out_root / "videos" / video_id,
            client=client,
        )

    failures: list[tuple[str, str]] = []
    results: list[VideoResult] = []
    try:
        with ThreadPoolExecutor(max_workers=config.worker_count()) as pool:
            outcomes = list(pool.map(lambda job: _guard(process, job), jobs))
    finally:
        if client is not None:
            client.close()
    for job, outcome in zip(jobs, outcomes):
        if isinstance(outcome, VideoResult):
            results.append(outcome)
        else:
            failures.append((str(job.task_path), outcome))
            logger.error("video failed (%s): %s", job.task_path, outcome)

    results.sort(key=lambda r: r.video_id)
    report = None
    scored = [r for r in results if r.r1 is not None]
    if scored:
        per_video = [(r.video_id, r.task_id, float(r.r1), r.num_gt_steps) for r in scored]
        detections = [
            Detection(r.task_id, r.video_id, d.step_index, d.start_s, d.end_s, d.confidence)
            for r in scored
            for d in r.detections
        ]
        references = _references_from_jobs(jobs, scored)
        report = build_report(
            per_video,
            detections,
            references,
            interpolation=config.interpolation,
            task_pooling=config.task_pooling,
        )
        save_report_json(out_root / "report.json", report)
        save_report_csv(out_root / "report.csv", report)
        (out_root / "report.txt").write_text(format_table(report) + "\n", encoding="utf-8")
    return BenchmarkResult(report=report, failures=failures, results=results)


def _references_from_jobs(jobs: Sequence[VideoJob], scored: Sequence[VideoResult]) -> list[Reference]:
    wanted = {r.video_id: r.task_id for r in scored}
    references: list[Reference] = []
    for job in jobs:
        if job.annotation_path is None:
            continue
        annotation = load_annotation(job.annotation_path)
        if annotation.video_id not in wanted:
            continue
        for iv in annotation.intervals:
            references.append(
                Reference(
                    task_id=wanted[annotation.video_id],
                    video_id=annotation.video_id,
                    step=iv.step,
                    start_s=iv.start_s,
                    end_s=iv.end_s,
                )
            )
    return references


def _guard(fn, job: VideoJob) -> VideoResult | str:
    try:
        return fn(job)
    except StepGroundingError as exc:
        return f"{type(exc).__name__}: {exc}"
    except Exception as exc:  # pragma: no cover - defensive
        return f"{type(exc).__name__}: {exc}"


def run_violation_analysis(
    config: RunConfig,
    manifest_path: str | Path,
    thresholds: Sequence[float] = VIOLATION_THRESHOLDS,
) -> list[ViolationStats]:
    """Sweep binarization thresholds and report violation statistics.

    One soft matrix is used per task: the configured dependency file, a
    remote build, or (for oracle-chain) the chain from the task's first
    video in video-id order.
    """
    jobs = load_manifest(manifest_path)
    tasks: dict[str, TaskSpec] = {}
    annotations: list[GroundTruthAnnotation] = []
    by_task: dict[str, list[tuple[VideoJob, GroundTruthAnnotation]]] = {}
    for job in jobs:
        if job.annotation_path is None:
            raise ConfigurationError("violation analysis requires an annotation per video")
        task = load_task(job.task_path)
        annotation = load_annotation(job.annotation_path, num_steps=task.num_steps)
        tasks[task.task_id] = task
        annotations.append(annotation)
        by_task.setdefault(task.task_id, []).append((job, annotation))

    client: RemoteScoringClient | None = None
    if config.dependency_source == "remote-llm":
        if config.remote is None:
            raise ConfigurationError("remote settings required for dependency_source='remote-llm'")
        client = RemoteScoringClient(config.remote)
    try:
        soft: dict[str, DependencyMatrix] = {}
        for task_id, entries in sorted(by_task.items()):
            entries = sorted(entries, key=lambda pair: pair[1].video_id)
            job, annotation = entries[0]
            soft[task_id] = resolve_dependency(
                config, tasks[task_id], annotation, job.dependency_path, client
            )
    finally:
        if client is not None:
            client.close()

    sweep: list[ViolationStats] = []
    for theta in thresholds:
        binary = {task_id: threshold_matrix(dep, theta) for task_id, dep in soft.items()}
        sweep.append(analyze_violations(binary, annotations, theta))

    if config.output_dir is not None:
        out_root = Path(config.output_dir)
        out_root.mkdir(parents=True, exist_ok=True)
        write_json(out_root / "violations.json", [stats.to_dict() for stats in sweep])
        _write_violations_csv(out_root / "violations.csv", sweep)
    return sweep


def _write_violations_csv(path: Path, sweep: Sequence[ViolationStats]) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric"] + [f"{s.threshold:.2f}" for s in sweep])
        writer.writerow(
            ["violated_dependencies_pct"]
            + [f"{100.0 * s.violated_dependency_fraction:.1f}" for s in sweep]
        )
        writer.writerow(
            ["tasks_with_violation_pct"]
            + [f"{100.0 * s.tasks_with_violation_fraction:.1f}" for s in sweep]
        )
