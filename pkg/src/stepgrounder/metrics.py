"""Evaluation: R@1, per-task averaged R@1, and class-agnostic mAP@IoU.

The "none" column never enters any metric. A segment's timestamp is its
midpoint; argmax ties break toward the earliest segment.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .core import AlignmentMatrix, GroundTruthAnnotation, SegmentTimeline
from .errors import DimensionMismatch, EmptyGroundTruth

DEFAULT_IOU_GRID = (0.3, 0.4, 0.5, 0.6, 0.7)
REPORTED_IOUS = (0.3, 0.5, 0.7)


def iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Temporal intersection over union of two [start, end] intervals."""
    if a[0] >= a[1] or b[0] >= b[1]:
        raise ValueError(f"intervals must have start < end, got {a} and {b}")
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0.0:
        return 0.0
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union


def recall_at_1(
    alignment: AlignmentMatrix,
    annotation: GroundTruthAnnotation,
    timeline: SegmentTimeline,
) -> float:
    """Fraction of annotated steps whose top-scoring segment midpoint lands
    inside one of that step's ground-truth intervals."""
    steps = annotation.steps_present
    if not steps:
        raise EmptyGroundTruth(f"video {annotation.video_id!r} has no annotated steps")
    if steps[-1] >= alignment.num_steps:
        raise DimensionMismatch(
            f"annotation references step {steps[-1]} but the matrix covers {alignment.num_steps} steps"
        )
    hits = 0
    for step in steps:
        best_t = int(np.argmax(alignment.step_column(step)))  # ties -> earliest
        mid = timeline.midpoint_s(best_t)
        if any(iv.start_s <= mid < iv.end_s for iv in annotation.intervals_for(step)):
            hits += 1
    return hits / len(steps)


def avg_recall_at_1(per_video: Sequence[tuple[str, float]]) -> float:
    """Mean R@1 per task, then unweighted mean across tasks."""
    if not per_video:
        raise ValueError("need at least one per-video value")
    by_task: dict[str, list[float]] = {}
    for task_id, value in per_video:
        by_task.setdefault(task_id, []).append(value)
    task_means = [float(np.mean(values)) for values in by_task.values()]
    return float(np.mean(task_means))


def avg_recall_at_1_step_pooled(per_video: Sequence[tuple[str, int, int]]) -> float:
    """Alternative per-task aggregation: pool step hits across a task's videos.

    Takes (task_id, hits, evaluated_steps) rows; each task's R@1 is the
    pooled hit fraction, then tasks are averaged unweighted.
    """
    if not per_video:
        raise ValueError("need at least one per-video value")
    hits: dict[str, int] = {}
    totals: dict[str, int] = {}
    for task_id, hit, total in per_video:
        hits[task_id] = hits.get(task_id, 0) + hit
        totals[task_id] = totals.get(task_id, 0) + total
    fractions = [hits[task] / totals[task] for task in totals if totals[task]]
    if not fractions:
        raise ValueError("no evaluated steps")
    return float(np.mean(fractions))


@dataclass(frozen=True)
class Detection:
    """One scored predicted segment, tagged with its task and video."""

    task_id: str
    video_id: str
    step: int
    start_s: float
    end_s: float
    confidence: float


@dataclass(frozen=True)
class Reference:
    """One ground-truth segment, tagged with its task and video."""

    task_id: str
    video_id: str
    step: int
    start_s: float
    end_s: float


def _ap_from_flags(flags: Sequence[bool], num_positive: int, interpolation: str) -> float:
    if num_positive == 0:
        return 0.0
    if not flags:
        return 0.0
    tp = np.cumsum([1.0 if f else 0.0 for f in flags])
    fp = np.cumsum([0.0 if f else 1.0 for f in flags])
    recall = tp / num_positive
    precision = tp / (tp + fp)
    if interpolation == "101":
        grid = np.linspace(0.0, 1.0, 101)
        best = np.zeros_like(grid)
        for i, r in enumerate(grid):
            mask = recall >= r
            best[i] = precision[mask].max() if mask.any() else 0.0
        return float(best.mean())
    # All-point interpolation: area under the monotone precision envelope.
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    changed = np.nonzero(mrec[1:] != mrec[:-1])[0] + 1
    return float(np.sum((mrec[changed] - mrec[changed - 1]) * mpre[changed]))


def average_precision(
    detections: Sequence[Detection],
    references: Sequence[Reference],
    tau: float,
    *,
    interpolation: str = "all",
) -> float:
    """AP for one activity; greedy matching within (video, step) at IoU >= tau."""
    if interpolation not in ("all", "101"):
        raise ValueError(f"interpolation must be 'all' or '101', got {interpolation!r}")
    ordered = sorted(
        detections,
        key=lambda d: (
            -d.confidence,
            -(d.end_s - d.start_s),  # ties -> longer segment first
            d.video_id,
            d.step,
            d.start_s,
        ),
    )
    pool: dict[tuple[str, int], list[Reference]] = {}
    for ref in references:
        pool.setdefault((ref.video_id, ref.step), []).append(ref)
    matched: set[int] = set()
    flags: list[bool] = []
    for det in ordered:
        best_iou = 0.0
        best_ref: int | None = None
        for ref in pool.get((det.video_id, det.step), []):
            if id(ref) in matched:
                continue
            overlap = iou((det.start_s, det.end_s), (ref.start_s, ref.end_s))
            if overlap >= tau and overlap > best_iou:
                best_iou = overlap
                best_ref = id(ref)
        if best_ref is not None:
            matched.add(best_ref)
            flags.append(True)
        else:
            flags.append(False)
    return _ap_from_flags(flags, len(references), interpolation)


def map_at_iou(
    detections: Iterable[Detection],
    references: Iterable[Reference],
    tau: float,
    *,
    interpolation: str = "all",
) -> float:
    """Unweighted mean of per-activity AP; activities without ground truth are skipped."""
    dets_by_task: dict[str, list[Detection]] = {}
    refs_by_task: dict[str, list[Reference]] = {}
    for det in detections:
        dets_by_task.setdefault(det.task_id, []).append(det)
    for ref in references:
        refs_by_task.setdefault(ref.task_id, []).append(ref)
    if not refs_by_task:
        raise EmptyGroundTruth("no reference segments")
    values = [
        average_precision(dets_by_task.get(task_id, []), refs, tau, interpolation=interpolation)
        for task_id, refs in sorted(refs_by_task.items())
    ]
    return float(np.mean(values))


@dataclass
class EvalReport:
    """Aggregate metrics over a benchmark run."""

    per_video_r1: dict[str, float] = field(default_factory=dict)
    per_task_r1: dict[str, float] = field(default_factory=dict)
    recall_at_1: float = 0.0
    avg_recall_at_1: float = 0.0
    map_by_iou: dict[float, float] = field(default_factory=dict)
    map_mean: float = 0.0
    num_videos: int = 0
    num_tasks: int = 0
    num_steps_evaluated: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_video_r1": dict(sorted(self.per_video_r1.items())),
            "per_task_r1": dict(sorted(self.per_task_r1.items())),
            "recall_at_1": self.recall_at_1,
            "avg_recall_at_1": self.avg_recall_at_1,
            "map_by_iou": {f"{tau:.1f}": value for tau, value in sorted(self.map_by_iou.items())},
            "map_mean": self.map_mean,
            "num_videos": self.num_videos,
            "num_tasks": self.num_tasks,
            "num_steps_evaluated": self.num_steps_evaluated,
        }


def build_report(
    per_video: Sequence[tuple[str, str, float, int]],
    detections: Sequence[Detection] = (),
    references: Sequence[Reference] = (),
    *,
    iou_grid: Sequence[float] = DEFAULT_IOU_GRID,
    interpolation: str = "all",
    task_pooling: str = "video-mean",
) -> EvalReport:
    """Assemble a report from (video_id, task_id, r1, steps_evaluated) rows.

    ``task_pooling`` selects how a task's R@1 aggregates over its videos:
    ``"video-mean"`` (default) or ``"step-pooled"``.
    """
    if not per_video:
        raise ValueError("need at least one evaluated video")
    if task_pooling not in ("video-mean", "step-pooled"):
        raise ValueError(f"task_pooling must be 'video-mean' or 'step-pooled', got {task_pooling!r}")
    report = EvalReport()
    by_task: dict[str, list[float]] = {}
    for video_id, task_id, r1, steps in per_video:
        report.per_video_r1[video_id] = r1
        by_task.setdefault(task_id, []).append(r1)
        report.num_steps_evaluated += steps
    report.per_task_r1 = {task: float(np.mean(vals)) for task, vals in by_task.items()}
    report.recall_at_1 = float(np.mean([row[2] for row in per_video]))
    if task_pooling == "step-pooled":
        pooled = [
            (task_id, int(round(r1 * steps)), steps) for _, task_id, r1, steps in per_video
        ]
        report.avg_recall_at_1 = avg_recall_at_1_step_pooled(pooled)
        report.per_task_r1 = {
            task: avg_recall_at_1_step_pooled([p for p in pooled if p[0] == task])
            for task in by_task
        }
    else:
        report.avg_recall_at_1 = avg_recall_at_1(
            [(task_id, r1) for _, task_id, r1, _ in per_video]
        )
    report.num_videos = len(per_video)
    report.num_tasks = len(by_task)
    if references:
        for tau in iou_grid:
            report.map_by_iou[float(tau)] = map_at_iou(
                detections, references, tau, interpolation=interpolation
            )
        report.map_mean = float(np.mean(list(report.map_by_iou.values())))
    return report


def save_report_json(path: str | Path, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_report_csv(path: str | Path, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "key", "value"])
        writer.writerow(["summary", "recall_at_1", repr(report.recall_at_1)])
        writer.writerow(["summary", "avg_recall_at_1", repr(report.avg_recall_at_1)])
        for tau, value in sorted(report.map_by_iou.items()):
            writer.writerow(["summary", f"map@{tau:.1f}", repr(value)])
        if report.map_by_iou:
            writer.writerow(["summary", "map_mean", repr(report.map_mean)])
        for task_id, value in sorted(report.per_task_r1.items()):
            writer.writerow(["task", task_id, repr(value)])
        for video_id, value in sorted(report.per_video_r1.items()):
            writer.writerow(["video", video_id, repr(value)])


def format_table(report: EvalReport) -> str:
    """Plain-text table with values scaled by 100, one decimal."""
    rows = [
        ("R@1", report.recall_at_1),
        ("Avg R@1", report.avg_recall_at_1),
    ]
    for tau in REPORTED_IOUS:
        if tau in report.map_by_iou:
            rows.append((f"mAP@{tau:.1f}", report.map_by_iou[tau]))
    if report.map_by_iou:
        rows.append(("mAP@[0.3-0.7]", report.map_mean))
    width = max(len(name) for name, _ in rows)
    lines = [f"{'Metric'.ljust(width)}  Value"]
    lines += [f"{name.ljust(width)}  {100.0 * value:5.1f}" for name, value in rows]
    lines.append(
        f"({report.num_videos} videos, {report.num_tasks} tasks, "
        f"{report.num_steps_evaluated} steps evaluated)"
    )
    return "\n".join(lines)
