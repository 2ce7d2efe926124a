"""Observation providers: the contract, replay files, and the synthetic oracle.

A provider turns a segment index into class scores and per-step progress
distributions. Providers must be deterministic for fixed configuration,
so a cached run can be replayed bit for bit.
"""

from __future__ import annotations

import json
import math
import threading
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, runtime_checkable

import numpy as np

from ..core import (
    GroundTruthAnnotation,
    ObservationScores,
    ProgressDistribution,
    SegmentTimeline,
)
from ..errors import CorruptReplayFile, DimensionMismatch, MissingObservation

PROGRESS_TOKENS = 10


@runtime_checkable
class ObservationProvider(Protocol):
    """Scores one video's segments."""

    def vsg_scores(self, t: int) -> ObservationScores:
        ...

    def progress_scores(self, t: int, step_index: int) -> ProgressDistribution:
        ...


def expected_progress(dist: ProgressDistribution) -> float:
    """Expectation over the tokens 0..9, scaled into [0, 1]."""
    tokens = np.arange(PROGRESS_TOKENS, dtype=np.float64)
    return float(tokens @ dist.values) / (PROGRESS_TOKENS - 1)


def progress_vector(provider: ObservationProvider, t: int, num_steps: int) -> np.ndarray:
    """Expected progress for every step of the task at segment ``t``."""
    return np.array(
        [expected_progress(provider.progress_scores(t, i)) for i in range(num_steps)]
    )


def _parse_replay_record(record: Any, num_steps: int | None) -> tuple[int, list[float], list[list[float]]]:
    if not isinstance(record, Mapping):
        raise CorruptReplayFile("replay record must be a JSON object")
    try:
        t = int(record["t"])
        vsg = [float(x) for x in record["vsg"]]
        progress = [[float(x) for x in row] for row in record["progress"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptReplayFile(f"bad replay record: {exc}") from exc
    if t < 0 or len(vsg) < 2:
        raise CorruptReplayFile(f"bad replay record at t={t}")
    steps = len(vsg) - 1
    if num_steps is not None and steps != num_steps:
        raise CorruptReplayFile(f"record at t={t} covers {steps} steps, expected {num_steps}")
    if len(progress) != steps or any(len(row) != PROGRESS_TOKENS for row in progress):
        raise CorruptReplayFile(f"record at t={t} has progress shape != ({steps}, {PROGRESS_TOKENS})")
    return t, vsg, progress


class ReplayProvider:
    """File-backed provider returning previously cached scores bit-exactly."""

    def __init__(self, path: str | Path, *, num_steps: int | None = None):
        self.path = Path(path)
        self._records: dict[int, tuple[list[float], list[list[float]]]] = {}
        try:
            with open(self.path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        record = json.loads(line)
                    except json.JSONDecodeError as exc:
                        raise CorruptReplayFile(f"{self.path}:{lineno}: {exc}") from exc
                    t, vsg, progress = _parse_replay_record(record, num_steps)
                    if num_steps is None:
                        num_steps = len(vsg) - 1
                    self._records[t] = (vsg, progress)
        except OSError as exc:
            raise CorruptReplayFile(f"cannot read replay file {self.path}: {exc}") from exc
        if not self._records:
            raise CorruptReplayFile(f"replay file {self.path} holds no records")
        self.num_steps = num_steps

    @property
    def max_segment(self) -> int:
        return max(self._records)

    def covers(self, num_segments: int) -> bool:
        return all(t in self._records for t in range(num_segments))

    def _get(self, t: int) -> tuple[list[float], list[list[float]]]:
        try:
            return self._records[t]
        except KeyError:
            raise MissingObservation(f"replay file {self.path} has no record for segment {t}") from None

    def vsg_scores(self, t: int) -> ObservationScores:
        vsg, _ = self._get(t)
        return ObservationScores(np.asarray(vsg))

    def progress_scores(self, t: int, step_index: int) -> ProgressDistribution:
        _, progress = self._get(t)
        if not (0 <= step_index < len(progress)):
            raise DimensionMismatch(f"step {step_index} out of range for {len(progress)} steps")
        return ProgressDistribution(np.asarray(progress[step_index]))


def replay_provider(path: str | Path, *, num_steps: int | None = None) -> ReplayProvider:
    return ReplayProvider(path, num_steps=num_steps)


def _two_token_distribution(progress: float) -> np.ndarray:
    """Distribution over tokens 0..9 whose scaled expectation equals ``progress``."""
    value = progress * (PROGRESS_TOKENS - 1)
    low = min(int(math.floor(value)), PROGRESS_TOKENS - 1)
    frac = value - low
    dist = np.zeros(PROGRESS_TOKENS)
    dist[low] = 1.0 - frac
    if frac > 0.0:
        dist[low + 1] = frac
    return dist


class SyntheticOracleProvider:
    """Ground-truth-driven scores with optional label noise.

    Class scores are one-hot on the step covering the segment midpoint
    ("none" when uncovered); with probability ``noise`` the one-hot lands
    on a uniformly random wrong class instead. Progress is the normalized
    completion fraction between a step's first start and last end, clamped
    to [0, 1]. All random draws happen at construction, so repeated lookups
    within a run agree and a fixed seed reproduces across platforms.
    """

    def __init__(
        self,
        annotation: GroundTruthAnnotation,
        timeline: SegmentTimeline,
        num_steps: int,
        *,
        noise: float = 0.0,
        seed: int = 0,
    ):
        if not (0.0 <= noise <= 1.0):
            raise ValueError(f"noise must lie in [0, 1], got {noise}")
        self.annotation = annotation
        self.timeline = timeline
        self.num_steps = num_steps
        total = timeline.num_segments

        truth = np.full(total, num_steps, dtype=np.int64)
        ordered = sorted(annotation.intervals, key=lambda iv: (iv.start_s, iv.end_s, iv.step))
        for t in range(total):
            mid = timeline.midpoint_s(t)
            for iv in ordered:
                if iv.step >= num_steps:
                    raise DimensionMismatch(
                        f"annotation references step {iv.step} but the task has {num_steps} steps"
                    )
                if iv.start_s <= mid < iv.end_s:
                    truth[t] = iv.step
                    break
        self.true_classes = truth

        rng = np.random.default_rng(seed)
        flips = rng.random(total) < noise
        offsets = rng.integers(0, num_steps, size=total)
        labels = truth.copy()
        # Offsets 0..S-1 shifted past the true class cover every wrong
        # class exactly once, keeping the wrong pick uniform.
        wrong = (truth + 1 + offsets) % (num_steps + 1)
        labels[flips] = wrong[flips]
        self.labels = labels

        self._bounds: dict[int, tuple[float, float]] = {}
        for step in annotation.steps_present:
            spans = annotation.intervals_for(step)
            self._bounds[step] = (min(iv.start_s for iv in spans), max(iv.end_s for iv in spans))

    def _check_segment(self, t: int) -> None:
        if not (0 <= t < self.timeline.num_segments):
            raise MissingObservation(f"segment {t} outside timeline of {self.timeline.num_segments}")

    def vsg_scores(self, t: int) -> ObservationScores:
        self._check_segment(t)
        scores = np.zeros(self.num_steps + 1)
        scores[self.labels[t]] = 1.0
        return ObservationScores(scores)

    def true_progress(self, t: int, step_index: int) -> float:
        self._check_segment(t)
        bounds = self._bounds.get(step_index)
        if bounds is None:
            return 0.0
        start, end = bounds
        mid = self.timeline.midpoint_s(t)
        return min(max((mid - start) / (end - start), 0.0), 1.0)

    def progress_scores(self, t: int, step_index: int) -> ProgressDistribution:
        return ProgressDistribution(_two_token_distribution(self.true_progress(t, step_index)))

    def next_step_scores(self, t: int) -> np.ndarray:
        """One-hot on the next annotated step after the segment midpoint."""
        self._check_segment(t)
        mid = self.timeline.midpoint_s(t)
        upcoming = [iv for iv in self.annotation.intervals if iv.start_s > mid]
        scores = np.zeros(self.num_steps + 1)
        if upcoming:
            nxt = min(upcoming, key=lambda iv: (iv.start_s, iv.step))
            scores[nxt.step] = 1.0
        else:
            scores[self.num_steps] = 1.0
        return scores


def synthetic_oracle_provider(
    annotation: GroundTruthAnnotation,
    timeline: SegmentTimeline,
    num_steps: int,
    *,
    noise: float = 0.0,
    seed: int = 0,
) -> SyntheticOracleProvider:
    return SyntheticOracleProvider(annotation, timeline, num_steps, noise=noise, seed=seed)


class SegmentScoreCache:
    """Append-only store of per-segment scores in the replay file format.

    A segment's record hits disk only once its class scores and all per-step
    progress rows are in, so an interrupted run never persists a partial
    segment. Appends are serialized; completed records survive restarts and
    are never re-requested.
    """

    def __init__(self, path: str | Path, num_steps: int):
        self.path = Path(path)
        self.num_steps = num_steps
        self._lock = threading.Lock()
        self._complete: dict[int, tuple[list[float], list[list[float]]]] = {}
        self._pending_vsg: dict[int, list[float]] = {}
        self._pending_progress: dict[int, dict[int, list[float]]] = {}
        if self.path.exists():
            self._load_existing()

    def _load_existing(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            lines = fh.readlines()
        kept: list[str] = []
        for lineno, line in enumerate(lines):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                t, vsg, progress = _parse_replay_record(json.loads(stripped), self.num_steps)
            except (json.JSONDecodeError, CorruptReplayFile) as exc:
                # Only a crash mid-append may leave a bad trailing line;
                # anything earlier means the file is not ours to repair.
                if lineno == len(lines) - 1:
                    break
                raise CorruptReplayFile(f"{self.path}:{lineno + 1}: {exc}") from exc
            self._complete[t] = (vsg, progress)
            kept.append(json.dumps({"t": t, "vsg": vsg, "progress": progress}) + "\n")
        if len(kept) != len([ln for ln in lines if ln.strip()]):
            with open(self.path, "w", encoding="utf-8") as fh:
                fh.writelines(kept)

    def completed(self, t: int) -> bool:
        return t in self._complete

    def completed_segments(self) -> list[int]:
        return sorted(self._complete)

    def get_vsg(self, t: int) -> ObservationScores:
        return ObservationScores(np.asarray(self._complete[t][0]))

    def get_progress(self, t: int, step_index: int) -> ProgressDistribution:
        return ProgressDistribution(np.asarray(self._complete[t][1][step_index]))

    def record_vsg(self, t: int, scores: ObservationScores) -> None:
        with self._lock:
            if t in self._complete:
                return
            self._pending_vsg[t] = scores.to_list()
            self._maybe_flush(t)

    def record_progress(self, t: int, step_index: int, dist: ProgressDistribution) -> None:
        with self._lock:
            if t in self._complete:
                return
            self._pending_progress.setdefault(t, {})[step_index] = dist.to_list()
            self._maybe_flush(t)

    def _maybe_flush(self, t: int) -> None:
        vsg = self._pending_vsg.get(t)
        progress = self._pending_progress.get(t, {})
        if vsg is None or len(progress) < self.num_steps:
            return
        rows = [progress[i] for i in range(self.num_steps)]
        record = {"t": t, "vsg": vsg, "progress": rows}
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")
            fh.flush()
        self._complete[t] = (vsg, rows)
        self._pending_vsg.pop(t, None)
        self._pending_progress.pop(t, None)


def write_replay_file(
    path: str | Path,
    records: Iterable[tuple[int, ObservationScores, list[ProgressDistribution]]],
) -> None:
    """Write a replay file from in-memory scores (mainly for tests and tools)."""
    with open(path, "w", encoding="utf-8") as fh:
        for t, scores, rows in records:
            record = {
                "t": int(t),
                "vsg": scores.to_list(),
                "progress": [row.to_list() for row in rows],
            }
            fh.write(json.dumps(record) + "\n")
