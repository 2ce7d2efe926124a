"""Independent oracles and synthetic data generators shared by the tests.

The oracles deliberately avoid the library's own computation paths: the
posterior oracle sums over explicit state paths, and the convolution
oracle indexes reflected samples by hand.
"""

from __future__ import annotations

import itertools

import numpy as np

from stepgrounder.core import (
    GroundTruthAnnotation,
    SegmentTimeline,
    StepInterval,
    TaskSpec,
)
from stepgrounder.localization import log_kernel


def brute_force_posteriors(transitions, observations, initial=None):
    """Marginal posteriors by exhaustive path enumeration.

    For each prefix length k, sums ``init[x0] * prod T_i[x_{i-1}, x_i] *
    obs_i[x_i]`` over every state path ``x_0..x_k`` and normalizes the
    marginal over ``x_k``.
    """
    transitions = [np.asarray(t, dtype=np.float64) for t in transitions]
    observations = [np.asarray(o, dtype=np.float64) for o in observations]
    num_states = observations[0].shape[0]
    init = (
        np.full(num_states, 1.0 / num_states)
        if initial is None
        else np.asarray(initial, dtype=np.float64)
    )
    out = []
    for k in range(1, len(observations) + 1):
        paths = np.array(list(itertools.product(range(num_states), repeat=k + 1)))
        weights = init[paths[:, 0]].astype(np.float64)
        for i in range(1, k + 1):
            weights = weights * transitions[i - 1][paths[:, i - 1], paths[:, i]]
            weights = weights * observations[i - 1][paths[:, i]]
        marginal = np.zeros(num_states)
        np.add.at(marginal, paths[:, k], weights)
        out.append(marginal / marginal.sum())
    return out


def _reflect(i: int, n: int) -> int:
    if n == 1:
        return 0
    period = 2 * n - 2
    m = i % period
    return m if m < n else period - m


def direct_log_response(signal, sigma):
    """O(n * k) convolution with hand-rolled reflected indexing."""
    sig = np.asarray(signal, dtype=np.float64)
    n = sig.shape[0]
    if n == 1:
        return np.zeros(1)
    kernel = log_kernel(sigma)
    radius = (kernel.shape[0] - 1) // 2
    out = np.zeros(n)
    for x in range(n):
        acc = 0.0
        for u in range(-radius, radius + 1):
            acc += kernel[u + radius] * sig[_reflect(x + u, n)]
        out[x] = acc * sigma * sigma
    return out


def make_task(num_steps: int, task_id: str = "task", goal: str = "Do the Thing") -> TaskSpec:
    return TaskSpec(
        task_id=task_id,
        goal=goal,
        steps=tuple(f"perform step {i + 1}" for i in range(num_steps)),
    )


def make_chain_video(
    rng: np.random.Generator,
    *,
    video_id: str,
    task: TaskSpec,
    segs_per_step: tuple[int, int] = (4, 10),
    segment_duration_s: float = 2.0,
    trailing_background_segments: int = 0,
):
    """A video running the task's steps in order, contiguously.

    Returns (annotation, timeline); interval boundaries sit on segment
    boundaries so the covering step of every segment midpoint is exact.
    """
    lo, hi = segs_per_step
    cursor = 0
    intervals = []
    for s in range(task.num_steps):
        length = int(rng.integers(lo, hi + 1))
        intervals.append(
            StepInterval(
                step=s,
                start_s=cursor * segment_duration_s,
                end_s=(cursor + length) * segment_duration_s,
            )
        )
        cursor += length
    total = cursor + trailing_background_segments
    annotation = GroundTruthAnnotation(
        video_id=video_id,
        task_id=task.task_id,
        length_s=total * segment_duration_s,
        intervals=tuple(intervals),
    )
    timeline = SegmentTimeline(
        video_id=video_id,
        segment_duration_s=segment_duration_s,
        num_segments=total,
    )
    return annotation, timeline


def random_simplex(rng: np.random.Generator, size: int) -> np.ndarray:
    raw = rng.random(size) + 1e-9
    return raw / raw.sum()


def random_row_stochastic(rng: np.random.Generator, size: int) -> np.ndarray:
    raw = rng.random((size, size)) + 1e-9
    return raw / raw.sum(axis=1, keepdims=True)


def dump_replay(path, provider, num_segments: int, num_steps: int) -> None:
    from stepgrounder.observation.providers import write_replay_file

    records = []
    for t in range(num_segments):
        vsg = provider.vsg_scores(t)
        rows = [provider.progress_scores(t, i) for i in range(num_steps)]
        records.append((t, vsg, rows))
    write_replay_file(path, records)


def write_dataset(
    root,
    *,
    num_tasks: int = 2,
    videos_per_task: int = 2,
    num_steps: int = 4,
    seed: int = 0,
    noise: float = 0.0,
    with_replay: bool = True,
    with_deps: bool = False,
):
    """Write a small synthetic dataset under ``root``; returns the manifest path."""
    import json
    from pathlib import Path

    from stepgrounder.core import save_annotation, save_task
    from stepgrounder.dependency import build_dependency_chain_oracle, save_dependency
    from stepgrounder.observation.providers import SyntheticOracleProvider

    root = Path(root)
    for sub in ("tasks", "annotations", "replay", "deps"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for k in range(num_tasks):
        task = make_task(num_steps, task_id=f"task{k}", goal=f"Complete procedure {k}")
        save_task(root / "tasks" / f"{task.task_id}.json", task)
        dep_written = False
        for v in range(videos_per_task):
            video_id = f"{task.task_id}_v{v}"
            annotation, timeline = make_chain_video(rng, video_id=video_id, task=task)
            save_annotation(root / "annotations" / f"{video_id}.json", annotation)
            entry = {
                "task": f"tasks/{task.task_id}.json",
                "annotation": f"annotations/{video_id}.json",
            }
            if with_replay:
                provider = SyntheticOracleProvider(
                    annotation, timeline, num_steps, noise=noise, seed=seed + 100 + v
                )
                dump_replay(
                    root / "replay" / f"{video_id}.jsonl",
                    provider,
                    timeline.num_segments,
                    num_steps,
                )
                entry["replay"] = f"replay/{video_id}.jsonl"
            if with_deps and not dep_written:
                dep = build_dependency_chain_oracle(annotation, num_steps)
                save_dependency(root / "deps" / f"{task.task_id}.json", dep)
                dep_written = True
            if with_deps:
                entry["dependency"] = f"deps/{task.task_id}.json"
            entries.append(entry)
    manifest = root / "manifest.json"
    manifest.write_text(json.dumps({"videos": entries}, indent=2), encoding="utf-8")
    return manifest
