"""Temporal segment extraction from per-step belief signals.

Each step's belief column is treated as a 1-D signal. Scale-normalized
Laplacian-of-Gaussian responses across a bank of scales give a
(position x scale) stack whose local maxima (of the negated response)
mark contiguous high-belief regions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, NamedTuple, Sequence

import numpy as np

from .core import AlignmentMatrix
from .errors import MalformedRecord

SQRT2 = math.sqrt(2.0)

DEFAULT_RESPONSE_THRESHOLD = 1e-3
DEFAULT_NMS_IOU = 0.5

#: Candidates whose extent hangs further outside the signal than this
#: fraction respond to reflected copies rather than the signal itself.
OUT_OF_WINDOW_MAX = 0.25


@dataclass(frozen=True)
class ScaleSet:
    """Bank of Gaussian standard deviations, in segment-index units."""

    sigmas: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        if not self.sigmas:
            raise ValueError("scale set must not be empty")
        if any(s <= 0.0 for s in self.sigmas):
            raise ValueError("scales must be positive")
        if any(b <= a for a, b in zip(self.sigmas, self.sigmas[1:])):
            raise ValueError("scales must be strictly increasing")

    @classmethod
    def logarithmic(cls, low: float = 1.0, high: float = 480.0, count: int = 13) -> "ScaleSet":
        values = np.geomspace(low, high, count)
        values[0], values[-1] = low, high
        return cls(tuple(values))

    @classmethod
    def linear(cls, low: float = 1.0, high: float = 480.0, count: int = 13) -> "ScaleSet":
        values = np.linspace(low, high, count)
        return cls(tuple(values))


def default_scales() -> ScaleSet:
    return ScaleSet.logarithmic()


class Blob(NamedTuple):
    center: int
    sigma: float
    response: float


@dataclass(frozen=True)
class DetectedSegment:
    """One localized step occurrence; confidence is the mean belief inside it."""

    step_index: int
    start_s: float
    end_s: float
    confidence: float

    def __post_init__(self) -> None:
        if self.start_s >= self.end_s:
            raise MalformedRecord("start_s/end_s", f"need start < end, got [{self.start_s}, {self.end_s}]")

    def to_dict(self) -> dict[str, Any]:
        return {
            "step": self.step_index,
            "start_s": self.start_s,
            "end_s": self.end_s,
            "confidence": self.confidence,
        }


def log_kernel(sigma: float) -> np.ndarray:
    """Sampled Laplacian-of-Gaussian kernel, truncated at 4 sigma.

    The kernel is shifted to sum exactly to zero so constant signals are
    annihilated despite truncation.
    """
    if sigma <= 0.0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    radius = max(1, int(math.ceil(4.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    gauss = np.exp(-(x * x) / (2.0 * sigma * sigma))
    gauss /= gauss.sum()
    kernel = (x * x - sigma * sigma) / sigma**4 * gauss
    kernel -= kernel.mean()
    return kernel


def _reflect_index(i: int, n: int) -> int:
    """Mirror-without-edge-repeat index, valid for any i (multi-bounce)."""
    if n == 1:
        return 0
    period = 2 * n - 2
    m = i % period
    return m if m < n else period - m


def log_response(signal: Sequence[float] | np.ndarray, sigma: float) -> np.ndarray:
    """Scale-normalized LoG response ``sigma^2 * (signal * LoG_sigma)``.

    The signal is reflect-padded (no edge repeat) so the response has the
    same length as the input.
    """
    sig = np.asarray(signal, dtype=np.float64)
    if sig.ndim != 1 or sig.shape[0] < 1:
        raise ValueError(f"signal must be a non-empty 1-D vector, got shape {sig.shape}")
    n = sig.shape[0]
    if n == 1:
        return np.zeros(1)
    kernel = log_kernel(sigma)
    radius = (kernel.shape[0] - 1) // 2
    padded = np.pad(sig, radius, mode="reflect")
    response = np.convolve(padded, kernel, mode="valid")
    return sigma * sigma * response


def detect_blobs(
    signal: Sequence[float] | np.ndarray,
    scales: ScaleSet | None = None,
    *,
    response_threshold: float = DEFAULT_RESPONSE_THRESHOLD,
    nms_iou: float = DEFAULT_NMS_IOU,
) -> list[Blob]:
    """Find blob centers in a [0, 1] signal across the scale bank.

    Candidates are points dominating their 3x3 (position x scale)
    neighborhood in the negated response stack and exceeding
    ``response_threshold``; overlapping candidates are pruned by
    response-ordered non-maximum suppression at interval IoU above
    ``nms_iou``. Equal-valued plateaus yield one candidate (the first in
    scan order), and the two position-border columns are excluded since
    reflect padding makes their neighborhoods degenerate. The result is
    deterministic for identical input.
    """
    sig = np.asarray(signal, dtype=np.float64)
    if sig.ndim != 1:
        raise ValueError(f"signal must be 1-D, got shape {sig.shape}")
    if sig.size and (sig.min() < -1e-9 or sig.max() > 1.0 + 1e-9):
        raise ValueError("signal entries must lie in [0, 1]")
    bank = scales or default_scales()
    n = sig.shape[0]
    if n == 0:
        return []
    # Scales whose blob extent exceeds the whole signal cannot localize
    # anything inside it and only respond to reflection structure; keep at
    # least the finest scale so short signals still get scanned.
    sigmas = [s for s in bank.sigmas if 2.0 * SQRT2 * s <= n] or [bank.sigmas[0]]
    stack = np.stack([-log_response(sig, s) for s in sigmas])

    padded = np.full((stack.shape[0] + 2, n + 2), -np.inf)
    padded[1:-1, 1:-1] = stack
    # Dominance: >= over neighbors after this point in scan order, strict >
    # over neighbors before it, so a flat plateau yields exactly one peak.
    earlier = ((0, 0), (0, 1), (0, 2), (1, 0))
    later = ((1, 2), (2, 0), (2, 1), (2, 2))
    is_peak = stack > response_threshold
    for ds, dx in earlier:
        is_peak &= stack > padded[ds : ds + stack.shape[0], dx : dx + n]
    for ds, dx in later:
        is_peak &= stack >= padded[ds : ds + stack.shape[0], dx : dx + n]
    if n >= 3:
        is_peak[:, 0] = False
        is_peak[:, n - 1] = False

    candidates = []
    for s, x in zip(*np.nonzero(is_peak)):
        blob = Blob(center=int(x), sigma=sigmas[s], response=float(stack[s, x]))
        lo, hi = _blob_interval(blob)
        outside = max(0.0, -lo) + max(0.0, hi - n)
        if outside / (hi - lo) > OUT_OF_WINDOW_MAX:
            continue
        candidates.append(blob)
    kept = suppress_overlapping(candidates, nms_iou)
    return sorted(kept, key=lambda b: (b.center, b.sigma))


def _blob_interval(blob: Blob) -> tuple[float, float]:
    extent = SQRT2 * blob.sigma
    return blob.center - extent, blob.center + extent


def _interval_iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0.0:
        return 0.0
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union


def suppress_overlapping(blobs: Sequence[Blob], iou_threshold: float = DEFAULT_NMS_IOU) -> list[Blob]:
    """Greedy non-maximum suppression by descending response; idempotent."""
    ordered = sorted(blobs, key=lambda b: (-b.response, b.center, b.sigma))
    kept: list[Blob] = []
    for blob in ordered:
        span = _blob_interval(blob)
        if all(_interval_iou(span, _blob_interval(k)) <= iou_threshold for k in kept):
            kept.append(blob)
    return kept


def blobs_to_segments(
    blobs: Sequence[Blob],
    step_index: int,
    belief_column: Sequence[float] | np.ndarray,
    segment_duration_s: float,
) -> list[DetectedSegment]:
    """Convert blobs to timed segments spanning ``center +- sqrt(2) * sigma``.

    Extents are clamped to the signal range before conversion to seconds;
    confidence is the mean of ``belief_column`` over the covered segment
    indices.
    """
    column = np.asarray(belief_column, dtype=np.float64)
    total = column.shape[0]
    segments: list[DetectedSegment] = []
    for blob in blobs:
        lo, hi = _blob_interval(blob)
        lo = max(lo, 0.0)
        hi = min(hi, float(total))
        first = min(max(int(math.ceil(lo)), 0), total - 1)
        last = min(max(int(math.floor(hi)), first), total - 1)
        confidence = float(column[first : last + 1].mean())
        segments.append(
            DetectedSegment(
                step_index=step_index,
                start_s=lo * segment_duration_s,
                end_s=hi * segment_duration_s,
                confidence=confidence,
            )
        )
    return segments


def localize(
    alignment: AlignmentMatrix,
    segment_duration_s: float,
    *,
    scales: ScaleSet | None = None,
    response_threshold: float = DEFAULT_RESPONSE_THRESHOLD,
    nms_iou: float = DEFAULT_NMS_IOU,
) -> list[DetectedSegment]:
    """Detect segments for every step column (the "none" column is skipped)."""
    out: list[DetectedSegment] = []
    for step in range(alignment.num_steps):
        column = np.clip(alignment.step_column(step), 0.0, 1.0)
        blobs = detect_blobs(
            column, scales, response_threshold=response_threshold, nms_iou=nms_iou
        )
        out.extend(blobs_to_segments(blobs, step, column, segment_duration_s))
    return sorted(out, key=lambda seg: (seg.step_index, seg.start_s, seg.end_s))


def save_detections(path: str | Path, detections: Sequence[DetectedSegment]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([d.to_dict() for d in detections], fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_detections(path: str | Path) -> list[DetectedSegment]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return [
        DetectedSegment(
            step_index=int(entry["step"]),
            start_s=float(entry["start_s"]),
            end_s=float(entry["end_s"]),
            confidence=float(entry["confidence"]),
        )
        for entry in raw
    ]
