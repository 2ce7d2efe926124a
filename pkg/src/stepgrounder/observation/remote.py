"""Remote model endpoint client with first-token log-probability scoring.

Options are scored by asking for one generated token with per-token
log-probabilities, reading the log-probability of each option label's
first token, and softmaxing over exactly those candidates. Two wire
dialects are built in: ``"chat"`` (chat-completions style, media passed
as a content part) and ``"completions"`` (legacy prompt style).
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import httpx
import numpy as np

from ..core import ObservationScores, ProgressDistribution, SegmentTimeline, TaskSpec
from ..errors import (
    ConfigurationError,
    LabelTokenCollision,
    LogitsUnavailable,
    MalformedProviderResponse,
    ProviderUnavailable,
)
from .prompts import (
    build_binary_vsg_prompt,
    build_next_step_prompt,
    build_prereq_prompt,
    build_progress_prompt,
    build_vsg_prompt,
    vsg_option_labels,
)
from .providers import SegmentScoreCache

logger = logging.getLogger(__name__)

DIALECTS = ("chat", "completions")
DIGIT_TOKENS = tuple(str(d) for d in range(10))

_RETRYABLE_STATUS = frozenset({408, 425, 429, 500, 502, 503, 504})


@dataclass(frozen=True)
class RemoteEndpointConfig:
    """Connection and scoring parameters for the model endpoint."""

    base_url: str
    model: str
    auth_env: str | None = None
    max_concurrent: int = 4
    timeout_s: float = 60.0
    retries: int = 2
    retry_backoff_s: float = 0.5
    frames_per_segment: int = 8
    dialect: str = "chat"
    top_logprobs: int = 20
    fallback_samples: int = 5

    def __post_init__(self) -> None:
        if self.timeout_s <= 0.0:
            raise ConfigurationError("timeout_s must be > 0")
        if self.max_concurrent < 1:
            raise ConfigurationError("max_concurrent must be >= 1")
        if self.dialect not in DIALECTS:
            raise ConfigurationError(f"dialect must be one of {DIALECTS}, got {self.dialect!r}")
        if self.retries < 0 or self.frames_per_segment < 1 or self.top_logprobs < 1:
            raise ConfigurationError("retries, frames_per_segment and top_logprobs must be sensible")


def restricted_softmax(logprobs: Sequence[float]) -> np.ndarray:
    """Softmax over the given candidates only; overflow-safe; -inf means excluded."""
    arr = np.asarray(logprobs, dtype=np.float64)
    finite = np.isfinite(arr)
    if not finite.any():
        raise MalformedProviderResponse("no candidate token received any log-probability")
    shifted = arr - arr[finite].max()
    weights = np.where(finite, np.exp(shifted), 0.0)
    return weights / weights.sum()


class RemoteScoringClient:
    """Thread-safe HTTP client enforcing the configured request concurrency."""

    def __init__(self, config: RemoteEndpointConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        self._semaphore = threading.BoundedSemaphore(config.max_concurrent)
        self._client = httpx.Client(
            base_url=config.base_url,
            timeout=config.timeout_s,
            transport=transport,
        )

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "RemoteScoringClient":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    # ------------------------------------------------------------------ wire

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.auth_env:
            token = os.environ.get(self.config.auth_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def _endpoint(self) -> str:
        return "/chat/completions" if self.config.dialect == "chat" else "/completions"

    def _post(self, payload: Mapping[str, Any]) -> dict[str, Any]:
        last_error: Exception | None = None
        for attempt in range(self.config.retries + 1):
            if attempt:
                time.sleep(self.config.retry_backoff_s * (2 ** (attempt - 1)))
            try:
                with self._semaphore:
                    response = self._client.post(self._endpoint(), json=payload, headers=self._headers())
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if response.status_code in _RETRYABLE_STATUS:
                last_error = ProviderUnavailable(f"endpoint answered {response.status_code}")
                continue
            if response.status_code != 200:
                raise MalformedProviderResponse(
                    f"endpoint answered {response.status_code}", payload=response.text
                )
            try:
                return response.json()
            except ValueError as exc:
                raise MalformedProviderResponse("response is not JSON", payload=response.text) from exc
        raise ProviderUnavailable(f"endpoint unreachable after {self.config.retries + 1} attempts: {last_error}")

    def _payload(
        self,
        prompt: str,
        media: Mapping[str, Any] | None,
        *,
        max_tokens: int,
        temperature: float = 0.0,
        want_logprobs: bool = True,
    ) -> dict[str, Any]:
        cfg = self.config
        if cfg.dialect == "chat":
            content: list[dict[str, Any]] = [{"type": "text", "text": prompt}]
            if media is not None:
                content.append({"type": "video_url", "video_url": dict(media)})
            payload: dict[str, Any] = {
                "model": cfg.model,
                "messages": [{"role": "user", "content": content}],
                "max_tokens": max_tokens,
                "temperature": temperature,
            }
            if want_logprobs:
                payload["logprobs"] = True
                payload["top_logprobs"] = cfg.top_logprobs
        else:
            payload = {
                "model": cfg.model,
                "prompt": prompt,
                "max_tokens": max_tokens,
                "temperature": temperature,
            }
            if media is not None:
                payload["media"] = dict(media)
            if want_logprobs:
                payload["logprobs"] = cfg.top_logprobs
        return payload

    # -------------------------------------------------------- extraction

    def _position_tables(self, response: Mapping[str, Any]) -> list[dict[str, float]]:
        """token -> logprob per generated position, merging the chosen token in."""
        try:
            choice = response["choices"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedProviderResponse("response has no choices", payload=response) from exc
        logprobs = choice.get("logprobs")
        if not logprobs:
            raise LogitsUnavailable("endpoint returned no log-probabilities")
        tables: list[dict[str, float]] = []
        if self.config.dialect == "chat":
            content = logprobs.get("content")
            if not content:
                raise LogitsUnavailable("chat response lacks logprobs.content")
            for entry in content:
                table: dict[str, float] = {}
                for alt in entry.get("top_logprobs", []):
                    table[str(alt["token"])] = float(alt["logprob"])
                if "token" in entry and "logprob" in entry:
                    table.setdefault(str(entry["token"]), float(entry["logprob"]))
                tables.append(table)
        else:
            top = logprobs.get("top_logprobs")
            if not top:
                raise LogitsUnavailable("completions response lacks logprobs.top_logprobs")
            tokens = logprobs.get("tokens", [])
            token_lps = logprobs.get("token_logprobs", [])
            for pos, entry in enumerate(top):
                table = {str(tok): float(lp) for tok, lp in dict(entry).items()}
                if pos < len(tokens) and pos < len(token_lps) and token_lps[pos] is not None:
                    table.setdefault(str(tokens[pos]), float(token_lps[pos]))
                tables.append(table)
        if not tables:
            raise LogitsUnavailable("no scored positions in response")
        return tables

    def _generated_text(self, response: Mapping[str, Any]) -> str:
        try:
            choice = response["choices"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedProviderResponse("response has no choices", payload=response) from exc
        if self.config.dialect == "chat":
            message = choice.get("message") or {}
            return str(message.get("content", ""))
        return str(choice.get("text", ""))

    # ----------------------------------------------------------- scoring

    @staticmethod
    def _match_token(label: str, table: Mapping[str, float]) -> tuple[str, float] | None:
        candidates = [label, " " + label]
        if len(label) > 1:
            candidates += [label[0], " " + label[0]]
        for cand in candidates:
            if cand in table:
                return cand, table[cand]
        return None

    def score_options(
        self, prompt: str, labels: Sequence[str], media: Mapping[str, Any] | None = None
    ) -> np.ndarray:
        """Probability simplex over ``labels`` from first-token log-probabilities."""
        response = self._post(self._payload(prompt, media, max_tokens=1))
        table = self._position_tables(response)[0]
        matched: dict[str, str] = {}
        logprobs = np.full(len(labels), -np.inf)
        collided: set[str] = set()
        for idx, label in enumerate(labels):
            hit = self._match_token(label, table)
            if hit is None:
                continue
            token, lp = hit
            if token in matched:
                collided.update((matched[token], label))
            matched[token] = label
            logprobs[idx] = lp
        if collided:
            logger.warning(
                "option labels %s share a first token; re-querying with full-label scoring",
                sorted(collided),
            )
            return self._score_options_full_label(prompt, labels, media)
        return restricted_softmax(logprobs)

    def _score_options_full_label(
        self, prompt: str, labels: Sequence[str], media: Mapping[str, Any] | None
    ) -> np.ndarray:
        """Collision fallback: score each label by its full continuation.

        The model is re-asked to answer with the complete label; each label
        is scored by greedily consuming its characters along the returned
        per-position candidate tokens and summing their log-probabilities.
        Labels that cannot be consumed are excluded. Never silent: the
        caller logged the collision before getting here.
        """
        amended = prompt + "\nRespond with the full label of the correct option."
        max_tokens = max(len(label) for label in labels) + 1
        response = self._post(self._payload(amended, media, max_tokens=max_tokens))
        tables = self._position_tables(response)
        logprobs = np.full(len(labels), -np.inf)
        for idx, label in enumerate(labels):
            total = 0.0
            remaining = label
            consumed_any = False
            for pos, table in enumerate(tables):
                if not remaining:
                    break
                best: tuple[str, float] | None = None
                for token, lp in table.items():
                    stripped = token.lstrip() if (pos == 0 and not consumed_any) else token
                    if stripped and remaining.startswith(stripped):
                        if best is None or len(stripped) > len(best[0]):
                            best = (stripped, lp)
                if best is None:
                    break
                total += best[1]
                remaining = remaining[len(best[0]):]
                consumed_any = True
            if not remaining and consumed_any:
                logprobs[idx] = total
        if not np.isfinite(logprobs).any():
            raise LabelTokenCollision(tuple(labels))
        return restricted_softmax(logprobs)

    def digit_distribution(self, prompt: str, media: Mapping[str, Any] | None = None) -> np.ndarray:
        """Simplex over the ten digit tokens from the first generated token."""
        response = self._post(self._payload(prompt, media, max_tokens=1))
        table = self._position_tables(response)[0]
        logprobs = np.full(len(DIGIT_TOKENS), -np.inf)
        for idx, digit in enumerate(DIGIT_TOKENS):
            hit = self._match_token(digit, table)
            if hit is not None:
                logprobs[idx] = hit[1]
        return restricted_softmax(logprobs)

    def yes_probability(self, prompt: str, media: Mapping[str, Any] | None = None) -> float:
        """P("Yes") over the Yes/No pair; samples answers when logits are unavailable."""
        try:
            response = self._post(self._payload(prompt, media, max_tokens=1))
            table = self._position_tables(response)[0]
        except LogitsUnavailable:
            return self._sampled_yes_probability(prompt, media)
        logprobs = []
        for word in ("Yes", "No"):
            hit = self._match_token(word, table)
            if hit is None:
                hit = self._match_token(word.lower(), table)
            logprobs.append(hit[1] if hit is not None else -np.inf)
        return float(restricted_softmax(logprobs)[0])

    def _sampled_yes_probability(self, prompt: str, media: Mapping[str, Any] | None) -> float:
        # Documented degradation: answer frequency over a handful of samples.
        logger.warning("endpoint cannot return logits; falling back to sampled Yes/No frequency")
        k = self.config.fallback_samples
        yes = 0
        for _ in range(k):
            response = self._post(
                self._payload(prompt, media, max_tokens=3, temperature=1.0, want_logprobs=False)
            )
            text = self._generated_text(response).strip().lower()
            if text.startswith("yes"):
                yes += 1
        return yes / k


def _segment_media(
    media_reference: str | None, timeline: SegmentTimeline | None, t: int, frames: int
) -> dict[str, Any] | None:
    if media_reference is None:
        return None
    payload: dict[str, Any] = {"url": media_reference, "frames_per_segment": frames}
    if timeline is not None:
        payload["segment_start_s"] = timeline.start_s(t)
        payload["segment_end_s"] = timeline.start_s(t + 1)
    return payload


class RemoteObservationProvider:
    """Scores segments through the endpoint, caching every response.

    ``prompt_mode`` selects between the single multi-choice query per
    segment (default) and the binary per-step variant, which costs S
    queries per segment. In binary mode the "none" score is the product of
    the per-step "No" probabilities, renormalized with the rest.
    """

    def __init__(
        self,
        client: RemoteScoringClient,
        task: TaskSpec,
        media_reference: str | None,
        timeline: SegmentTimeline | None = None,
        cache: SegmentScoreCache | None = None,
        prompt_mode: str = "multi-choice",
    ):
        if prompt_mode not in ("multi-choice", "binary"):
            raise ConfigurationError(f"prompt_mode must be 'multi-choice' or 'binary', got {prompt_mode!r}")
        self.client = client
        self.task = task
        self.media_reference = media_reference
        self.timeline = timeline
        self.cache = cache
        self.prompt_mode = prompt_mode
        self._vsg_prompt = build_vsg_prompt(task)
        self._labels = vsg_option_labels(task)

    def _media(self, t: int) -> dict[str, Any] | None:
        return _segment_media(
            self.media_reference, self.timeline, t, self.client.config.frames_per_segment
        )

    def vsg_scores(self, t: int) -> ObservationScores:
        if self.cache is not None and self.cache.completed(t):
            return self.cache.get_vsg(t)
        if self.prompt_mode == "binary":
            probs = np.array(
                [
                    self.client.yes_probability(build_binary_vsg_prompt(self.task, i), self._media(t))
                    for i in range(self.task.num_steps)
                ]
            )
            weights = np.append(probs, np.prod(1.0 - probs))
            total = float(weights.sum())
            values = weights / total if total > 0.0 else np.full(len(weights), 1.0 / len(weights))
            scores = ObservationScores(values)
        else:
            scores = ObservationScores(
                self.client.score_options(self._vsg_prompt, self._labels, self._media(t))
            )
        if self.cache is not None:
            self.cache.record_vsg(t, scores)
        return scores

    def progress_scores(self, t: int, step_index: int) -> ProgressDistribution:
        if self.cache is not None and self.cache.completed(t):
            return self.cache.get_progress(t, step_index)
        dist = ProgressDistribution(
            self.client.digit_distribution(build_progress_prompt(self.task, step_index), self._media(t))
        )
        if self.cache is not None:
            self.cache.record_progress(t, step_index, dist)
        return dist

    def next_step_scores(self, t: int) -> np.ndarray:
        return self.client.score_options(build_next_step_prompt(self.task), self._labels, self._media(t))


class RemotePrerequisiteScorer:
    """Scores "must j precede i" questions through the endpoint (text only)."""

    def __init__(self, client: RemoteScoringClient):
        self.client = client

    def prerequisite_probability(self, task: TaskSpec, step_index: int, prerequisite_index: int) -> float:
        return self.client.yes_probability(build_prereq_prompt(task, step_index, prerequisite_index))


def score_segment_remote(
    config: RemoteEndpointConfig,
    task: TaskSpec,
    media_reference: str | None,
    *,
    timeline: SegmentTimeline | None = None,
    t: int = 0,
) -> ObservationScores:
    """One-shot multi-choice scoring of a single segment."""
    with RemoteScoringClient(config) as client:
        provider = RemoteObservationProvider(client, task, media_reference, timeline)
        return provider.vsg_scores(t)


def progress_segment_remote(
    config: RemoteEndpointConfig,
    task: TaskSpec,
    step_index: int,
    media_reference: str | None,
    *,
    timeline: SegmentTimeline | None = None,
    t: int = 0,
) -> ProgressDistribution:
    """One-shot progress scoring of a single (segment, step) pair."""
    with RemoteScoringClient(config) as client:
        provider = RemoteObservationProvider(client, task, media_reference, timeline)
        return provider.progress_scores(t, step_index)
