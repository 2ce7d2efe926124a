from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stepgrounder.core import (
    GroundTruthAnnotation,
    ObservationScores,
    ProgressDistribution,
    SegmentTimeline,
    StepInterval,
)
from stepgrounder.errors import CorruptReplayFile, MissingObservation
from stepgrounder.observation import (
    NONE_OPTION_TEXT,
    SegmentScoreCache,
    build_binary_vsg_prompt,
    build_next_step_prompt,
    build_prereq_prompt,
    build_progress_prompt,
    build_vsg_prompt,
    expected_progress,
    index_to_label,
    label_to_index,
    render_options,
    replay_provider,
    synthetic_oracle_provider,
    vsg_option_labels,
    write_replay_file,
)

from helpers import make_chain_video, make_task


class TestLabels:
    def test_basic_sequence(self):
        assert [index_to_label(i) for i in (0, 1, 25, 26, 27, 51, 52)] == [
            "A",
            "B",
            "Z",
            "AA",
            "AB",
            "AZ",
            "BA",
        ]

    def test_round_trip(self):
        for i in range(0, 900, 7):
            assert label_to_index(index_to_label(i)) == i

    def test_rejects_bad_labels(self):
        with pytest.raises(ValueError):
            label_to_index("a1")
        with pytest.raises(ValueError):
            index_to_label(-1)


class TestPrompts:
    def test_vsg_golden(self, latte_task, golden_dir):
        golden = (golden_dir / "vsg_prompt_latte.txt").read_text(encoding="utf-8")
        assert build_vsg_prompt(latte_task) == golden

    def test_vsg_golden_27_steps(self, golden_dir):
        from stepgrounder.core import TaskSpec

        task = TaskSpec(
            task_id="cabinet",
            goal="Assemble the Cabinet",
            steps=tuple(f"step {i + 1:02d}" for i in range(27)),
        )
        golden = (golden_dir / "vsg_prompt_27steps.txt").read_text(encoding="utf-8")
        assert build_vsg_prompt(task) == golden
        labels = vsg_option_labels(task)
        assert labels[26] == "AA"
        assert labels[27] == "AB"

    def test_progress_golden(self, latte_task, golden_dir):
        golden = (golden_dir / "progress_prompt_latte.txt").read_text(encoding="utf-8")
        assert build_progress_prompt(latte_task, 1) == golden

    def test_prereq_golden(self, latte_task, golden_dir):
        golden = (golden_dir / "prereq_prompt_latte.txt").read_text(encoding="utf-8")
        assert build_prereq_prompt(latte_task, 2, 0) == golden

    def test_binary_golden(self, latte_task, golden_dir):
        golden = (golden_dir / "binary_vsg_prompt_latte.txt").read_text(encoding="utf-8")
        assert build_binary_vsg_prompt(latte_task, 0) == golden

    def test_next_step_golden(self, latte_task, golden_dir):
        golden = (golden_dir / "next_step_prompt_latte.txt").read_text(encoding="utf-8")
        assert build_next_step_prompt(latte_task) == golden

    def test_two_step_option_labels(self):
        task = make_task(2)
        block = render_options(task)
        assert block.splitlines()[-1] == f"C. {NONE_OPTION_TEXT}"

    def test_quotes_rendered_unescaped(self):
        from stepgrounder.core import TaskSpec

        task = TaskSpec(task_id="q", goal='say "hi"', steps=('shout "hello"',))
        assert 'say "hi"' in build_vsg_prompt(task)
        assert 'shout "hello"' in build_progress_prompt(task, 0)

    def test_empty_goal_still_renders(self):
        from stepgrounder.core import TaskSpec

        task = TaskSpec(task_id="e", goal="", steps=("only step",))
        prompt = build_vsg_prompt(task)
        assert prompt.startswith("You are watching a video segment of someone attempting to .")


class TestExpectedProgress:
    def test_one_hot_extremes(self):
        top = np.zeros(10)
        top[9] = 1.0
        assert expected_progress(ProgressDistribution(top)) == 1.0
        bottom = np.zeros(10)
        bottom[0] = 1.0
        assert expected_progress(ProgressDistribution(bottom)) == 0.0

    def test_uniform_is_half(self):
        assert expected_progress(ProgressDistribution(np.full(10, 0.1))) == pytest.approx(0.5)

    @given(st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=10, max_size=10))
    @settings(max_examples=50)
    def test_always_in_unit_interval(self, raw):
        values = np.asarray(raw)
        dist = ProgressDistribution(values / values.sum())
        assert 0.0 <= expected_progress(dist) <= 1.0


def sample_records(num_segments=3, num_steps=2):
    rng = np.random.default_rng(0)
    records = []
    for t in range(num_segments):
        scores = rng.random(num_steps + 1) + 0.1
        vsg = ObservationScores(scores / scores.sum())
        rows = []
        for _ in range(num_steps):
            raw = rng.random(10) + 0.1
            rows.append(ProgressDistribution(raw / raw.sum()))
        records.append((t, vsg, rows))
    return records


class TestReplayProvider:
    def test_bit_exact_round_trip(self, tmp_path):
        records = sample_records()
        path = tmp_path / "scores.jsonl"
        write_replay_file(path, records)
        provider = replay_provider(path)
        for t, vsg, rows in records:
            np.testing.assert_array_equal(provider.vsg_scores(t).values, vsg.values)
            for i, row in enumerate(rows):
                np.testing.assert_array_equal(provider.progress_scores(t, i).values, row.values)

    def test_missing_segment(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        write_replay_file(path, sample_records(num_segments=2))
        provider = replay_provider(path)
        with pytest.raises(MissingObservation):
            provider.vsg_scores(5)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        write_replay_file(path, sample_records())
        data = path.read_text().splitlines()
        path.write_text("\n".join(data[:-1] + [data[-1][: len(data[-1]) // 2]]))
        with pytest.raises(CorruptReplayFile):
            replay_provider(path)

    def test_wrong_shape(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        record = {"t": 0, "vsg": [0.5, 0.5], "progress": [[0.1] * 9]}
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(CorruptReplayFile):
            replay_provider(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        path.write_text("")
        with pytest.raises(CorruptReplayFile):
            replay_provider(path)


class TestSyntheticOracle:
    def test_noise_zero_is_ground_truth(self):
        rng = np.random.default_rng(1)
        task = make_task(3)
        annotation, timeline = make_chain_video(rng, video_id="v", task=task)
        provider = synthetic_oracle_provider(annotation, timeline, 3, noise=0.0, seed=5)
        for t in range(timeline.num_segments):
            mid = timeline.midpoint_s(t)
            truth = 3
            for iv in annotation.intervals:
                if iv.start_s <= mid < iv.end_s:
                    truth = iv.step
                    break
            scores = provider.vsg_scores(t)
            assert scores.values[truth] == 1.0

    def test_interval_midpoint_progress_half(self):
        annotation = GroundTruthAnnotation(
            video_id="v",
            task_id="t",
            length_s=8.0,
            intervals=(StepInterval(step=0, start_s=0.0, end_s=8.0),),
        )
        timeline = SegmentTimeline(video_id="v", segment_duration_s=2.0, num_segments=4)
        provider = synthetic_oracle_provider(annotation, timeline, 1)
        # Segment 1 midpoint is 3.0s; (3-0)/8 = 0.375. Segment with midpoint
        # at the interval midpoint (4.0s would be segment boundary) -> use
        # midpoint 4.0 not hit; instead check exact expectation recovery.
        assert expected_progress(provider.progress_scores(1, 0)) == pytest.approx(0.375)

    def test_exact_midpoint_yields_half(self):
        annotation = GroundTruthAnnotation(
            video_id="v",
            task_id="t",
            length_s=6.0,
            intervals=(StepInterval(step=0, start_s=1.0, end_s=5.0),),
        )
        timeline = SegmentTimeline(video_id="v", segment_duration_s=2.0, num_segments=3)
        provider = synthetic_oracle_provider(annotation, timeline, 1)
        # Segment 1 midpoint is 3.0 s, exactly the interval midpoint.
        assert expected_progress(provider.progress_scores(1, 0)) == pytest.approx(0.5)

    def test_progress_clamps_after_interval(self):
        annotation = GroundTruthAnnotation(
            video_id="v",
            task_id="t",
            length_s=12.0,
            intervals=(StepInterval(step=0, start_s=0.0, end_s=4.0),),
        )
        timeline = SegmentTimeline(video_id="v", segment_duration_s=2.0, num_segments=6)
        provider = synthetic_oracle_provider(annotation, timeline, 1)
        assert expected_progress(provider.progress_scores(5, 0)) == 1.0
        assert provider.vsg_scores(5).values[1] == 1.0  # none

    def test_unannotated_step_progress_zero(self):
        rng = np.random.default_rng(2)
        task = make_task(2)
        annotation, timeline = make_chain_video(rng, video_id="v", task=task)
        trimmed = GroundTruthAnnotation(
            video_id="v",
            task_id=task.task_id,
            length_s=annotation.length_s,
            intervals=annotation.intervals[:1],
        )
        provider = synthetic_oracle_provider(trimmed, timeline, 2)
        assert expected_progress(provider.progress_scores(0, 1)) == 0.0

    def test_seeded_noise_reproducible(self):
        rng = np.random.default_rng(3)
        task = make_task(4)
        annotation, timeline = make_chain_video(rng, video_id="v", task=task)
        first = synthetic_oracle_provider(annotation, timeline, 4, noise=0.4, seed=11)
        second = synthetic_oracle_provider(annotation, timeline, 4, noise=0.4, seed=11)
        different = synthetic_oracle_provider(annotation, timeline, 4, noise=0.4, seed=12)
        rows_first = np.vstack([first.vsg_scores(t).values for t in range(timeline.num_segments)])
        rows_second = np.vstack([second.vsg_scores(t).values for t in range(timeline.num_segments)])
        rows_third = np.vstack([different.vsg_scores(t).values for t in range(timeline.num_segments)])
        np.testing.assert_array_equal(rows_first, rows_second)
        assert not np.array_equal(rows_first, rows_third)

    def test_noisy_labels_never_true_class(self):
        rng = np.random.default_rng(4)
        task = make_task(3)
        annotation, timeline = make_chain_video(rng, video_id="v", task=task)
        provider = synthetic_oracle_provider(annotation, timeline, 3, noise=1.0, seed=7)
        for t in range(timeline.num_segments):
            assert provider.labels[t] != provider.true_classes[t]

    def test_next_step_scores(self):
        annotation = GroundTruthAnnotation(
            video_id="v",
            task_id="t",
            length_s=8.0,
            intervals=(
                StepInterval(step=0, start_s=0.0, end_s=4.0),
                StepInterval(step=1, start_s=4.0, end_s=8.0),
            ),
        )
        timeline = SegmentTimeline(video_id="v", segment_duration_s=2.0, num_segments=4)
        provider = synthetic_oracle_provider(annotation, timeline, 2)
        assert provider.next_step_scores(0)[1] == 1.0
        assert provider.next_step_scores(3)[2] == 1.0  # nothing upcoming -> none


class TestSegmentScoreCache:
    def test_partial_segment_never_persisted(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        cache = SegmentScoreCache(path, num_steps=2)
        (t, vsg, rows) = sample_records(num_segments=1)[0]
        cache.record_vsg(t, vsg)
        cache.record_progress(t, 0, rows[0])
        assert not path.exists() or path.read_text() == ""
        cache.record_progress(t, 1, rows[1])
        assert cache.completed(0)
        lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
        assert len(lines) == 1

    def test_reload_skips_completed(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        cache = SegmentScoreCache(path, num_steps=2)
        for t, vsg, rows in sample_records(num_segments=3):
            cache.record_vsg(t, vsg)
            for i, row in enumerate(rows):
                cache.record_progress(t, i, row)
        reloaded = SegmentScoreCache(path, num_steps=2)
        assert reloaded.completed_segments() == [0, 1, 2]
        np.testing.assert_array_equal(
            reloaded.get_vsg(1).values, cache.get_vsg(1).values
        )

    def test_bad_trailing_line_dropped(self, tmp_path):
        path = tmp_path / "scores.jsonl"
        cache = SegmentScoreCache(path, num_steps=2)
        for t, vsg, rows in sample_records(num_segments=2):
            cache.record_vsg(t, vsg)
            for i, row in enumerate(rows):
                cache.record_progress(t, i, row)
        with open(path, "a", encoding="utf-8") as fh:
            fh.write('{"t": 2, "vsg": [0.5')  # simulated crash mid-append
        reloaded = SegmentScoreCache(path, num_steps=2)
        assert reloaded.completed_segments() == [0, 1]
        # The file was repaired: it parses as a replay file again.
        assert replay_provider(path).covers(2)
