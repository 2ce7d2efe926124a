from __future__ import annotations

import numpy as np
import pytest

from stepgrounder.core import ObservationScores, renormalize
from stepgrounder.dependency import DependencyMatrix
from stepgrounder.errors import ConfigurationError, DimensionMismatch
from stepgrounder.filtering import (
    FilterConfig,
    forward_step,
    init_filter,
    load_alignment_jsonl,
    predict,
    run_frozen,
    save_alignment_csv,
    save_alignment_jsonl,
    step,
    update,
)
from stepgrounder.transition import TransitionConfig

from helpers import (
    brute_force_posteriors,
    make_chain_video,
    make_task,
    random_row_stochastic,
    random_simplex,
)
from stepgrounder.observation.providers import SyntheticOracleProvider, progress_vector


def obs(values) -> ObservationScores:
    return ObservationScores(np.asarray(values, dtype=np.float64))


class TestInitFilter:
    def test_uniform_belief(self):
        task = make_task(3)
        state = init_filter(task, DependencyMatrix.zeros(3))
        np.testing.assert_allclose(state.belief.values, [0.25] * 4)
        assert state.t == 0
        np.testing.assert_array_equal(state.tracker.values, np.zeros(3))

    def test_single_step(self):
        state = init_filter(make_task(1), DependencyMatrix.zeros(1))
        np.testing.assert_allclose(state.belief.values, [0.5, 0.5])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            init_filter(make_task(3), DependencyMatrix.zeros(2))


class TestPredictUpdate:
    def test_uniform_transition_absorbs_belief(self):
        task = make_task(2)
        state = init_filter(
            task,
            DependencyMatrix.zeros(2),
            config=FilterConfig(transition=TransitionConfig(none_mode="neutral")),
        )
        prior = predict(state)
        np.testing.assert_allclose(prior, np.full(3, 1.0 / 3.0))

    def test_identity_transition_keeps_belief(self):
        belief = np.array([0.6, 0.3, 0.1])
        new_belief, degenerate = forward_step(belief, np.eye(3), np.ones(3) / 3.0)
        assert not degenerate
        np.testing.assert_allclose(new_belief, belief)

    def test_hand_matrix_vector_product(self):
        tmat = np.array([[0.9, 0.1], [0.2, 0.8]])
        prior = np.array([1.0, 0.0]) @ tmat
        np.testing.assert_allclose(prior, [0.9, 0.1])

    def test_one_hot_observation_dominates(self):
        prior = np.full(3, 1.0 / 3.0)
        belief = update(prior, obs([0.0, 1.0, 0.0]))
        np.testing.assert_allclose(belief.values, [0.0, 1.0, 0.0])

    def test_uniform_observation_keeps_prior(self):
        prior = np.array([0.0, 1.0, 0.0])
        belief = update(prior, obs([1 / 3, 1 / 3, 1 / 3]))
        np.testing.assert_allclose(belief.values, [0.0, 1.0, 0.0])

    def test_hand_normalization(self):
        belief = update(np.array([0.5, 0.3, 0.2]), obs([0.2, 0.3, 0.5]))
        np.testing.assert_allclose(belief.values, [10 / 29, 9 / 29, 10 / 29], atol=1e-12)

    def test_degenerate_update_falls_back_to_prior(self, caplog):
        prior = np.array([0.5, 0.5, 0.0])
        with caplog.at_level("WARNING"):
            belief = update(prior, obs([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(belief.values, [0.5, 0.5, 0.0])
        assert any("degenerate" in record.message for record in caplog.records)

    def test_zero_entries_never_nan(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            prior = random_simplex(rng, 4)
            scores = random_simplex(rng, 4)
            scores[rng.integers(0, 4)] = 0.0
            belief = update(prior, obs(renormalize(scores)))
            assert np.isfinite(belief.values).all()


class TestStep:
    def test_composition_matches_manual_recursion(self):
        task = make_task(2)
        dep = DependencyMatrix.zeros(2)
        state = init_filter(task, dep)
        observations = [obs([0.7, 0.2, 0.1]), obs([0.1, 0.8, 0.1]), obs([0.3, 0.3, 0.4])]
        progress = [np.array([0.2, 0.0]), np.array([0.9, 0.1]), np.array([1.0, 0.5])]

        manual_belief = state.belief.values
        from stepgrounder.transition import ProgressTracker, readiness, validity

        tracker = ProgressTracker.zeros(2)
        for scores, prog in zip(observations, progress):
            tmat = state.model.adjusted(readiness(dep, tracker), validity(dep, tracker)).values
            manual_belief, _ = forward_step(manual_belief, tmat, scores.values)
            tracker = tracker.observe(prog)
            state, belief = step(state, scores, prog)
            np.testing.assert_allclose(belief.values, manual_belief, atol=1e-12)

        assert state.t == 3
        assert state.alignment_matrix().num_segments == 3

    def test_blocked_step_suppressed_early(self):
        # Step 1 requires step 0; with no floor, early evidence for step 1
        # is damped at t=0 (the uniform initial belief still leaks a little
        # prior mass through the "none" row) and fully blocked once the
        # belief sits on the steps.
        task = make_task(2)
        dep = DependencyMatrix(np.array([[0.0, 0.0], [1.0, 0.0]]))
        state = init_filter(
            task, dep, config=FilterConfig(transition=TransitionConfig(eps=0.0))
        )
        scores = obs([0.1, 0.85, 0.05])
        state, belief = step(state, scores, np.zeros(2))
        assert belief.values[1] < scores.values[1]
        # Once the belief has no "none" mass, out-of-order pushes for the
        # blocked step cannot reach it at all.
        state, belief = step(state, obs([1.0, 0.0, 0.0]), np.zeros(2))
        state, belief = step(state, scores, np.zeros(2))
        assert belief.values[1] == 0.0
        assert state.degenerate_segments == ()

    def test_degenerate_segments_recorded(self):
        task = make_task(2)
        dep = DependencyMatrix(np.array([[0.0, 0.0], [1.0, 0.0]]))
        state = init_filter(
            task, dep, config=FilterConfig(transition=TransitionConfig(eps=0.0, eps_none=0.0))
        )
        state, belief = step(state, obs([1.0, 0.0, 0.0]), np.zeros(2))
        # Step 1 stays blocked (no progress on step 0 yet): the one-hot
        # observation on it zeroes the whole product.
        state, belief = step(state, obs([0.0, 1.0, 0.0]), np.zeros(2))
        assert state.degenerate_segments == (1,)
        np.testing.assert_allclose(belief.values, [1.0, 0.0, 0.0])

    def test_next_step_prior_requires_scores(self):
        task = make_task(2)
        state = init_filter(task, DependencyMatrix.zeros(2), config=FilterConfig(step_prior="next_step"))
        with pytest.raises(ConfigurationError):
            step(state, obs([0.5, 0.3, 0.2]), np.zeros(2))

    def test_step_prior_variants_differ(self):
        task = make_task(2)
        dep = DependencyMatrix(np.array([[0.0, 0.0], [0.6, 0.0]]))
        observations = [obs([0.6, 0.3, 0.1]), obs([0.2, 0.6, 0.2]), obs([0.1, 0.6, 0.3])]
        progress = [np.array([0.5, 0.0]), np.array([1.0, 0.2]), np.array([1.0, 0.8])]
        beliefs = {}
        for variant in ("uniform", "propagated", "next_step"):
            state = init_filter(task, dep, config=FilterConfig(step_prior=variant))
            for scores, prog in zip(observations, progress):
                state, belief = step(
                    state, scores, prog, next_step_scores=np.array([0.2, 0.7, 0.1])
                )
            beliefs[variant] = belief.values
        assert not np.allclose(beliefs["uniform"], beliefs["propagated"])
        assert not np.allclose(beliefs["uniform"], beliefs["next_step"])


class TestForwardEquivalence:
    def test_matches_path_sum_small(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            num_states = int(rng.integers(2, 5))
            horizon = int(rng.integers(1, 5))
            transitions = [random_row_stochastic(rng, num_states) for _ in range(horizon)]
            observations = [random_simplex(rng, num_states) for _ in range(horizon)]
            beliefs = run_frozen(transitions, observations)
            expected = brute_force_posteriors(transitions, observations)
            for got, want in zip(beliefs, expected):
                np.testing.assert_allclose(got.values, want, atol=1e-9)


class TestNoDependencyNeutrality:
    def test_neutral_mode_belief_equals_renormalized_observation(self):
        rng = np.random.default_rng(23)
        task = make_task(3)
        config = FilterConfig(transition=TransitionConfig(none_mode="neutral"))
        for _ in range(20):
            state = init_filter(task, DependencyMatrix.zeros(3), config=config)
            for _ in range(6):
                scores = obs(random_simplex(rng, 4))
                state, belief = step(state, scores, rng.random(3))
                np.testing.assert_allclose(belief.values, scores.values, atol=1e-12)

    def test_escape_mode_step_argmax_matches(self):
        rng = np.random.default_rng(29)
        task = make_task(4)
        for _ in range(20):
            state = init_filter(task, DependencyMatrix.zeros(4))
            for _ in range(6):
                scores = obs(random_simplex(rng, 5))
                state, belief = step(state, scores, rng.random(4))
                assert np.argmax(belief.values[:4]) == np.argmax(scores.values[:4])


class TestOnlineCausality:
    def test_prefix_beliefs_unchanged(self):
        rng = np.random.default_rng(31)
        task = make_task(3)
        annotation, timeline = make_chain_video(rng, video_id="v", task=task)
        provider = SyntheticOracleProvider(annotation, timeline, 3, noise=0.2, seed=9)
        dep = DependencyMatrix.zeros(3)

        def beliefs_for(prefix: int):
            state = init_filter(task, dep)
            out = []
            for t in range(prefix):
                state, belief = step(
                    state, provider.vsg_scores(t), progress_vector(provider, t, 3)
                )
                out.append(belief.values)
            return out

        full = beliefs_for(timeline.num_segments)
        half = beliefs_for(timeline.num_segments // 2)
        for got, want in zip(half, full):
            np.testing.assert_array_equal(got, want)


class TestAlignmentExport:
    def test_jsonl_round_trip(self, tmp_path):
        rng = np.random.default_rng(37)
        task = make_task(2)
        state = init_filter(task, DependencyMatrix.zeros(2))
        for _ in range(4):
            state, _ = step(state, obs(random_simplex(rng, 3)), rng.random(2))
        matrix = state.alignment_matrix()
        path = tmp_path / "alignment.jsonl"
        save_alignment_jsonl(path, matrix)
        loaded = load_alignment_jsonl(path)
        np.testing.assert_array_equal(loaded.values, matrix.values)
        save_alignment_csv(tmp_path / "alignment.csv", matrix)
        assert (tmp_path / "alignment.csv").read_text().startswith("t,step_0,step_1,none")
