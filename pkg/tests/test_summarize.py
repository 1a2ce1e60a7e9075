import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from vidsum.errors import ShapeError
from vidsum.summarize import (
    ShotSegmentation,
    budget_for,
    default_shots,
    knapsack_select,
    make_summary,
    shot_scores,
    summary_to_json,
)


class TestShots:
    def test_default_shots(self):
        assert default_shots(7, 3).to_list() == [[0, 3], [3, 6], [6, 7]]
        assert default_shots(6, 3).to_list() == [[0, 3], [3, 6]]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 500), st.integers(1, 60))
    def test_default_shots_cover(self, t, length):
        shots = default_shots(t, length)
        covered = np.zeros(t, dtype=int)
        for a, b in shots.to_list():
            covered[a:b] += 1
        assert np.all(covered == 1)

    def test_shot_scores(self):
        shots = ShotSegmentation(np.array([[0, 2], [2, 4]]))
        np.testing.assert_allclose(shot_scores([1, 1, 0, 0], shots), [1, 0])
        one = ShotSegmentation(np.array([[0, 4]]))
        np.testing.assert_allclose(shot_scores([1, 2, 3, 6], one), [3])

    def test_shot_scores_loop_oracle(self, rng):
        s = rng.random(53)
        shots = default_shots(53, 7)
        expect = [sum(s[a:b]) / (b - a) for a, b in shots.to_list()]
        np.testing.assert_allclose(shot_scores(s, shots), expect, rtol=0, atol=1e-12)

    def test_shot_scores_length_mismatch(self):
        with pytest.raises(ShapeError):
            shot_scores([1, 2, 3], default_shots(4, 2))


class TestKnapsack:
    def test_classic(self):
        sel = knapsack_select([6, 10, 12], [1, 2, 3], 5)
        assert sel.selected_shots == [1, 2]
        assert sel.value == 22

    def test_budget_edges(self):
        assert knapsack_select([1, 2], [1, 1], 0).selected_shots == []
        assert knapsack_select([1, 2, 3], [1, 2, 3], 6).selected_shots == [0, 1, 2]
        assert knapsack_select([1, 2, 3], [1, 2, 3], 100).selected_shots == [0, 1, 2]

    def test_tie_prefers_low_index(self):
        assert knapsack_select([1, 1, 1], [1, 1, 1], 2).selected_shots == [0, 1]
        # {0,1} and {2} both worth 2 in 2 frames
        assert knapsack_select([1, 1, 2], [1, 1, 2], 2).selected_shots == [0, 1]

    def test_enumeration_random(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 11))
            lengths = rng.integers(1, 8, n)
            # small integers force many exact ties
            values = rng.integers(0, 5, n).astype(float) if rng.random() < 0.5 else rng.random(n)
            budget = int(rng.integers(0, lengths.sum() + 2))
            sel = knapsack_select(values, lengths, budget)
            best, val = oracles.knapsack_enumerate(values.tolist(), lengths.tolist(), budget)
            assert sel.value == pytest.approx(val, abs=1e-12)
            assert tuple(sel.selected_shots) == best

    def test_scale_invariance(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 12))
            lengths = rng.integers(1, 6, n)
            values = rng.random(n)
            base = knapsack_select(values, lengths, 10).selected_shots
            for c in (2.0, 0.125, 7.3):
                assert knapsack_select(values * c, lengths, 10).selected_shots == base

    def test_epsilon_fills_budget(self, rng):
        # with zero-valued shots the solver may leave room unused; with eps > 0 it cannot
        for _ in range(50):
            n = int(rng.integers(2, 12))
            lengths = rng.integers(1, 6, n)
            values = np.where(rng.random(n) < 0.5, 0.0, rng.random(n))
            budget = int(rng.integers(1, lengths.sum() + 1))
            sel = knapsack_select(values + 0.05, lengths, budget)
            used = lengths[sel.selected].sum()
            assert used <= budget
            assert all(lengths[i] > budget - used for i in np.flatnonzero(~sel.selected))

    def test_bad_input(self):
        with pytest.raises(ShapeError):
            knapsack_select([1, 2], [1], 3)
        with pytest.raises(ValueError):
            knapsack_select([1], [0], 3)


class TestMakeSummary:
    def test_budget_arithmetic(self, rng):
        assert budget_for(100, 0.15) == 15
        assert budget_for(100, 0.29) == 29
        sel = make_summary(rng.random(100), default_shots(100, 7), 0.15)
        assert sel.budget == 15
        assert sel.frame_mask.sum() <= 15

    def test_ratio_one(self, rng):
        sel = make_summary(rng.random(40), default_shots(40, 6), 1.0)
        assert sel.frame_mask.sum() == 40

    def test_uniform_scores_first_shots(self):
        sel = make_summary(np.ones(100), default_shots(100, 10), 0.3)
        assert sel.selected_shots == [0, 1, 2]
        np.testing.assert_array_equal(np.flatnonzero(sel.frame_mask), np.arange(30))

    def test_maximal(self, rng):
        for _ in range(30):
            t = int(rng.integers(20, 120))
            shots = default_shots(t, int(rng.integers(2, 15)))
            sel = make_summary(rng.random(t) + 0.01, shots, 0.15)
            used = shots.lengths[sel.selected].sum()
            assert used <= sel.budget
            for i in np.flatnonzero(~sel.selected):
                assert shots.lengths[i] > sel.budget - used

    def test_bad_ratio(self):
        with pytest.raises(ValueError):
            make_summary([1.0], default_shots(1, 1), 0)

    def test_json(self):
        sel = make_summary([0.1, 0.9, 0.8, 0.2], ShotSegmentation(np.array([[0, 1], [1, 3], [3, 4]])), 0.5)
        assert summary_to_json(sel) == {"selected_shots": [1], "frame_mask": [0, 1, 1, 0]}
