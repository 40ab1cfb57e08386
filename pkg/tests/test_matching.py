import itertools

import numpy as np
import pytest

from bevrope.matching import MatchResult, hungarian_match
from bevrope.numerics import ConfigurationError, Matrix


def brute_force(cost):
    """Exhaustive optimum + lexicographically smallest optimal pairing."""
    n, m = cost.shape
    transposed = n > m
    c = cost.T if transposed else cost
    rows, cols = c.shape
    best = None
    best_pairs = None
    for perm in itertools.permutations(range(cols), rows):
        total = float(c[np.arange(rows), list(perm)].sum())
        pairs = sorted((p, r) for r, p in enumerate(perm)) if transposed \
            else [(r, p) for r, p in enumerate(perm)]
        if best is None or total < best - 1e-12 or \
                (abs(total - best) <= 1e-12 and pairs < best_pairs):
            best, best_pairs = total, pairs
    # same summation the matcher reports: original orientation, row-ascending
    best = float(cost[[p for p, _ in best_pairs],
                      [g for _, g in best_pairs]].sum()) if best_pairs else 0.0
    return best, best_pairs


class TestExamples:
    def test_one_by_one(self):
        result = hungarian_match(np.array([[3.5]]))
        assert result.pairs == [(0, 0)]
        assert result.total_cost == 3.5
        assert result.unmatched_predictions == []
        assert result.unmatched_gts == []

    def test_diagonal_dominance(self):
        result = hungarian_match(np.array([[1.0, 2.0], [2.0, 1.0]]))
        assert result.pairs == [(0, 0), (1, 1)]
        assert result.total_cost == 2.0

    def test_random_5x5_vs_exhaustive(self):
        gen = np.random.default_rng(0)
        for _ in range(30):
            cost = gen.integers(0, 10, size=(5, 5)).astype(float)
            result = hungarian_match(cost)
            best, _ = brute_force(cost)
            assert result.total_cost == best

    def test_accepts_matrix_type(self):
        result = hungarian_match(Matrix([[1.0, 0.0]]))
        assert result.pairs == [(0, 1)]


class TestErrors:
    def test_nan_rejected(self):
        with pytest.raises(ConfigurationError):
            hungarian_match(np.array([[1.0, np.nan]]))

    def test_inf_rejected(self):
        with pytest.raises(ConfigurationError):
            hungarian_match(np.array([[1.0, np.inf]]))

    def test_wrong_rank(self):
        with pytest.raises(ConfigurationError):
            hungarian_match(np.ones(3))


class TestRectangular:
    def test_more_predictions_than_gt(self):
        cost = np.array([[9.0, 9.0], [1.0, 9.0], [9.0, 1.0]])
        result = hungarian_match(cost)
        assert result.pairs == [(1, 0), (2, 1)]
        assert result.unmatched_predictions == [0]
        assert result.unmatched_gts == []

    def test_more_gt_than_predictions(self):
        cost = np.array([[9.0, 1.0, 9.0]])
        result = hungarian_match(cost)
        assert result.pairs == [(0, 1)]
        assert result.unmatched_gts == [0, 2]

    def test_empty_sides(self):
        result = hungarian_match(np.zeros((0, 3)))
        assert result.pairs == []
        assert result.unmatched_gts == [0, 1, 2]
        result = hungarian_match(np.zeros((2, 0)))
        assert result.unmatched_predictions == [0, 1]

    def test_rectangular_vs_exhaustive(self):
        gen = np.random.default_rng(1)
        for _ in range(60):
            n = int(gen.integers(1, 6))
            m = int(gen.integers(1, 6))
            cost = gen.uniform(0, 10, size=(n, m))
            result = hungarian_match(cost)
            best, best_pairs = brute_force(cost)
            assert result.total_cost == best
            assert result.pairs == best_pairs
            assert len(result.pairs) == min(n, m)


class TestLexicographicTies:
    def test_all_zero_square(self):
        result = hungarian_match(np.zeros((3, 3)))
        assert result.pairs == [(0, 0), (1, 1), (2, 2)]

    def test_all_zero_wide(self):
        result = hungarian_match(np.zeros((2, 4)))
        assert result.pairs == [(0, 0), (1, 1)]

    def test_all_zero_tall(self):
        result = hungarian_match(np.zeros((4, 2)))
        assert result.pairs == [(0, 0), (1, 1)]
        assert result.unmatched_predictions == [2, 3]

    def test_constructed_tie(self):
        # both diagonals cost 2; lex-min picks (0,0),(1,1)
        result = hungarian_match(np.array([[1.0, 1.0], [1.0, 1.0]]))
        assert result.pairs == [(0, 0), (1, 1)]

    def test_integer_ties_vs_brute_force(self):
        gen = np.random.default_rng(2)
        for _ in range(120):
            n = int(gen.integers(1, 6))
            m = int(gen.integers(1, 6))
            cost = gen.integers(0, 4, size=(n, m)).astype(float)  # tie-rich
            result = hungarian_match(cost)
            best, best_pairs = brute_force(cost)
            assert result.total_cost == best
            assert result.pairs == best_pairs


def test_indices_unique_within_sides():
    gen = np.random.default_rng(3)
    for _ in range(40):
        cost = gen.uniform(0, 5, size=(int(gen.integers(1, 7)),
                                       int(gen.integers(1, 7))))
        result = hungarian_match(cost)
        preds = [p for p, _ in result.pairs]
        gts = [g for _, g in result.pairs]
        assert len(set(preds)) == len(preds)
        assert len(set(gts)) == len(gts)
        assert set(preds) | set(result.unmatched_predictions) == set(range(cost.shape[0]))
        assert set(gts) | set(result.unmatched_gts) == set(range(cost.shape[1]))
