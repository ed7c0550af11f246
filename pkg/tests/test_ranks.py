import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from fade.errors import ShapeError
from fade.ranks import (RankTable, UndefinedCorrelationError, fade_rank, marginals, pearson, spearman,
                        top_path)


def simplex_rows(d, w, rng):
    a = rng.random((d, w)) + 1e-3
    return a / a.sum(axis=1, keepdims=True)


def test_direct_product():
    assert fade_rank([[0.7, 0.3], [0.6, 0.4]], (0, 0)) == pytest.approx(0.42)


def test_uniform_alpha():
    alpha = np.full((3, 4), 0.25)
    for path in itertools.product(range(4), repeat=3):
        assert fade_rank(alpha, path) == pytest.approx(4.0 ** -3)


@pytest.mark.parametrize("d,w", [(1, 1), (2, 3), (3, 4), (4, 5)])
def test_scores_sum_to_one(d, w):
    alpha = simplex_rows(d, w, np.random.default_rng(d * 10 + w))
    table = RankTable.from_alpha(alpha)
    assert len(table.paths) == w ** d
    assert sum(table.scores) == pytest.approx(1.0, abs=1e-9)
    assert all(s > 0 for s in table.scores)


def test_invalid_paths():
    alpha = np.full((2, 3), 1 / 3)
    for bad in [(0,), (0, 3), (-1, 0), (0, 0, 0)]:
        with pytest.raises(IndexError):
            fade_rank(alpha, bad)
    with pytest.raises(ShapeError):
        fade_rank([0.5, 0.5], (0,))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(2, 5), st.integers(0, 2**31))
def test_ordering_invariance_one_row_differs(d, w, seed):
    rng = np.random.default_rng(seed)
    alpha = simplex_rows(d, w, rng)
    path = list(rng.integers(0, w, d))
    row = int(rng.integers(d))
    j, k = rng.choice(w, 2, replace=False)
    p1, p2 = list(path), list(path)
    p1[row], p2[row] = j, k
    assert np.sign(fade_rank(alpha, p1) - fade_rank(alpha, p2)) == np.sign(alpha[row, j] - alpha[row, k])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(2, 4), st.integers(0, 2**31), st.floats(0.01, 3.0))
def test_monotone_in_raised_entry(d, w, seed, bump):
    rng = np.random.default_rng(seed)
    alpha = simplex_rows(d, w, rng)
    row, j = int(rng.integers(d)), int(rng.integers(w))
    raised = alpha.copy()
    raised[row, j] += bump
    raised[row] /= raised[row].sum()
    for through in itertools.product(range(w), repeat=d):
        if through[row] != j:
            continue
        for avoid in itertools.product(range(w), repeat=d):
            if avoid[row] == j:
                continue
            before = fade_rank(alpha, through) / fade_rank(alpha, avoid)
            after = fade_rank(raised, through) / fade_rank(raised, avoid)
            assert after >= before * (1 - 1e-12)


def test_top_path_is_argmax_of_table():
    alpha = simplex_rows(3, 4, np.random.default_rng(0))
    assert top_path(alpha) == RankTable.from_alpha(alpha).top()


def test_rank_table_csv_round_trip(tmp_path):
    table = RankTable.from_alpha(simplex_rows(2, 3, np.random.default_rng(1)), provenance="seed=1")
    table.write_csv(tmp_path / "r.csv")
    back = RankTable.read_csv(tmp_path / "r.csv")
    assert back.paths == table.paths and back.scores == table.scores and back.provenance == "seed=1"


# --- marginals -------------------------------------------------------------------


def test_marginals_examples():
    a = np.array([[0.2, 0.8]])
    np.testing.assert_array_equal(marginals([a]), a)
    np.testing.assert_array_equal(marginals([[[1.0, 0.0]], [[0.0, 1.0]]]), [[0.5, 0.5]])
    rng = np.random.default_rng(2)
    m = marginals([simplex_rows(3, 4, rng) for _ in range(7)])
    np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-9)


def test_marginals_errors():
    with pytest.raises(ValueError):
        marginals([])
    with pytest.raises(ShapeError):
        marginals([np.ones((2, 2)) / 2, np.ones((2, 3)) / 3])


# --- correlations ---------------------------------------------------------------


def test_spearman_examples():
    x = [0.3, 1.2, -4.0, 2.5, 0.9]
    assert spearman(x, x) == pytest.approx(1.0)
    assert spearman(x, [-v for v in x]) == pytest.approx(-1.0)
    assert spearman([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)


def test_spearman_matches_scipy_with_ties():
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = rng.integers(0, 4, 12).astype(float)
        y = rng.integers(0, 4, 12).astype(float)
        if x.std() == 0 or y.std() == 0:
            continue
        assert spearman(x, y) == pytest.approx(stats.spearmanr(x, y).statistic, abs=1e-12)


def test_pearson_examples():
    x = np.array([0.1, 0.5, 2.0, 3.0])
    assert pearson(x, 2 * x + 1) == pytest.approx(1.0)
    assert pearson([-1, 0, 1], [1, -2, 1]) == pytest.approx(0.0)
    assert pearson([0, 1, 2], [0, 1, 4]) == pytest.approx(0.9608, abs=1e-4)
    assert pearson([0, 1, 2], [0, 1, 4]) == pytest.approx(stats.pearsonr([0, 1, 2], [0, 1, 4]).statistic)


def test_correlation_errors():
    with pytest.raises(ShapeError):
        spearman([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson([1], [1])
    with pytest.raises(UndefinedCorrelationError):
        spearman([1, 1, 1], [1, 2, 3])
