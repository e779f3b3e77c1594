import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import dump_topsis_cases, load_topsis_cases, oracle_topsis
from trustfed.topsis import (
    DecisionMatrix,
    check_weights,
    closeness,
    ideal_solutions,
    normalize_columns,
    topsis_scores,
)

EQ = [0.25] * 4


def scores_list(rows, w=EQ):
    d = DecisionMatrix(np.asarray(rows, dtype=float), tuple(range(len(rows))))
    s = topsis_scores(d, w)
    return [s[i] for i in range(len(rows))]


def test_normalize_simple_columns():
    assert normalize_columns(np.array([[3.0], [4.0]])).ravel().tolist() == pytest.approx([0.6, 0.8])
    assert normalize_columns(np.array([[0.5] * 4])).tolist() == [[1.0] * 4]


def test_normalize_zero_column_stays_zero():
    out = normalize_columns(np.array([[0.0, 0.3], [0.0, 0.4]]))
    assert out[:, 0].tolist() == [0.0, 0.0]


def test_normalize_matches_column_norms():
    rng = np.random.default_rng(11)
    d = rng.random((5, 4))
    out = normalize_columns(d)
    for j in range(4):
        norm = sum(d[i, j] ** 2 for i in range(5)) ** 0.5
        for i in range(5):
            assert out[i, j] == pytest.approx(d[i, j] / norm, abs=1e-15)
    assert ((out >= 0) & (out <= 1)).all()


def test_ideal_solutions():
    a_plus, a_minus = ideal_solutions(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert a_plus.tolist() == [1.0, 1.0] and a_minus.tolist() == [0.0, 0.0]
    row = np.array([[0.2, 0.4, 0.1, 0.3]])
    a_plus, a_minus = ideal_solutions(row)
    assert a_plus.tolist() == a_minus.tolist() == row[0].tolist()
    v = np.random.default_rng(5).random((6, 4))
    a_plus, a_minus = ideal_solutions(v)
    for j in range(4):
        assert a_plus[j] == max(v[i, j] for i in range(6))
        assert a_minus[j] == min(v[i, j] for i in range(6))


def test_closeness_extremes():
    v = np.array([[1.0, 1.0], [0.0, 0.0]])
    a_plus, a_minus = ideal_solutions(v)
    assert closeness(v, a_plus, a_minus).tolist() == [1.0, 0.0]


def test_closeness_middle_row_matches_oracle():
    rows = [[0.9] * 4, [0.5] * 4, [0.1] * 4]
    got = scores_list(rows)
    assert got == pytest.approx(oracle_topsis(rows, EQ), abs=1e-12)
    # equally spaced rows: the middle one sits halfway
    assert got[1] == pytest.approx(0.5, abs=1e-12)


def test_dominance_and_degeneracy():
    assert scores_list([[0.9] * 4, [0.1] * 4]) == [1.0, 0.0]
    assert scores_list([[0.4, 0.6, 0.5, 0.55]] * 5) == [1.0] * 5
    assert scores_list([[0.3, 0.2, 0.1, 0.0]]) == [1.0]


def test_ten_random_matrices_match_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(10):
        n = int(rng.integers(1, 9))
        rows = rng.random((n, 4))
        w = rng.dirichlet(np.ones(4))
        w = w / w.sum()
        assert scores_list(rows, w) == pytest.approx(oracle_topsis(rows.tolist(), w.tolist()), abs=1e-9)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        DecisionMatrix(np.zeros((2, 3)), (0, 1))
    with pytest.raises(ValueError):
        DecisionMatrix(np.full((1, 4), 1.5), (0,))
    with pytest.raises(ValueError):
        check_weights([0.5, 0.5, 0.5, -0.5])
    with pytest.raises(ValueError):
        check_weights([0.3, 0.3, 0.3, 0.3])


unit_rows = st.integers(1, 8).flatmap(
    lambda n: arrays(np.float64, (n, 4), elements=st.floats(0.0, 1.0, allow_subnormal=False))
)


@settings(max_examples=150, deadline=None)
@given(unit_rows)
def test_range_and_oracle_equivalence(rows):
    got = scores_list(rows)
    assert all(0.0 <= s <= 1.0 for s in got)
    assert got == pytest.approx(oracle_topsis(rows.tolist(), EQ), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(unit_rows, st.randoms(use_true_random=False))
def test_permutation_equivariance(rows, rnd):
    perm = list(range(len(rows)))
    rnd.shuffle(perm)
    base = scores_list(rows)
    permuted = scores_list(rows[perm])
    assert permuted == pytest.approx([base[p] for p in perm], abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(unit_rows, st.integers(0, 3), st.floats(0.05, 1.0))
def test_ranking_invariant_under_column_scaling(rows, col, c):
    scaled = rows.copy()
    scaled[:, col] *= c
    a = np.array(scores_list(rows))
    b = np.array(scores_list(scaled))
    # normalized matrix is unchanged up to rounding, so scores agree
    assert b == pytest.approx(a, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_dominant_row_scores_one(n, seed):
    rng = np.random.default_rng(seed)
    rows = rng.uniform(0.0, 0.8, (n, 4))
    rows[0] = rows[1:].max(axis=0) + 0.1
    assert scores_list(rows)[0] == 1.0


def test_oracle_cases_roundtrip_through_csv(tmp_path):
    rng = np.random.default_rng(9)
    cases = []
    for _ in range(5):
        rows = rng.random((int(rng.integers(1, 9)), 4)).tolist()
        cases.append((rows, EQ, oracle_topsis(rows, EQ)))
    path = tmp_path / "topsis_cases.csv"
    dump_topsis_cases(path, cases)
    for rows, w, expected in load_topsis_cases(path):
        assert scores_list(rows, w) == pytest.approx(expected, abs=1e-9)
