from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from girdershm.pca import PcaBasis, fit_pca, principal_part, remove_components, select_p
from girdershm.signals import PassageMatrix


def test_one_dimensional_spread():
    b = fit_pca(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    np.testing.assert_allclose(np.abs(b.components[:, 0]), [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(b.eigenvalues, [2.0, 0.0])
    np.testing.assert_array_equal(b.column_means, [0.0, 0.0])


def test_identical_rows():
    b = fit_pca(np.tile([1.0, 2.0, 3.0], (4, 1)))
    assert b.rank == 0 and b.retained_p == 0
    assert np.all(b.eigenvalues == 0)


def test_full_reconstruction(rng):
    X = rng.standard_normal((5, 8))
    b = fit_pca(X)
    scores = (X - b.column_means) @ b.components
    np.testing.assert_allclose(b.column_means + scores @ b.components.T, X, atol=1e-10)


@pytest.mark.parametrize("eigs,p", [((8, 1, 1), 1), ((5, 4, 1), 2), ((0, 0), 0), ((), 0)])
def test_select_p(eigs, p):
    assert select_p(eigs, 0.8) == p


def test_retained_extremes(rng):
    X = rng.standard_normal((6, 20))
    b = fit_pca(X)
    full = remove_components(X, b.with_retained(b.rank))
    assert np.linalg.norm(full) <= 1e-9 * np.linalg.norm(X - b.column_means)
    none = remove_components(X, b.with_retained(0))
    np.testing.assert_array_equal(none, X - b.column_means)


def test_test_row_matches_fit_residual(rng):
    X = rng.standard_normal((10, 30))
    b = fit_pca(X)
    R = remove_components(X, b)
    T = b.retained
    oracle = (X[3] - b.column_means) - T @ (T.T @ (X[3] - b.column_means))
    np.testing.assert_allclose(remove_components(X[3], b), oracle, atol=1e-12)
    np.testing.assert_allclose(R[3], oracle, atol=1e-12)


def test_errors(rng):
    with pytest.raises(ValueError):
        fit_pca(np.ones((1, 5)))
    with pytest.raises(ValueError):
        fit_pca(np.array([[1.0, np.nan], [0.0, 1.0]]))
    b = fit_pca(rng.standard_normal((4, 6)))
    with pytest.raises(ValueError, match="dimension"):
        remove_components(np.ones(7), b)


def test_passage_matrix_in_out(rng):
    M = PassageMatrix(rng.standard_normal((5, 12)), "L4-P3b", "360", tuple("abcde"))
    out = remove_components(M, fit_pca(M))
    assert isinstance(out, PassageMatrix) and out.passage_ids == M.passage_ids


def test_dict_round_trip(rng):
    b = fit_pca(rng.standard_normal((7, 15)))
    back = PcaBasis.from_dict(b.to_dict(full=True))
    np.testing.assert_array_equal(back.components, b.components)
    assert back.retained_p == b.retained_p
    short = PcaBasis.from_dict(b.to_dict())
    np.testing.assert_array_equal(short.retained, b.retained)


matrices = st.tuples(st.integers(2, 8), st.integers(2, 12), st.integers(0, 10_000))


@settings(max_examples=60, deadline=None)
@given(matrices, st.floats(0.05, 1.0))
def test_projection_properties(shape, thr):
    k, n, seed = shape
    X = np.random.default_rng(seed).standard_normal((k, n)) * np.geomspace(10, 0.1, n)
    b = fit_pca(X, thr)
    R = remove_components(X, b)
    Xc = X - b.column_means
    # idempotence, orthogonality, energy split
    np.testing.assert_allclose(remove_components(R + b.column_means, b), R, atol=1e-10)
    assert np.abs(R @ b.retained).max(initial=0.0) <= 1e-8 * max(1.0, np.abs(Xc).max())
    energy = np.linalg.norm(Xc) ** 2
    split = np.linalg.norm(principal_part(X, b)) ** 2 + np.linalg.norm(R) ** 2
    assert abs(energy - split) <= 1e-8 * energy
    assert np.allclose(b.components.T @ b.components, np.eye(b.rank), atol=1e-10)
    assert np.all(np.diff(b.eigenvalues) <= 1e-12) and np.all(b.eigenvalues >= 0)


@given(st.lists(st.floats(0, 100), min_size=1, max_size=10), st.floats(0.01, 1), st.floats(0.01, 1))
def test_select_p_monotone(eigs, t1, t2):
    eigs = sorted(eigs, reverse=True)
    lo, hi = sorted((t1, t2))
    assert select_p(eigs, lo) <= select_p(eigs, hi)
