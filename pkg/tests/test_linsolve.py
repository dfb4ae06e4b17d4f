"""Sparse storage and solvers against dense numpy oracles."""

import numpy as np
import pytest

from manp.linsolve import LinearSolveError, SolveStats, SparseMatrix, matvec, solve_nonsymmetric, solve_spd


def _random_sparse(n, rng, density=0.3, spd=False, diag_boost=0.0):
    dense = rng.standard_normal((n, n)) * (rng.random((n, n)) < density)
    if spd:
        dense = dense @ dense.T + n * np.eye(n)
    else:
        dense += (np.abs(dense).sum(axis=1) + diag_boost) * np.eye(n)
    rows, cols = np.nonzero(dense)
    return SparseMatrix.from_coo(n, rows, cols, dense[rows, cols]), dense


def test_from_coo_sums_duplicates_and_sorts():
    a = SparseMatrix.from_coo(3, [0, 0, 2, 1], [1, 1, 0, 1], [2.0, 3.0, 1.0, 4.0])
    dense = a.to_dense()
    expect = np.array([[0, 5, 0], [0, 4, 0], [1, 0, 0]], dtype=float)
    np.testing.assert_array_equal(dense, expect)
    assert np.all(np.diff(a.indptr) >= 0)


def test_matvec_identity_and_zero():
    n = 6
    eye = SparseMatrix.identity(n)
    x = np.arange(1.0, n + 1)
    np.testing.assert_array_equal(matvec(eye, x), x)
    zero = SparseMatrix.from_coo(n, [], [], [])
    np.testing.assert_array_equal(matvec(zero, x), np.zeros(n))


def test_matvec_against_dense_oracle():
    rng = np.random.default_rng(101)
    a, dense = _random_sparse(7, rng)
    x = rng.standard_normal(7)
    np.testing.assert_allclose(matvec(a, x), dense @ x, rtol=0, atol=1e-14 * np.abs(dense @ x).max())


def test_matvec_dimension_mismatch():
    a = SparseMatrix.identity(4)
    with pytest.raises(ValueError):
        matvec(a, np.ones(5))


def test_solve_diagonal():
    n = 5
    idx = np.arange(n)
    a = SparseMatrix.from_coo(n, idx, idx, np.full(n, 2.0))
    x, stats = solve_nonsymmetric(a, np.ones(n))
    np.testing.assert_allclose(x, 0.5 * np.ones(n), atol=1e-13)
    assert stats.converged


@pytest.mark.parametrize("method", ["bicgstab", "direct"])
def test_solve_nonsymmetric_against_dense_oracle(method):
    rng = np.random.default_rng(7)
    for trial in range(10):
        a, dense = _random_sparse(10, rng, diag_boost=1.0)
        b = rng.standard_normal(10)
        x, stats = solve_nonsymmetric(a, b, tol=1e-12, method=method)
        oracle = np.linalg.solve(dense, b)
        np.testing.assert_allclose(x, oracle, atol=1e-10 * max(1.0, np.abs(oracle).max()))
        assert stats.final_relative_residual <= 1e-12


def test_reported_residual_matches_recomputation():
    rng = np.random.default_rng(19)
    a, dense = _random_sparse(12, rng, diag_boost=0.5)
    b = rng.standard_normal(12)
    x, stats = solve_nonsymmetric(a, b, tol=1e-12)
    recomputed = np.linalg.norm(b - dense @ x) / np.linalg.norm(b)
    assert abs(stats.final_relative_residual - recomputed) <= 1e-14


def test_tiny_rhs_short_circuits():
    a = SparseMatrix.identity(4)
    x, stats = solve_nonsymmetric(a, np.zeros(4))
    np.testing.assert_array_equal(x, np.zeros(4))
    assert stats.iterations == 0 and stats.converged


def test_nonconvergence_raises_with_stats():
    # a singular system: both rows identical
    a = SparseMatrix.from_coo(2, [0, 0, 1, 1], [0, 1, 0, 1], [1.0, 1.0, 1.0, 1.0])
    with pytest.raises(LinearSolveError) as err:
        solve_nonsymmetric(a, np.array([1.0, -1.0]), tol=1e-12, maxit=50)
    assert isinstance(err.value.stats, SolveStats)
    assert not err.value.stats.converged


def test_solve_spd_against_dense_oracle():
    rng = np.random.default_rng(23)
    a, dense = _random_sparse(8, rng, spd=True)
    b = rng.standard_normal(8)
    x, stats = solve_spd(a, b, tol=1e-12)
    oracle = np.linalg.solve(dense, b)
    np.testing.assert_allclose(x, oracle, atol=1e-10 * max(1.0, np.abs(oracle).max()))
    assert stats.converged


def _periodic_laplacian(n):
    idx = np.arange(n)
    rows = np.concatenate([idx, idx, idx])
    cols = np.concatenate([idx, (idx + 1) % n, (idx - 1) % n])
    vals = np.concatenate([np.full(n, 2.0), np.full(n, -1.0), np.full(n, -1.0)])
    return SparseMatrix.from_coo(n, rows, cols, vals)


def test_solve_spd_nullspace_zero_rhs():
    a = _periodic_laplacian(8)
    x, stats = solve_spd(a, np.zeros(8), constant_nullspace=True)
    np.testing.assert_array_equal(x, np.zeros(8))
    assert stats.converged


def test_solve_spd_nullspace_zero_mean_solution():
    rng = np.random.default_rng(29)
    a = _periodic_laplacian(16)
    b = rng.standard_normal(16)
    b -= b.mean()
    x, stats = solve_spd(a, b, constant_nullspace=True)
    assert abs(x.mean()) <= 1e-13 * max(1.0, np.abs(x).max())
    assert np.linalg.norm(matvec(a, x) - b) <= 1e-11 * np.linalg.norm(b)


def test_solve_spd_rejects_incompatible_rhs():
    a = _periodic_laplacian(8)
    with pytest.raises(LinearSolveError):
        solve_spd(a, np.ones(8), constant_nullspace=True)


def test_determinism():
    rng = np.random.default_rng(31)
    a, _ = _random_sparse(20, rng, diag_boost=1.0)
    b = rng.standard_normal(20)
    x1, s1 = solve_nonsymmetric(a, b)
    x2, s2 = solve_nonsymmetric(a, b)
    np.testing.assert_array_equal(x1, x2)
    assert s1.iterations == s2.iterations
    assert s1.final_relative_residual == s2.final_relative_residual
