"""Sparse linear algebra: CSR storage, Krylov solvers, and a direct fallback.

The concentration systems are nonsymmetric periodic pentadiagonal M-matrices
and are solved with Jacobi-preconditioned BiCGStab; the Poisson operator used
for displacement initialization is symmetric positive semidefinite with a
constant nullspace and is solved with Jacobi-preconditioned CG in the
zero-mean gauge.  All iteration and summation orders are fixed, so identical
inputs give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SparseMatrix",
    "SolveStats",
    "LinearSolveError",
    "matvec",
    "solve_nonsymmetric",
    "solve_spd",
]

_TINY_RHS = 1e-300


@dataclass
class SolveStats:
    iterations: int
    final_relative_residual: float
    converged: bool


class LinearSolveError(RuntimeError):
    """Solver failure; carries the stats of the failed solve."""

    def __init__(self, message: str, stats: SolveStats):
        super().__init__(message)
        self.stats = stats


@dataclass
class SparseMatrix:
    """Square CSR matrix with sorted, duplicate-free column indices."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @classmethod
    def from_coo(cls, n: int, rows, cols, vals) -> "SparseMatrix":
        """Build CSR from triplets; duplicate entries are summed."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        if rows.shape != cols.shape or rows.shape != vals.shape:
            raise ValueError("rows, cols, vals must have identical shapes")
        if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= n):
            raise ValueError("row/column index out of range")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size:
            keep = np.empty(rows.size, dtype=bool)
            keep[0] = True
            keep[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            starts = np.flatnonzero(keep)
            summed = np.add.reduceat(vals, starts)
            rows, cols, vals = rows[starts], cols[starts], summed
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls(n, indptr, cols, vals)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        idx = np.arange(n)
        return cls.from_coo(n, idx, idx, np.ones(n))

    def diagonal(self) -> np.ndarray:
        d = np.zeros(self.n)
        row_of = np.repeat(np.arange(self.n), np.diff(self.indptr))
        mask = self.indices == row_of
        d[row_of[mask]] = self.data[mask]
        return d

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        row_of = np.repeat(np.arange(self.n), np.diff(self.indptr))
        a[row_of, self.indices] = self.data
        return a


def matvec(a: SparseMatrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (a.n,):
        raise ValueError(f"dimension mismatch: matrix is {a.n}x{a.n}, vector has shape {x.shape}")
    prod = a.data * x[a.indices]
    out = np.zeros(a.n)
    nonempty = np.flatnonzero(np.diff(a.indptr) > 0)
    if nonempty.size:
        sums = np.add.reduceat(prod, a.indptr[nonempty])
        out[nonempty] = sums
    return out


def _jacobi(a: SparseMatrix) -> np.ndarray:
    d = a.diagonal()
    d = np.where(np.abs(d) > 0, d, 1.0)
    return 1.0 / d


def _bicgstab_core(
    a: SparseMatrix, b: np.ndarray, x0: np.ndarray, minv: np.ndarray, tol_abs: float, maxit: int
) -> tuple[np.ndarray, int]:
    """One BiCGStab sweep from x0; returns (iterate, iterations used)."""
    x = x0.copy()
    r = b - matvec(a, x)
    rnorm0 = float(np.linalg.norm(r))
    if rnorm0 <= tol_abs:
        return x, 0
    rhat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros(a.n)
    p = np.zeros(a.n)
    iters = 0
    guard = 1e-60 * rnorm0 * rnorm0
    while iters < maxit:
        rho1 = float(rhat @ r)
        if abs(rho1) < guard:
            break
        beta = (rho1 / rho) * (alpha / omega)
        p = r + beta * (p - omega * v)
        phat = minv * p
        v = matvec(a, phat)
        denom = float(rhat @ v)
        if abs(denom) < guard:
            break
        alpha = rho1 / denom
        s = r - alpha * v
        if np.linalg.norm(s) <= tol_abs:
            x = x + alpha * phat
            iters += 1
            break
        shat = minv * s
        t = matvec(a, shat)
        tt = float(t @ t)
        if tt == 0.0:
            x = x + alpha * phat
            iters += 1
            break
        omega = float(t @ s) / tt
        x = x + alpha * phat + omega * shat
        r = s - omega * t
        rho = rho1
        iters += 1
        if np.linalg.norm(r) <= tol_abs:
            break
    return x, max(iters, 1)


def _final_stats(a: SparseMatrix, x: np.ndarray, b: np.ndarray, nb: float, iters: int, tol: float) -> SolveStats:
    res = float(np.linalg.norm(b - matvec(a, x)) / nb)
    return SolveStats(iters, res, res <= tol)


def solve_nonsymmetric(
    a: SparseMatrix,
    b: np.ndarray,
    tol: float = 1e-12,
    maxit: int | None = None,
    method: str = "bicgstab",
) -> tuple[np.ndarray, SolveStats]:
    """Solve a x = b to relative residual <= tol.

    method="bicgstab" runs Jacobi-preconditioned BiCGStab; method="direct"
    uses a sparse LU factorization (subtraction-free forward/backward sweeps
    for M-matrices, which preserves tiny positive solution components).
    Raises LinearSolveError on non-convergence.
    """
    b = np.asarray(b, dtype=float)
    if b.shape != (a.n,):
        raise ValueError("right-hand side dimension mismatch")
    nb = float(np.linalg.norm(b))
    if nb < _TINY_RHS:
        return np.zeros(a.n), SolveStats(0, 0.0, True)

    if method == "direct":
        from scipy.sparse import csr_matrix
        from scipy.sparse.linalg import splu

        lu = splu(csr_matrix((a.data, a.indices, a.indptr), shape=(a.n, a.n)).tocsc())
        x = lu.solve(b)
        # iterative refinement: a couple of extra triangular solves push the
        # residual from the factorization's eps*cond level to near eps
        passes = 1
        for _ in range(3):
            r = b - matvec(a, x)
            if np.linalg.norm(r) <= tol * nb:
                break
            x = x + lu.solve(r)
            passes += 1
        stats = _final_stats(a, x, b, nb, passes, tol)
        if not stats.converged:
            raise LinearSolveError(
                f"direct solve residual {stats.final_relative_residual:.3e} above tol {tol:.3e}", stats
            )
        return x, stats
    if method != "bicgstab":
        raise ValueError(f"unknown method {method!r}")

    if maxit is None:
        maxit = 10 * a.n
    minv = _jacobi(a)
    x = np.zeros(a.n)
    iters = 0
    # restart on breakdown or when the recurrence residual drifted from the
    # true one; each attempt resumes from the current iterate
    for _attempt in range(4):
        x, used = _bicgstab_core(a, b, x, minv, tol * nb, maxit - iters)
        iters += used
        if np.linalg.norm(b - matvec(a, x)) <= tol * nb or iters >= maxit:
            break

    stats = _final_stats(a, x, b, nb, iters, tol)
    if not stats.converged:
        raise LinearSolveError(
            f"BiCGStab stalled at relative residual {stats.final_relative_residual:.3e} "
            f"after {stats.iterations} iterations (tol {tol:.3e})",
            stats,
        )
    return x, stats


def solve_spd(
    a: SparseMatrix,
    b: np.ndarray,
    tol: float = 1e-12,
    maxit: int | None = None,
    constant_nullspace: bool = False,
) -> tuple[np.ndarray, SolveStats]:
    """Jacobi-preconditioned CG for SPD (or SPSD with constant nullspace) systems.

    With constant_nullspace=True the right-hand side must be orthogonal to
    constants; the returned solution is the zero-mean representative.
    """
    b = np.asarray(b, dtype=float)
    if b.shape != (a.n,):
        raise ValueError("right-hand side dimension mismatch")
    if constant_nullspace:
        bmean = float(b.mean())
        scale = float(np.max(np.abs(b))) if b.size else 0.0
        if scale > 0 and abs(bmean) > 1e-10 * scale:
            raise LinearSolveError(
                f"rhs mean {bmean:.3e} not orthogonal to the constant nullspace",
                SolveStats(0, np.inf, False),
            )
        b = b - bmean
    nb = float(np.linalg.norm(b))
    if nb < _TINY_RHS:
        return np.zeros(a.n), SolveStats(0, 0.0, True)
    if maxit is None:
        maxit = 10 * a.n

    minv = _jacobi(a)
    x = np.zeros(a.n)
    r = b.copy()
    z = minv * r
    p = z.copy()
    rz = float(r @ z)
    iters = 0
    while iters < maxit and np.linalg.norm(r) > tol * nb:
        ap = matvec(a, p)
        pap = float(p @ ap)
        if pap <= 0:
            break
        alpha = rz / pap
        x = x + alpha * p
        r = r - alpha * ap
        z = minv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        iters += 1

    if constant_nullspace:
        x = x - x.mean()
    stats = _final_stats(a, x, b, nb, iters, tol)
    if not stats.converged:
        raise LinearSolveError(
            f"CG stalled at relative residual {stats.final_relative_residual:.3e} "
            f"after {stats.iterations} iterations (tol {tol:.3e})",
            stats,
        )
    return x, stats
