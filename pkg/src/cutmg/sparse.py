"""Sparse and small-dense linear algebra used by every other module.

Matrices are held as ``scipy.sparse.csr_matrix`` in a finalized form:
indices sorted ascending within each row, duplicates summed, explicit
zeros pruned.  :func:`finalize` is the only sanctioned way to produce
one from assembly triplets; downstream code may rely on the invariants
it enforces.  Vectors are plain 1-D ``numpy`` arrays of float64.
"""

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack
from scipy.sparse.linalg import splu

__all__ = [
    "finalize",
    "from_triplets",
    "spmv",
    "dense_cholesky_solve",
    "CholeskyFactor",
    "condition_estimate",
    "save_matrix_market",
    "load_matrix_market",
]


class NonSPDError(ValueError):
    """Raised when a matrix fails a symmetry or positivity check."""


def finalize(A) -> sp.csr_matrix:
    """Return ``A`` as a canonical CSR matrix (sorted, deduplicated, pruned)."""
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def from_triplets(rows, cols, vals, shape) -> sp.csr_matrix:
    """Build a finalized CSR matrix from assembly triplets."""
    return finalize(sp.coo_matrix((vals, (rows, cols)), shape=shape))


def spmv(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    """Sparse matrix-vector product with an explicit dimension check.

    scipy's CSR kernel accumulates each row in ascending column order,
    which keeps repeated runs bitwise identical.
    """
    x = np.asarray(x, dtype=float)
    if A.shape[1] != x.shape[0]:
        raise ValueError(
            f"dimension mismatch: matrix is {A.shape[0]}x{A.shape[1]}, "
            f"vector has length {x.shape[0]}"
        )
    return A @ x


def _check_symmetry(A: sp.csr_matrix, tol: float = 1e-12) -> None:
    d = A - A.T
    if d.nnz:
        err = np.max(np.abs(d.data))
        scale = max(np.max(np.abs(A.data)) if A.nnz else 0.0, 1.0)
        if err > tol * scale:
            raise NonSPDError(f"matrix is not symmetric: |A - A^T| = {err:.3e}")


class CholeskyFactor:
    """Dense Cholesky factorization of a (small) SPD sparse matrix.

    Kept as an object so multigrid can factor the coarsest operator once
    per outer iteration and reuse it across all cycle visits.
    """

    def __init__(self, A: sp.csr_matrix):
        _check_symmetry(A)
        dense = A.toarray()
        c, info = lapack.dpotrf(dense, lower=1, overwrite_a=1)
        if info > 0:
            raise NonSPDError(f"matrix is not positive definite: pivot {info} failed")
        if info < 0:
            raise ValueError(f"dpotrf: illegal argument {-info}")
        self._c = c
        self.n = A.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        x, info = lapack.dpotrs(self._c, b, lower=1)
        if info != 0:
            raise ValueError(f"dpotrs failed with info={info}")
        return x


def dense_cholesky_solve(A: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
    """Solve ``A x = b`` by dense Cholesky.  A must be SPD."""
    b = np.asarray(b, dtype=float)
    if A.shape[0] != b.shape[0]:
        raise ValueError("dimension mismatch between matrix and right-hand side")
    return CholeskyFactor(A).solve(b)


def _power_iterate(matvec, n, tol, max_iter):
    """Dominant eigenvalue of a symmetric positive operator by power iteration."""
    # deterministic start: ones plus a mild index-dependent perturbation so the
    # start vector is never orthogonal to the dominant eigenvector
    v = 1.0 + 1e-3 * np.sin(np.arange(1, n + 1, dtype=float))
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = matvec(v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, True
        v = w / nw
        lam_new = float(v @ matvec(v))
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return lam_new, True
        lam = lam_new
    return lam, False


def condition_estimate(A: sp.csr_matrix, tol: float = 1e-3, max_iter: int = 5000) -> float:
    """Estimate the 2-norm condition number of an SPD matrix.

    The largest eigenvalue comes from power iteration on ``A``; the
    smallest from power iteration on ``A^{-1}`` applied through a sparse
    LU factorization.  Both are iterated to relative tolerance ``tol``.
    """
    _check_symmetry(A)
    n = A.shape[0]
    if n == 1:
        return 1.0
    lam_max, ok_max = _power_iterate(lambda v: A @ v, n, tol, max_iter)
    lu = splu(sp.csc_matrix(A))
    lam_inv, ok_min = _power_iterate(lu.solve, n, tol, max_iter)
    if lam_inv <= 0.0 or lam_max <= 0.0:
        raise NonSPDError("nonpositive eigenvalue estimate; matrix is not SPD")
    kappa = lam_max * lam_inv
    if not (ok_max and ok_min):
        raise RuntimeError(
            f"condition estimate did not converge within {max_iter} iterations; "
            f"partial estimate kappa ~ {kappa:.6e}"
        )
    return kappa


def save_matrix_market(path, A: sp.spmatrix) -> None:
    """Write a sparse matrix in Matrix Market coordinate format (1-based)."""
    A = sp.coo_matrix(A)
    with open(path, "w") as f:
        f.write("%%MatrixMarket matrix coordinate real general\n")
        f.write(f"{A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for i, j, v in zip(A.row, A.col, A.data):
            f.write(f"{i + 1} {j + 1} {v:.17g}\n")


def load_matrix_market(path) -> sp.csr_matrix:
    """Read a Matrix Market coordinate file written by :func:`save_matrix_market`."""
    with open(path) as f:
        header = f.readline()
        if not header.startswith("%%MatrixMarket matrix coordinate real general"):
            raise ValueError(f"unsupported MatrixMarket header: {header.strip()}")
        line = f.readline()
        while line.startswith("%"):
            line = f.readline()
        nr, nc, nnz = (int(t) for t in line.split())
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=float)
        for k in range(nnz):
            i, j, v = f.readline().split()
            rows[k] = int(i) - 1
            cols[k] = int(j) - 1
            vals[k] = float(v)
    return from_triplets(rows, cols, vals, (nr, nc))
