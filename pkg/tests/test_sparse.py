import numpy as np
import pytest
import scipy.sparse as sp

from cutmg import sparse


def test_spmv_identity():
    A = sparse.finalize(sp.eye(3))
    x = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(sparse.spmv(A, x), x)


def test_spmv_zero_matrix():
    A = sparse.from_triplets([], [], [], (4, 4))
    x = np.arange(4.0)
    assert np.array_equal(sparse.spmv(A, x), np.zeros(4))


def test_spmv_matches_dense_oracle():
    # oracle: explicit row sums in ascending column order (the contract order)
    rng = np.random.default_rng(7)
    dense = np.where(rng.random((5, 5)) < 0.4, rng.standard_normal((5, 5)), 0.0)
    A = sparse.finalize(sp.csr_matrix(dense))
    x = rng.standard_normal(5)
    expected = np.zeros(5)
    for i in range(5):
        s = 0.0
        for j in range(5):
            s += dense[i, j] * x[j]
        expected[i] = s
    assert np.array_equal(sparse.spmv(A, x), expected)


def test_spmv_dimension_mismatch():
    A = sparse.finalize(sp.eye(3))
    with pytest.raises(ValueError, match="dimension mismatch"):
        sparse.spmv(A, np.zeros(4))


def test_spmv_linearity():
    rng = np.random.default_rng(3)
    for _ in range(20):
        dense = rng.standard_normal((6, 6))
        A = sparse.finalize(sp.csr_matrix(dense * (rng.random((6, 6)) < 0.5)))
        x, y = rng.standard_normal(6), rng.standard_normal(6)
        a, b = rng.standard_normal(2)
        lhs = sparse.spmv(A, a * x + b * y)
        rhs = a * sparse.spmv(A, x) + b * sparse.spmv(A, y)
        assert np.linalg.norm(lhs - rhs) <= 1e-13 * max(np.linalg.norm(rhs), 1.0)


def test_cholesky_diag():
    A = sparse.finalize(sp.diags([2.0, 4.0]))
    x = sparse.dense_cholesky_solve(A, np.array([2.0, 4.0]))
    assert np.allclose(x, [1.0, 1.0], atol=1e-14)


def test_cholesky_1x1():
    A = sparse.from_triplets([0], [0], [3.0], (1, 1))
    assert np.allclose(sparse.dense_cholesky_solve(A, np.array([6.0])), [2.0])


def test_cholesky_residual_contract():
    rng = np.random.default_rng(11)
    B = rng.standard_normal((10, 10))
    A = sparse.finalize(sp.csr_matrix(B.T @ B + np.eye(10)))
    b = rng.standard_normal(10)
    x = sparse.dense_cholesky_solve(A, b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_cholesky_roundtrip_property():
    rng = np.random.default_rng(5)
    for n in (2, 5, 9):
        B = rng.standard_normal((n, n))
        A = sparse.finalize(sp.csr_matrix(B.T @ B + n * np.eye(n)))
        b = rng.standard_normal(n)
        x = sparse.dense_cholesky_solve(A, b)
        assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_cholesky_rejects_indefinite():
    A = sparse.finalize(sp.diags([1.0, -1.0, 2.0]))
    with pytest.raises(sparse.NonSPDError, match="pivot"):
        sparse.dense_cholesky_solve(A, np.zeros(3))


def test_cholesky_rejects_asymmetric():
    A = sparse.from_triplets([0, 0, 1, 1], [0, 1, 0, 1], [2.0, 1.0, 0.0, 2.0], (2, 2))
    with pytest.raises(sparse.NonSPDError, match="symmetric"):
        sparse.dense_cholesky_solve(A, np.zeros(2))


def test_condition_diagonal():
    A = sparse.finalize(sp.diags([1.0, 10.0]))
    assert sparse.condition_estimate(A, tol=1e-6) == pytest.approx(10.0, rel=1e-3)


def test_condition_identity():
    A = sparse.finalize(sp.eye(5))
    assert sparse.condition_estimate(A, tol=1e-6) == pytest.approx(1.0, rel=1e-6)


def test_condition_vs_dense_eig_oracle():
    rng = np.random.default_rng(2)
    B = rng.standard_normal((6, 6))
    dense = B.T @ B + 0.5 * np.eye(6)
    lams = np.linalg.eigvalsh(dense)
    kappa_ref = lams[-1] / lams[0]
    A = sparse.finalize(sp.csr_matrix(dense))
    kappa = sparse.condition_estimate(A, tol=1e-8)
    assert abs(kappa - kappa_ref) <= 1e-3 * kappa_ref


def test_matrix_market_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    dense = rng.standard_normal((4, 6)) * (rng.random((4, 6)) < 0.5)
    A = sparse.finalize(sp.csr_matrix(dense))
    path = tmp_path / "a.mtx"
    sparse.save_matrix_market(path, A)
    header = path.read_text().splitlines()[0]
    assert header == "%%MatrixMarket matrix coordinate real general"
    B = sparse.load_matrix_market(path)
    assert (A != B).nnz == 0
