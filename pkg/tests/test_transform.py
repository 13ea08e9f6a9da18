import numpy as np
import pytest
import scipy.sparse as sp

from cutmg import elasticity as el
from cutmg import geometry as geo
from cutmg import transform as tf
from cutmg.sparse import finalize


def test_householder_block_e1_is_identity():
    assert np.allclose(tf._householder_block((1.0, 0.0)), np.eye(2))


def test_householder_block_e2_is_swap():
    O = tf._householder_block((0.0, 1.0))
    assert np.allclose(O, [[0.0, 1.0], [1.0, 0.0]], atol=1e-15)
    assert np.allclose(O @ O, np.eye(2), atol=1e-15)
    assert np.allclose(O, O.T)


def test_householder_maps_e1_to_normal():
    rng = np.random.default_rng(4)
    for _ in range(25):
        v = rng.standard_normal(2)
        n = v / np.linalg.norm(v)
        O = tf._householder_block(n)
        assert np.linalg.norm(O @ np.array([1.0, 0.0]) - n) <= 1e-14
        assert np.linalg.norm(O @ O - np.eye(2)) <= 1e-14


def test_nodal_normals_flat_interface():
    mesh = geo.BackgroundMesh(0, 1, 0, 1, 4, 4)
    ls = geo.HalfplaneLevelSet((0.0, 0.62), (0.0, -1.0))
    cls = geo.classify(mesh, ls, "signorini")
    normals = tf.compute_nodal_normals(cls)
    for n, v in normals.items():
        assert np.allclose(v, [0.0, 1.0], atol=1e-13)


def test_nodal_normals_circle_radial():
    mesh = geo.BackgroundMesh(0, 1, 0, 1, 32, 32)
    ls = geo.CircleLevelSet((0.5, 0.5), 0.3)
    cls = geo.classify(mesh, ls, "signorini")
    normals = tf.compute_nodal_normals(cls)
    # within about a degree times h of the radial direction
    tol_angle = np.deg2rad(1.0) + 4.0 * cls.mesh.h
    for n, v in normals.items():
        p = cls.mesh.node_coords(n) - np.array([0.5, 0.5])
        radial = p / np.linalg.norm(p)
        cosang = np.clip(radial @ v, -1.0, 1.0)
        assert np.arccos(cosang) <= tol_angle


def test_nodal_normals_single_segment():
    mesh = geo.BackgroundMesh(0, 1, 0, 1, 1, 1)
    ls = geo.HalfplaneLevelSet((0.0, 0.5), (0.0, 1.0))
    cls = geo.classify(mesh, ls, "signorini")
    normals = tf.compute_nodal_normals(cls)
    seg = cls.segments[0]
    for v in normals.values():
        assert np.allclose(v, seg.normal, atol=1e-14)


def _rotated_problem(n=3):
    mesh = geo.BackgroundMesh(0, 1, 0, 1, n, n)
    ls = geo.HalfplaneLevelSet((0.0, 0.55), (0.0, -1.0))
    cls = geo.classify(mesh, ls, "signorini")
    dm = el.build_dofmap(cls)
    A = el.assemble_stiffness(cls, {1: el.MaterialParams(10.0, 0.3)}, dm)
    A = A + 1e-3 * sp.eye(dm.ndof)  # regularize rigid modes for spectra tests
    A = finalize(A)
    rng = np.random.default_rng(0)
    b = rng.standard_normal(dm.ndof)
    normals = tf.compute_nodal_normals(cls)
    O = tf.build_householder(normals, dm)
    return cls, dm, finalize(A), b, O


def test_rotate_local_identity():
    cls, dm, A, b, _ = _rotated_problem()
    I = finalize(sp.eye(dm.ndof))
    B = finalize(sp.csr_matrix((3, dm.ndof)))
    Abar, bbar, Bbar = tf.rotate_local(A, b, B, I)
    assert (Abar != A).nnz == 0
    assert np.array_equal(bbar, b)


def test_rotate_local_preserves_spectrum():
    cls, dm, A, b, O = _rotated_problem(2)
    Abar, bbar, _ = tf.rotate_local(A, b, finalize(sp.csr_matrix((1, dm.ndof))), O)
    lam0 = np.linalg.eigvalsh(A.toarray())
    lam1 = np.linalg.eigvalsh(Abar.toarray())
    assert np.max(np.abs(lam0 - lam1)) <= 1e-10 * max(abs(lam0).max(), 1.0)
    # involution: applying O twice is the identity
    x = np.arange(dm.ndof, dtype=float)
    assert np.linalg.norm(O @ (O @ x) - x) <= 1e-14 * np.linalg.norm(x)


def test_rotated_constraint_concentrates_on_normal_component():
    # flat interface: after rotation each node's entry sits on one local dof
    from cutmg import multiplier as mp
    mesh = geo.BackgroundMesh(0, 1, 0, 1, 4, 4)
    ls = geo.HalfplaneLevelSet((0.0, 0.55), (0.0, -1.0))
    cls = geo.classify(mesh, ls, "signorini")
    dm = el.build_dofmap(cls)
    vital = mp.select_vital_vertices(cls)
    basis = mp.build_multiplier_basis(cls, vital)
    B, g = mp.assemble_constraints(cls, dm, basis,
                                   mp.LineObstacle((0.0, 0.5), (0.0, 1.0)))
    O = tf.build_householder(tf.compute_nodal_normals(cls), dm)
    Bbar = finalize(B @ O)
    # for every node with any constraint weight, the tangential (second)
    # component must vanish after rotation
    for r in range(Bbar.shape[0]):
        row = Bbar.getrow(r)
        for dof, v in zip(row.indices, row.data):
            assert dof % 2 == 0 or abs(v) < 1e-12


def test_givens_qr_single_unit_column():
    BT = finalize(sp.csr_matrix(np.array([[1.0], [0.0], [0.0]])))
    Q, R = tf.givens_qr(BT)
    assert R.R1.shape == (1, 1)
    assert R.R1[0, 0] == pytest.approx(1.0)
    assert len(Q.ops) == 0


def test_givens_qr_rotates_e2_to_pivot():
    BT = finalize(sp.csr_matrix(np.array([[0.0], [1.0], [0.0]])))
    Q, R = tf.givens_qr(BT)
    assert R.R1[0, 0] == pytest.approx(1.0)
    Qs = Q.to_sparse().toarray()
    assert np.allclose(Qs.T @ np.array([0.0, 1.0, 0.0]), [1.0, 0.0, 0.0], atol=1e-14)


def test_givens_qr_vs_dense_oracle():
    rng = np.random.default_rng(8)
    M = rng.standard_normal((20, 4)) * (rng.random((20, 4)) < 0.6)
    M[:4, :4] += np.eye(4)  # ensure full rank
    BT = finalize(sp.csr_matrix(M))
    Q, R = tf.givens_qr(BT)
    Qs = Q.to_sparse()
    QtQ = (Qs.T @ Qs).toarray()
    assert np.max(np.abs(QtQ - np.eye(20))) <= 1e-12
    Rfull = np.zeros((20, 4))
    Rfull[:4, :4] = R.R1
    assert np.max(np.abs(Qs.toarray() @ Rfull - M)) <= 1e-12
    assert np.all(np.diag(R.R1) > 0)
    # compare against numpy QR up to column signs
    _, R_np = np.linalg.qr(M)
    assert np.allclose(np.abs(np.diag(R_np)), np.diag(R.R1), atol=1e-12)


def test_givens_qr_rank_deficient_errors():
    M = np.zeros((6, 2))
    M[0, 0] = 1.0
    M[1, 1] = 0.0  # second column zero
    with pytest.raises(ValueError, match="rank-deficient"):
        tf.givens_qr(finalize(sp.csr_matrix(M)))


def test_orthogonal_factor_apply_roundtrip():
    rng = np.random.default_rng(3)
    M = rng.standard_normal((12, 3))
    Q, _ = tf.givens_qr(finalize(sp.csr_matrix(M)))
    v = rng.standard_normal(12)
    assert np.linalg.norm(Q.apply(Q.apply_t(v)) - v) <= 1e-12
    assert abs(np.linalg.norm(Q.apply_t(v)) - np.linalg.norm(v)) <= 1e-12
    # factored application matches the materialized matrix
    Qs = Q.to_sparse()
    assert np.allclose(Q.apply_t(v), Qs.T @ v, atol=1e-13)
    assert np.allclose(Q.apply(v), Qs @ v, atol=1e-13)


def test_rotate_global_congruence():
    rng = np.random.default_rng(5)
    n = 14
    Araw = rng.standard_normal((n, n))
    A = finalize(sp.csr_matrix(Araw + Araw.T + 10 * np.eye(n)))
    b = rng.standard_normal(n)
    M = rng.standard_normal((n, 3))
    Q, _ = tf.givens_qr(finalize(sp.csr_matrix(M)))
    Ahat, bhat, _ = tf.rotate_global(A, b, None, Q)
    Qs = Q.to_sparse()
    for _ in range(20):
        x = rng.standard_normal(n)
        lhs = x @ (Ahat @ x)
        qx = Qs @ x
        rhs = qx @ (A @ qx)
        assert abs(lhs - rhs) <= 1e-12 * max(abs(rhs), 1.0)
    assert np.allclose(bhat, Qs.T @ b, atol=1e-13)


def test_rotate_global_identity():
    n = 6
    A = finalize(sp.eye(n) * 2.0)
    Q = tf.OrthogonalFactor(n, [])
    Ahat, bhat, That = tf.rotate_global(A, np.ones(n), finalize(sp.eye(n)), Q)
    assert (Ahat != A).nnz == 0
    assert np.array_equal(bhat, np.ones(n))
    assert (That != sp.eye(n).tocsr()).nnz == 0


def test_qr_order_invariance_of_solution():
    # the minimizer recovered through either elimination order agrees
    from cutmg import mg
    rng = np.random.default_rng(11)
    n, m = 16, 3
    W = rng.standard_normal((n, n))
    A = finalize(sp.csr_matrix(W.T @ W + n * np.eye(n)))
    b = rng.standard_normal(n)
    Bc = rng.standard_normal((m, n)) * (rng.random((m, n)) < 0.4)
    Bc[np.arange(m), np.arange(m)] += 1.0
    B = finalize(sp.csr_matrix(Bc))
    g = np.full(m, 0.1)
    sols = []
    for order in ("ascending", "descending"):
        Q, R = tf.givens_qr(finalize(sp.csr_matrix(B.toarray().T)), order=order)
        Ahat, bhat, _ = tf.rotate_global(A, b, None, Q)
        x_hat, rep = mg.generalized_mg_solve(
            Ahat, bhat, R, [], mg.Bounds.contact(g),
            mg.MGConfig(nu1=2, nu2=2, tol=1e-12, max_iters=3000))
        assert rep.converged
        sols.append(Q.apply(x_hat))
    assert np.linalg.norm(sols[0] - sols[1]) <= 1e-8
