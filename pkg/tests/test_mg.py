import numpy as np
import pytest
import scipy.sparse as sp

from cutmg import elasticity as el
from cutmg import geometry as geo
from cutmg import mg
from cutmg import qp
from cutmg import transfer as tr
from cutmg import transform as tf
from cutmg.sparse import finalize


def random_spd(n, seed, shift=None):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((n, n))
    return finalize(sp.csr_matrix(W.T @ W + (shift or n) * np.eye(n))), rng


def tri_identity(m):
    return tf.TriangularFactor(np.eye(m))


def reference_gs_forward(A, x, b):
    """Plain python Gauss-Seidel oracle, ascending order."""
    A = A.toarray()
    x = x.copy()
    n = len(x)
    for i in range(n):
        s = b[i]
        for j in range(n):
            if j != i:
                s -= A[i, j] * x[j]
        x[i] = s / A[i, i]
    return x


# ---------------------------------------------------------------- smoothers

def test_pgs_unbounded_equals_plain_gs():
    A, rng = random_spd(8, 0)
    b = rng.standard_normal(8)
    x0 = rng.standard_normal(8)
    bounds = mg.Bounds.free(3)
    x1, active = mg.modified_pgs(A, b, tri_identity(3).lower_csr(), x0, bounds, 1)
    x_ref = reference_gs_forward(A, x0, b)
    assert np.allclose(x1, x_ref, atol=1e-14)
    assert len(active) == 0


def test_pgs_clamped_scalar():
    A = finalize(sp.csr_matrix(np.array([[2.0]])))
    tri = tri_identity(1)
    bounds = mg.Bounds(lb=[-np.inf], ub=[-1.0])
    x, active = mg.modified_pgs(A, np.zeros(1), tri.lower_csr(),
                                np.array([-1.0]), bounds, 1)
    assert x[0] == pytest.approx(-1.0)
    assert list(active) == [0]


def test_pgs_2x2_analytic_projection():
    A = finalize(sp.csr_matrix(2.0 * np.eye(2)))
    b = np.array([2.0, 2.0])
    tri = tri_identity(2)
    bounds = mg.Bounds(lb=[-np.inf, -np.inf], ub=[0.5, 0.5])
    x = np.zeros(2)
    for _ in range(50):
        x, active = mg.modified_pgs(A, b, tri.lower_csr(), x, bounds, 1)
    assert np.allclose(x, [0.5, 0.5], atol=1e-12)
    assert list(active) == [0, 1]


def test_pgs_coupled_bounds_match_qp_oracle():
    rng = np.random.default_rng(5)
    A, _ = random_spd(4, 7)
    b = rng.standard_normal(4) * 2
    R1 = np.triu(rng.random((4, 4)) * 0.5 + 0.1)
    np.fill_diagonal(R1, [1.0, 1.2, 0.8, 1.5])
    tri = tf.TriangularFactor(R1)
    g = np.array([0.2, -0.1, 0.3, 0.0])
    bounds = mg.Bounds.contact(g)
    x = mg.project_feasible(np.zeros(4), tri, bounds)
    for _ in range(200):
        x, _ = mg.modified_pgs(A, b, tri.lower_csr(), x, bounds, 1)
    inst = qp.QPInstance(A=A, b=b, B=finalize(sp.csr_matrix(R1.T)), g=g)
    ref = qp.oracle_qp(inst)
    err = x - ref.x
    assert np.sqrt(err @ (A @ err)) <= 1e-8


def test_pgs_zero_diagonal_errors():
    A = finalize(sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 2.0]])))
    with pytest.raises(ValueError, match="zero diagonal"):
        mg.modified_pgs(A, np.zeros(2), tri_identity(0).lower_csr(),
                        np.zeros(2), mg.Bounds.free(0), 1)


def test_pgs_energy_monotone_and_feasible():
    A, rng = random_spd(10, 3)
    b = rng.standard_normal(10)
    R1 = np.eye(5)
    tri = tf.TriangularFactor(R1)
    g = rng.standard_normal(5) * 0.1
    bounds = mg.Bounds.contact(g)
    x = mg.project_feasible(np.zeros(10), tri, bounds)
    J_prev = mg.energy_value(A, b, x)
    for _ in range(20):
        x, _ = mg.modified_pgs(A, b, tri.lower_csr(), x, bounds, 1)
        J = mg.energy_value(A, b, x)
        assert J <= J_prev + 1e-12
        J_prev = J
        assert np.all(x[:5] <= g + 1e-12)


def test_symmetric_gs_diagonal_exact():
    A = finalize(sp.diags([2.0, 4.0, 8.0]))
    x = mg.symmetric_gs(A, np.zeros(3), np.array([2.0, 4.0, 8.0]), 1)
    assert np.allclose(x, [1.0, 1.0, 1.0])


def test_symmetric_gs_energy_monotone():
    A, rng = random_spd(12, 9)
    b = rng.standard_normal(12)
    x = np.zeros(12)
    J_prev = mg.energy_value(A, b, x)
    for _ in range(10):
        x = mg.symmetric_gs(A, x, b, 1)
        J = mg.energy_value(A, b, x)
        assert J <= J_prev + 1e-12
        J_prev = J


def test_symmetric_gs_matches_reference_iterates():
    A, rng = random_spd(6, 2)
    b = rng.standard_normal(6)
    x = rng.standard_normal(6)
    got = mg.symmetric_gs(A, x, b, 1)
    # oracle: forward then backward explicit sweeps
    ref = reference_gs_forward(A, x, b)
    Ad = A.toarray()
    for i in range(5, -1, -1):
        s = b[i]
        for j in range(6):
            if j != i:
                s -= Ad[i, j] * ref[j]
        ref[i] = s / Ad[i, i]
    assert np.allclose(got, ref, atol=1e-14)


# ---------------------------------------------------------------- truncation

def test_truncation_empty_is_identity():
    R1T = tri_identity(3).lower_csr()
    P = mg.truncation_projector(R1T, np.array([], dtype=int), 6)
    assert (P != sp.eye(6).tocsr()).nnz == 0


def test_truncation_all_active_zeroes_prefix():
    R1 = np.triu(np.random.default_rng(0).random((4, 4)) + 0.5)
    tri = tf.TriangularFactor(R1)
    P = mg.truncation_projector(tri.lower_csr(), np.arange(4), 9)
    r = np.arange(1.0, 10.0)
    rt = mg.truncate_vector_adjoint(r, P)
    assert np.all(rt[:4] == 0.0)
    assert np.array_equal(rt[4:], r[4:])


def test_truncation_preserves_active_rows():
    # prolongated corrections leave active constraint rows untouched
    rng = np.random.default_rng(6)
    m, n = 5, 12
    R1 = np.triu(rng.random((m, m)) * 0.6)
    np.fill_diagonal(R1, 1.0 + rng.random(m))
    tri = tf.TriangularFactor(R1)
    R1T = tri.lower_csr()
    active = np.array([1, 2, 4])
    P = mg.truncation_projector(R1T, active, n)
    for _ in range(20):
        c = rng.standard_normal(n)
        ct = mg.truncate_vector(c, P)
        rows = R1T @ ct[:m]
        assert np.max(np.abs(rows[active])) <= 1e-12
        # inactive entries pass through unchanged
        inactive = np.setdiff1d(np.arange(n), active)
        assert np.array_equal(ct[inactive], c[inactive])
    # projector property
    assert abs(P @ P - P).max() <= 1e-13


def test_truncate_matrix_keeps_diagonal():
    A, _ = random_spd(8, 1)
    tri = tri_identity(4)
    active = np.array([0, 2])
    P = mg.truncation_projector(tri.lower_csr(), active, 8)
    At = mg.truncate_matrix(A, P, active)
    assert At[0, 0] == pytest.approx(A[0, 0])
    assert At[2, 2] == pytest.approx(A[2, 2])
    row0 = At.getrow(0)
    assert row0.nnz == 1  # only the kept diagonal survives


# ---------------------------------------------------------------- cycles

def fitted_elasticity(n, L):
    """Uncut fitted elasticity problem with a multigrid hierarchy."""
    hier = geo.build_hierarchy((0, 1, 0, 1), n, n, L)
    ls = geo.CircleLevelSet((0.5, 0.5), 10.0)
    cls = [geo.classify(m, ls, "signorini") for m in hier.meshes]
    dms = [el.build_dofmap(c) for c in cls]
    mat = {1: el.MaterialParams(10.0, 0.3)}
    A = el.assemble_stiffness(cls[-1], mat, dms[-1])
    b = el.assemble_loads(cls[-1], dms[-1], neumann=[el.NeumannBC("top", (0.0, 1.0))])
    dofs, vals = el.dirichlet_dofs(cls[-1], dms[-1], [el.DirichletBC("bottom")])
    A_el, b_el, _ = el.apply_dirichlet(A, b, dofs, vals)
    transfers = []
    for l in range(1, L + 1):
        T = tr.pseudo_l2_transfer(cls[l - 1], cls[l], dms[l - 1], dms[l])
        if l == L:
            keep = np.ones(dms[l].ndof)
            keep[dofs] = 0.0
            T = finalize(sp.diags(keep) @ T)
        transfers.append(T)
    return A_el, b_el, transfers


def test_one_level_cycle_is_direct_solve():
    A, rng = random_spd(10, 4)
    stack = mg.OperatorStack([A], [])
    r = rng.standard_normal(10)
    c = mg.standard_mg_cycle(stack, r, mg.MGConfig(cycle="V"))
    assert np.linalg.norm(A @ c - r) <= 1e-10 * np.linalg.norm(r)


def test_zero_residual_zero_correction():
    A, _ = random_spd(10, 4)
    stack = mg.OperatorStack([A], [])
    c = mg.standard_mg_cycle(stack, np.zeros(10), mg.MGConfig())
    assert np.all(c == 0.0)


def test_standard_mg_contraction_on_fitted_elasticity():
    A, b, transfers = fitted_elasticity(4, 2)
    stack = mg.OperatorStack.from_fine(A, transfers)
    cfg = mg.MGConfig(cycle="V", nu1=3, nu2=3)
    x = np.zeros_like(b)
    norms = []
    for _ in range(10):
        r = b - A @ x
        x = x + mg.standard_mg_cycle(stack, r, cfg)
        norms.append(np.linalg.norm(b - A @ x))
    factors = [norms[k + 1] / norms[k] for k in range(len(norms) - 2)
               if norms[k] > 1e-14]
    assert max(factors) <= 0.2


# ---------------------------------------------------------------- monitor

def test_monitor_identical_iterates():
    A, _ = random_spd(5, 5)
    mon = mg.ConvergenceMonitor(A)
    x = np.ones(5)
    corr, rate = mon.update(x, x)
    assert corr == 0.0 and rate is None


def test_monitor_geometric_sequence():
    A = finalize(sp.eye(4))
    mon = mg.ConvergenceMonitor(A)
    x = np.ones(4)
    rates = []
    prev = x.copy()
    for k in range(1, 6):
        curr = prev + np.full(4, 0.5 ** k)
        corr, rate = mon.update(prev, curr)
        if rate is not None:
            rates.append(rate)
        prev = curr
    assert np.allclose(rates, 0.5, atol=1e-13)


# ---------------------------------------------------------------- driver

def test_gmg_unconstrained_matches_mg():
    A, b, transfers = fitted_elasticity(4, 1)
    tri = tf.TriangularFactor(np.zeros((0, 0)))
    bounds = mg.Bounds.free(0)
    cfg = mg.MGConfig(cycle="V", nu1=3, nu2=3, tol=1e-12, max_iters=60)
    x, rep = mg.generalized_mg_solve(A, b, tri, transfers, bounds, cfg)
    assert rep.converged
    assert np.linalg.norm(A @ x - b) <= 1e-9 * np.linalg.norm(b)


def test_gmg_two_level_qp_matches_oracle():
    # synthetic QP on a fitted mesh with local constraints on top-edge dofs
    A, b, transfers = fitted_elasticity(3, 1)
    n = A.shape[0]
    rng = np.random.default_rng(12)
    m = 4
    rows, cols, vals = [], [], []
    picked = rng.choice(np.arange(n // 2, n), size=m, replace=False)
    for r, c in enumerate(sorted(picked)):
        rows.append(r)
        cols.append(int(c))
        vals.append(1.0)
    B = finalize(sp.coo_matrix((vals, (rows, cols)), shape=(m, n)))
    g = np.full(m, 1e-4)
    O = finalize(sp.eye(n))
    Q, R = tf.givens_qr(finalize(sp.csr_matrix(B.T)))
    Ahat, bhat, That = tf.rotate_global(A, b, transfers[-1], Q)
    bounds = mg.Bounds.contact(g)
    cfg = mg.MGConfig(cycle="V", nu1=3, nu2=3, tol=1e-12, max_iters=100)
    x_hat, rep = mg.generalized_mg_solve(Ahat, bhat, R, [That], bounds, cfg)
    assert rep.converged
    x = Q.apply(x_hat)
    ref = qp.oracle_qp(qp.QPInstance(A=A, b=b, B=B, g=g))
    err = x - ref.x
    assert np.sqrt(err @ (A @ err)) <= 1e-8


def test_gmg_report_csv(tmp_path):
    A, b, transfers = fitted_elasticity(3, 1)
    tri = tf.TriangularFactor(np.zeros((0, 0)))
    cfg = mg.MGConfig(cycle="V", nu1=2, nu2=2, tol=1e-11, max_iters=50)
    _, rep = mg.generalized_mg_solve(A, b, tri, transfers, mg.Bounds.free(0), cfg)
    path = tmp_path / "report.csv"
    rep.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,correction_A,rate,active_size"
    assert len(lines) == rep.iterations + 1
