"""Reference solvers for the constrained quadratic program.

Three independent routes to the same minimizer: exhaustive active-set
enumeration (exact, small m only), a semismooth Newton iteration on the
complementarity system, and a Mehrotra predictor-corrector interior
point method in slack form.  They exist to cross-check the multigrid
solver and to reproduce iteration-count comparisons.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .sparse import finalize, load_matrix_market, save_matrix_market

__all__ = ["QPInstance", "KKTPoint", "oracle_qp", "semismooth_newton",
           "interior_point"]


@dataclass
class QPInstance:
    """min 1/2 x^T A x - b^T x  subject to  B x <= g, with SPD A."""

    A: sp.csr_matrix
    b: np.ndarray
    B: sp.csr_matrix
    g: np.ndarray

    def __post_init__(self):
        self.A = finalize(self.A)
        self.B = finalize(self.B)
        self.b = np.asarray(self.b, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        d = self.A - self.A.T
        if d.nnz and np.max(np.abs(d.data)) > 1e-12 * max(np.max(np.abs(self.A.data)), 1.0):
            raise ValueError("A must be symmetric")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[0]

    def objective(self, x):
        return 0.5 * float(x @ (self.A @ x)) - float(self.b @ x)

    def save(self, prefix):
        save_matrix_market(f"{prefix}_A.mtx", self.A)
        save_matrix_market(f"{prefix}_B.mtx", self.B)
        np.savetxt(f"{prefix}_b.txt", self.b)
        np.savetxt(f"{prefix}_g.txt", self.g)

    @classmethod
    def load(cls, prefix):
        return cls(A=load_matrix_market(f"{prefix}_A.mtx"),
                   b=np.loadtxt(f"{prefix}_b.txt"),
                   B=load_matrix_market(f"{prefix}_B.mtx"),
                   g=np.loadtxt(f"{prefix}_g.txt"))


@dataclass
class KKTPoint:
    x: np.ndarray
    lam: np.ndarray
    iterations: int = 0
    converged: bool = True
    residual: float = 0.0
    history: list = field(default_factory=list)


def oracle_qp(inst: QPInstance, feas_tol=1e-9) -> KKTPoint:
    """Exact minimizer by enumerating all active subsets (m <= 20)."""
    m, n = inst.m, inst.n
    if m > 20:
        raise ValueError("oracle enumeration limited to m <= 20")
    A = inst.A.toarray()
    B = inst.B.toarray()
    scale = max(np.max(np.abs(inst.g), initial=0.0), 1.0)
    best = None
    for mask in range(1 << m):
        S = [i for i in range(m) if mask >> i & 1]
        k = len(S)
        K = np.zeros((n + k, n + k))
        K[:n, :n] = A
        if k:
            K[:n, n:] = B[S].T
            K[n:, :n] = B[S]
        rhs = np.concatenate([inst.b, inst.g[S]])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            continue
        x, lam_S = sol[:n], sol[n:]
        if np.any(inst.B @ x > inst.g + feas_tol * scale):
            continue
        if k and np.any(lam_S < -feas_tol * scale):
            continue
        J = inst.objective(x)
        if best is None or J < best[0] - 1e-15:
            lam = np.zeros(m)
            lam[S] = lam_S
            best = (J, x, lam)
    if best is None:
        raise ValueError("no active subset yields a KKT point; problem infeasible?")
    return KKTPoint(x=best[1], lam=best[2])


def _kkt_residual(inst, x, lam, c=1.0):
    rd = inst.A @ x + inst.B.T @ lam - inst.b
    comp = lam - np.maximum(0.0, lam + c * (inst.B @ x - inst.g))
    return float(np.linalg.norm(np.concatenate([rd, comp])))


def semismooth_newton(inst: QPInstance, tol=1e-10, max_iter=100, c=1.0) -> KKTPoint:
    """Active-set Newton iteration on the nonsmooth KKT system.

    Each step solves the saddle system restricted to the current active
    guess; A is factored once and reused through a Schur complement.
    """
    n, m = inst.n, inst.m
    lu = splu(sp.csc_matrix(inst.A))
    x = lu.solve(inst.b)
    lam = np.zeros(m)
    if m == 0:
        return KKTPoint(x=x, lam=lam, iterations=1, residual=0.0)
    scale = max(np.linalg.norm(inst.b), 1.0)
    x_free = x.copy()
    history = []
    for it in range(1, max_iter + 1):
        active = np.nonzero(lam + c * (inst.B @ x - inst.g) > 0.0)[0]
        if len(active):
            BA = inst.B[active]
            rhs_cols = lu.solve(np.asarray(BA.todense()).T)
            S = BA @ rhs_cols
            lam_A = np.linalg.solve(S, BA @ x_free - inst.g[active])
            lam = np.zeros(m)
            lam[active] = lam_A
            x = lu.solve(inst.b - inst.B.T @ lam)
        else:
            lam = np.zeros(m)
            x = x_free.copy()
        res = _kkt_residual(inst, x, lam, c)
        history.append(res)
        if res <= tol * scale:
            return KKTPoint(x=x, lam=lam, iterations=it, converged=True,
                            residual=res, history=history)
    return KKTPoint(x=x, lam=lam, iterations=max_iter, converged=False,
                    residual=history[-1] if history else np.inf, history=history)


def interior_point(inst: QPInstance, tol=1e-10, max_iter=100,
                   boundary_frac=0.995) -> KKTPoint:
    """Mehrotra predictor-corrector on the slack form B x + s = g.

    The reduced SPD system (A + B^T diag(lam/s) B) is factored once per
    iteration and solved twice (predictor and corrector).
    """
    n, m = inst.n, inst.m
    if m == 0:
        x = splu(sp.csc_matrix(inst.A)).solve(inst.b)
        return KKTPoint(x=x, lam=np.zeros(0), iterations=1, residual=0.0)
    x = np.zeros(n)
    s = 1.1 * np.maximum(inst.g - inst.B @ x, 1.0)
    lam = np.ones(m)
    scale = max(np.linalg.norm(inst.b), np.linalg.norm(inst.g), 1.0)
    history = []

    def max_step(v, dv):
        neg = dv < 0.0
        if not np.any(neg):
            return 1.0
        return min(1.0, float(np.min(-v[neg] / dv[neg])))

    for it in range(1, max_iter + 1):
        rd = inst.A @ x + inst.B.T @ lam - inst.b
        rp = inst.B @ x + s - inst.g
        mu = float(s @ lam) / m
        history.append(mu)
        if mu <= tol * scale and np.linalg.norm(rp) <= tol * scale * 10 \
                and np.linalg.norm(rd) <= tol * scale * 10:
            return KKTPoint(x=x, lam=lam, iterations=it - 1, converged=True,
                            residual=mu, history=history)
        D = lam / s
        M = inst.A + inst.B.T @ sp.diags(D) @ inst.B
        lu = splu(sp.csc_matrix(M))

        def solve_step(rc):
            rhs = -rd - inst.B.T @ ((-rc + lam * rp) / s)
            dx = lu.solve(rhs)
            ds = -rp - inst.B @ dx
            dlam = (-rc - lam * ds) / s
            return dx, ds, dlam

        # predictor: pure Newton on the complementarity residual
        rc_aff = s * lam
        dx_a, ds_a, dl_a = solve_step(rc_aff)
        alpha_p = max_step(s, ds_a)
        alpha_d = max_step(lam, dl_a)
        mu_aff = float((s + alpha_p * ds_a) @ (lam + alpha_d * dl_a)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # corrector with centering
        rc = s * lam + ds_a * dl_a - sigma * mu
        dx, ds, dlam = solve_step(rc)
        alpha_p = boundary_frac * max_step(s, ds)
        alpha_d = boundary_frac * max_step(lam, dlam)
        if min(alpha_p, alpha_d) < 1e-14:
            return KKTPoint(x=x, lam=lam, iterations=it, converged=False,
                            residual=mu, history=history)
        x = x + alpha_p * dx
        s = s + alpha_p * ds
        lam = lam + alpha_d * dlam

    mu = float(s @ lam) / m
    return KKTPoint(x=x, lam=lam, iterations=max_iter, converged=False,
                    residual=mu, history=history)
