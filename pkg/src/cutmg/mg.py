"""Generalized multigrid for quadratic minimization with triangular constraints.

The finest level is smoothed by a projected Gauss-Seidel variant that
resolves the QR-decoupled constraint rows sequentially, clamping one
unknown per constraint.  Active rows are then frozen for the coarse
correction: residual, operator and prolongated correction are passed
through a projector that annihilates the active constraint rows, so
coarse corrections can never change the value of a binding constraint.
Coarse levels solve plain unconstrained problems with symmetric
Gauss-Seidel smoothing and a dense Cholesky factorization at the bottom.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_triangular
from scipy.sparse.linalg import splu

from . import kernels
from .sparse import CholeskyFactor, finalize
from .transfer import galerkin_coarsen
from .transform import TriangularFactor

__all__ = [
    "MGConfig",
    "Bounds",
    "SolveReport",
    "modified_pgs",
    "symmetric_gs",
    "truncation_projector",
    "truncate_vector",
    "truncate_vector_adjoint",
    "truncate_matrix",
    "OperatorStack",
    "standard_mg_cycle",
    "generalized_mg_solve",
    "energy_value",
    "energy_norm_diff",
    "ConvergenceMonitor",
]


@dataclass
class MGConfig:
    cycle: str = "W"
    nu1: int = 5
    nu2: int = 5
    tol: float = 1e-10
    max_iters: int = 100
    track_invariants: bool = False

    @property
    def gamma(self):
        if self.cycle not in ("V", "W"):
            raise ValueError(f"unknown cycle {self.cycle!r}")
        return 1 if self.cycle == "V" else 2


@dataclass
class Bounds:
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound exceeds upper bound")

    @classmethod
    def contact(cls, g):
        g = np.asarray(g, dtype=float)
        return cls(lb=np.full(len(g), -np.inf), ub=g.copy())

    @classmethod
    def free(cls, m):
        return cls(lb=np.full(m, -np.inf), ub=np.full(m, np.inf))


@dataclass
class SolveReport:
    iterations: int = 0
    converged: bool = False
    rho_star: float = float("nan")
    corrections: list = field(default_factory=list)
    rates: list = field(default_factory=list)
    active_sizes: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def write_csv(self, path):
        with open(path, "w") as f:
            f.write("iter,correction_A,rate,active_size\n")
            for k in range(len(self.corrections)):
                rate = self.rates[k]
                rate_s = "" if rate is None else f"{rate:.17g}"
                f.write(f"{k + 1},{self.corrections[k]:.17g},{rate_s},"
                        f"{self.active_sizes[k]}\n")


class _KernelCSR:
    """Raw CSR views plus validated diagonal positions for the jitted sweeps."""

    def __init__(self, A: sp.csr_matrix):
        A = A.tocsr()
        self.indptr = A.indptr
        self.indices = A.indices
        self.data = A.data
        self.diag = kernels.diag_positions(A.shape[0], A.indptr, A.indices)
        if np.any(self.diag < 0):
            i = int(np.nonzero(self.diag < 0)[0][0])
            raise ValueError(f"zero diagonal at row {i}")
        if np.any(self.data[self.diag] == 0.0):
            i = int(np.nonzero(self.data[self.diag] == 0.0)[0][0])
            raise ValueError(f"zero diagonal at row {i}")


def _tri_arrays(R1T: sp.csr_matrix):
    return R1T.indptr, R1T.indices, R1T.data


class _TriPair:
    """Lower (R1^T rows) and upper (R1 rows) views of the triangular factor."""

    def __init__(self, tri):
        if isinstance(tri, _TriPair):
            self.lower = tri.lower
            self.upper = tri.upper
        elif isinstance(tri, TriangularFactor):
            self.lower = tri.lower_csr()
            self.upper = tri.upper_csr()
        else:
            self.lower = finalize(sp.csr_matrix(tri))
            self.upper = finalize(sp.csr_matrix(self.lower.T))
        self.m = self.lower.shape[0]


def _bind_tol(bounds: Bounds):
    finite = np.concatenate([bounds.lb[np.isfinite(bounds.lb)],
                             bounds.ub[np.isfinite(bounds.ub)]])
    scale = np.max(np.abs(finite)) if len(finite) else 0.0
    return 1e-12 * max(scale, 1.0)


def _binding_rows(R1T, x, bounds: Bounds):
    m = R1T.shape[0]
    if m == 0:
        return np.zeros(0, dtype=np.int64)
    rv = R1T @ x[:m]
    tol = _bind_tol(bounds)
    return np.nonzero((rv >= bounds.ub - tol) | (rv <= bounds.lb + tol))[0]


_NO_SKIP = np.zeros(0, dtype=np.uint8)


def modified_pgs(A, b, tri, x, bounds: Bounds, sweeps, skip=None):
    """Projected Gauss-Seidel sweeps; returns (iterate, active row array).

    Each local update minimizes the energy along one coordinate over the
    part of the full feasible set reachable in that direction, so the
    iterate is feasible after every update and the energy never
    increases.  The active set holds the rows binding after the final
    sweep (rows exactly at a bound count as binding).  Rows flagged in
    ``skip`` are left untouched (they belong to an exactly solved block).
    """
    pair = tri if isinstance(tri, _TriPair) else _TriPair(tri)
    m = pair.m
    ker = A if isinstance(A, _KernelCSR) else _KernelCSR(A)
    b = np.asarray(b, dtype=float)
    x = np.array(x, dtype=float, copy=True)
    active = np.zeros(m, dtype=np.uint8)
    ri, rj, rv = _tri_arrays(pair.lower)
    ui, uj, uv = _tri_arrays(pair.upper)
    s = pair.lower @ x[:m] if m else np.zeros(0)
    tol = _bind_tol(bounds)
    skip = _NO_SKIP if skip is None else skip
    for _ in range(sweeps):
        kernels.pgs_sweep(ker.indptr, ker.indices, ker.data, ker.diag, x, b,
                          m, ri, rj, rv, ui, uj, uv, s,
                          bounds.lb, bounds.ub, active, tol, skip)
    return x, np.nonzero(active)[0].astype(np.int64)


def symmetric_gs(A, x, r, sweeps):
    """Forward-then-backward Gauss-Seidel iterations on A x = r."""
    ker = A if isinstance(A, _KernelCSR) else _KernelCSR(A)
    x = np.array(x, dtype=float, copy=True)
    r = np.asarray(r, dtype=float)
    for _ in range(sweeps):
        kernels.gs_forward(ker.indptr, ker.indices, ker.data, ker.diag, x, r)
        kernels.gs_backward(ker.indptr, ker.indices, ker.data, ker.diag, x, r)
    return x


def project_feasible(x, tri, bounds: Bounds):
    """Clamp an iterate into the feasible set by one forward pass."""
    R1T = tri.lower_csr() if isinstance(tri, TriangularFactor) else tri
    x = np.array(x, dtype=float, copy=True)
    ri, rj, rv = _tri_arrays(R1T)
    kernels.project_feasible(x, R1T.shape[0], ri, rj, rv, bounds.lb, bounds.ub)
    return x


class HatSystem:
    """Rotated operator Q^T Abar Q held in the mixed form the solver needs.

    Outside the rotation's footprint (the "band") the rotated basis is
    the nodal one, so those rows are kept as an explicit sparse matrix
    for the sweeps.  The band block, which the rotation makes effectively
    dense, is materialized densely by applying the recorded rotation
    sequence, and matrix-vector products route through the unrotated
    sparse operator and two rotation applications.
    """

    def __init__(self, A_hat=None):
        self.band = np.zeros(0, dtype=np.int64)
        if A_hat is not None:
            self.matrix = finalize(A_hat)
            self.n = A_hat.shape[0]
            self._diag = self.matrix.diagonal()
            self.pgs = _KernelCSR(self.matrix)
            self.skip = None
            self.Abar = None
            self.Q = None
            self.band_dense = None

    @classmethod
    def from_rotation(cls, Abar, Q, m=0):
        from . import kernels
        self = cls()
        n = Abar.shape[0]
        self.n = n
        self.Abar = finalize(Abar)
        self.Q = Q
        band = np.union1d(Q.touched_rows(), np.arange(m, dtype=np.int64))
        self.band = band
        k = len(band)
        if k == 0:
            self.matrix = self.Abar
            self._diag = self.matrix.diagonal()
            self.pgs = _KernelCSR(self.matrix)
            self.skip = None
            self.band_dense = None
            return self

        # dense band block of the rotated operator via two rotation passes
        local = np.full(n, -1, dtype=np.int64)
        local[band] = np.arange(k)
        ii, jj, ccv, ssv = Q.ops_arrays()
        li, lj = local[ii], local[jj]
        W = Abar[band][:, band].toarray()
        kernels.apply_rot_forward_rows(li, lj, ccv, ssv, W)      # Q^T A_bb
        W = np.ascontiguousarray(W.T)
        kernels.apply_rot_forward_rows(li, lj, ccv, ssv, W)      # Q^T (.)^T
        self.band_dense = np.ascontiguousarray(W.T)

        Qbb = np.eye(k)
        kernels.apply_rot_forward_rows(li, lj, ccv, ssv, Qbb)
        self.Qbb = finalize(sp.csr_matrix(np.ascontiguousarray(Qbb.T)))

        # explicit rows for the sweeps: tail rows of the rotated operator,
        # band rows replaced by a unit-diagonal placeholder (never swept)
        mask = np.ones(n, dtype=bool)
        mask[band] = False
        keep = sp.diags(mask.astype(float))
        A_tail_band = finalize((keep @ self.Abar)[:, band] @ self.Qbb)
        co = A_tail_band.tocoo()
        A_pgs = (keep @ self.Abar @ keep
                 + sp.coo_matrix((co.data, (co.row, band[co.col])), shape=(n, n))
                 + sp.diags((~mask).astype(float)))
        self.matrix_tail = finalize(A_pgs)
        self.pgs = _KernelCSR(self.matrix_tail)
        self.skip = (~mask).astype(np.uint8)
        d = self.Abar.diagonal().copy()
        d[band] = np.diag(self.band_dense)
        self._diag = d
        self.matrix = None
        return self

    def matvec(self, v):
        if self.Abar is None:
            return self.matrix @ v
        return self.Q.apply_t(self.Abar @ self.Q.apply(v))

    def diagonal(self):
        return self._diag


class BlockQPSolver:
    """Exact constrained resolution of the rotated coordinate block.

    Coordinate-wise sweeps degrade on two fronts inside the orthogonal
    rotation's footprint: constraint rows couple several unknowns, which
    creates spurious stall corners for projected relaxation, and the
    rotated coordinates there are delocalized mixtures of nodal values,
    which ruins the smoothing property of Gauss-Seidel.  Both are cured
    at once by solving the block of all rotation-touched coordinates
    (which contains the m constrained ones) exactly: a semismooth
    active-set iteration over a dense Cholesky factorization of the band
    block, with Schur complements cached per active set.  Outside the
    block the rotated basis coincides with the nodal one and plain
    sweeps keep their usual smoothing power.
    """

    def __init__(self, system: HatSystem, tri: TriangularFactor, bounds: Bounds):
        from scipy.linalg import cho_factor, cho_solve
        self._cho_solve = cho_solve
        m = tri.m
        self.m = m
        n = system.n
        block = np.union1d(system.band, np.arange(m, dtype=np.int64))
        self.idx = block
        k = len(block)
        if k == 0:
            return
        mask = np.ones(n, dtype=bool)
        mask[block] = False
        self.tail = np.nonzero(mask)[0]
        if system.band_dense is not None:
            A_bb = system.band_dense
            self.A_bt = finalize(system.Qbb.T @ system.Abar[system.band][:, self.tail])
        else:
            csc = sp.csc_matrix(system.matrix)
            cols = csc[:, block]
            A_bb = np.asarray(cols[block, :].todense())
            self.A_bt = sp.csr_matrix(cols[self.tail, :].T)
        self.chol = cho_factor(A_bb, lower=True)
        self.A_bb = A_bb
        # constraint rows R1^T, re-indexed onto the block coordinates
        pos = np.searchsorted(block, np.arange(m))
        coo = tri.lower_csr().tocoo()
        C = sp.csr_matrix((coo.data, (coo.row, pos[coo.col])), shape=(m, k))
        rows, gs = [], []
        up = np.isfinite(bounds.ub)
        if np.any(up):
            rows.append(C[np.nonzero(up)[0]])
            gs.append(bounds.ub[up])
        lo = np.isfinite(bounds.lb)
        if np.any(lo):
            rows.append(-C[np.nonzero(lo)[0]])
            gs.append(-bounds.lb[lo])
        if rows:
            self.C_full = finalize(sp.vstack(rows))
            self.g_full = np.concatenate(gs)
        else:
            self.C_full = sp.csr_matrix((0, k))
            self.g_full = np.zeros(0)
        self.lam = np.zeros(self.C_full.shape[0])
        self._schur_cache = {}

    def _schur(self, active):
        key = active.tobytes()
        hit = self._schur_cache.get(key)
        if hit is None:
            CA = np.asarray(self.C_full[active].todense())
            cols = self._cho_solve(self.chol, CA.T)
            S = np.linalg.cholesky(CA @ cols)
            if len(self._schur_cache) > 24:
                self._schur_cache.clear()
            hit = (CA, S)
            self._schur_cache[key] = hit
        return hit

    def solve(self, b_hat, x):
        """Minimize over the block with the tail fixed; returns the new iterate."""
        if len(self.idx) == 0:
            return x
        idx = self.idx
        rhs = b_hat[idx] - self.A_bt @ x[self.tail]
        y = x[idx].copy()
        lam = self.lam
        x_free = self._cho_solve(self.chol, rhs)
        for _ in range(100):
            active = np.nonzero(lam + (self.C_full @ y - self.g_full) > 0.0)[0]
            if len(active):
                CA, S = self._schur(active)
                rhs_s = CA @ x_free - self.g_full[active]
                lam_A = np.linalg.solve(S.T, np.linalg.solve(S, rhs_s))
                lam = np.zeros(self.C_full.shape[0])
                lam[active] = lam_A
                y = self._cho_solve(self.chol, rhs - self.C_full.T @ lam)
            else:
                lam = np.zeros(self.C_full.shape[0])
                y = x_free.copy()
            rd = self.A_bb @ y + self.C_full.T @ lam - rhs
            comp = lam - np.maximum(0.0, lam + (self.C_full @ y - self.g_full))
            scale = max(float(np.linalg.norm(rhs)), 1.0)
            if np.linalg.norm(rd) + np.linalg.norm(comp) <= 1e-13 * scale:
                break
        self.lam = lam
        x = x.copy()
        x[idx] = y
        return x


def truncation_projector(R1T: sp.csr_matrix, active, n) -> sp.csr_matrix:
    """Projector onto { v : (R1^T v)_i = 0 for active i }.

    Inactive entries pass through unchanged; active entries are resolved
    by forward substitution so every active constraint row of the output
    vanishes identically.  With no coupling between an active row and
    earlier inactive unknowns this reduces to zeroing the active entries,
    the classical truncation of pointwise-constrained multigrid.
    """
    active = np.asarray(active, dtype=np.int64)
    active_set = set(active.tolist())
    indptr, indices, data = R1T.indptr, R1T.indices, R1T.data
    prows = {}
    rows, cols, vals = [], [], []
    for i in active:
        lastk = indptr[i + 1] - 1
        rii = data[lastk]
        row = {}
        for k in range(indptr[i], lastk):
            j = int(indices[k])
            coef = -data[k] / rii
            if coef == 0.0:
                continue
            if j in active_set:
                for col, v in prows[j].items():
                    row[col] = row.get(col, 0.0) + coef * v
            else:
                row[j] = row.get(j, 0.0) + coef
        prows[int(i)] = row
        for col, v in row.items():
            if v != 0.0:
                rows.append(int(i))
                cols.append(col)
                vals.append(v)
    ident = np.setdiff1d(np.arange(n), active)
    rows.extend(ident.tolist())
    cols.extend(ident.tolist())
    vals.extend([1.0] * len(ident))
    return finalize(sp.coo_matrix((vals, (rows, cols)), shape=(n, n)))


def truncate_vector(v, P):
    """Correction-side truncation: output lies in the safe subspace."""
    return P @ v


def pin_and_clip_correction(x, c, pair, bounds: Bounds, active):
    """Final safeguard making a prolongated correction constraint-safe.

    Forward substitution over the constraint rows: active rows are pinned
    exactly at their pre-correction values, inactive rows that the
    correction pushed past a bound are clipped onto it.  Every adjustment
    acts on the row's own coordinate, so moves stay bounded by the
    triangular diagonal and earlier rows are never disturbed.
    """
    m = pair.m
    if m == 0:
        return c
    lower = pair.lower
    upper = pair.upper
    s_x = lower @ x[:m]
    c = np.array(c, dtype=float, copy=True)
    s_c = lower @ c[:m]
    is_active = np.zeros(m, dtype=bool)
    is_active[active] = True
    ui, uj, uv = upper.indptr, upper.indices, upper.data
    for k in range(m):
        s_new = s_x[k] + s_c[k]
        if is_active[k]:
            target = s_x[k]
        elif s_new > bounds.ub[k]:
            target = bounds.ub[k]
        elif s_new < bounds.lb[k]:
            target = bounds.lb[k]
        else:
            continue
        rkk = uv[ui[k]]
        delta = (target - s_new) / rkk
        if delta == 0.0:
            continue
        c[k] += delta
        for p in range(ui[k], ui[k + 1]):
            s_c[uj[p]] += uv[p] * delta
    return c


def truncate_vector_adjoint(r, P):
    """Residual-side truncation: active entries are annihilated."""
    return P.T @ r


def truncate_matrix(A, P, active):
    """Operator truncation; original diagonal kept on the zeroed rows."""
    At = P.T @ (A @ P)
    At = 0.5 * (At + At.T)
    if len(active):
        d = np.zeros(A.shape[0])
        d[active] = A.diagonal()[active]
        At = At + sp.diags(d)
    return finalize(At)


class _DirectSolver:
    """Coarsest-level direct solve: dense Cholesky while small, LU above."""

    DENSE_LIMIT = 2048

    def __init__(self, A):
        if A.shape[0] <= self.DENSE_LIMIT:
            self._chol = CholeskyFactor(A)
            self._lu = None
        else:
            from scipy.sparse.linalg import splu
            self._chol = None
            self._lu = splu(sp.csc_matrix(A))

    def solve(self, r):
        if self._chol is not None:
            return self._chol.solve(r)
        return self._lu.solve(r)


class OperatorStack:
    """Galerkin hierarchy below the finest level for the inner cycles.

    ``A_levels[0]`` is the coarsest operator; ``transfers[k]`` prolongates
    level k to level k+1.  Operators are built once per stack and reused
    across all cycle visits; the coarsest factorization is shared too.
    """

    def __init__(self, A_levels, transfers):
        if len(A_levels) != len(transfers) + 1:
            raise ValueError("level/transfer count mismatch")
        self.A = A_levels
        self.T = transfers
        self.kernel = [None] + [_KernelCSR(A) for A in A_levels[1:]]
        self.coarse = _DirectSolver(A_levels[0])

    @classmethod
    def from_fine(cls, A_top, transfers):
        """Coarsen A_top through the transfer list (coarse to fine order)."""
        levels = [A_top]
        for T in reversed(transfers):
            levels.append(galerkin_coarsen(levels[-1], T))
        return cls(levels[::-1], list(transfers))

    def n_levels(self):
        return len(self.A)

    def cycle(self, lvl, r, c, nu1, nu2, gamma):
        """One multigrid cycle on level ``lvl`` for A c = r, initial guess c."""
        if lvl == 0:
            return self.coarse.solve(r)
        ker = self.kernel[lvl]
        c = np.zeros_like(r) if c is None else np.array(c, dtype=float, copy=True)
        for _ in range(nu1):
            kernels.gs_forward(ker.indptr, ker.indices, ker.data, ker.diag, c, r)
            kernels.gs_backward(ker.indptr, ker.indices, ker.data, ker.diag, c, r)
        T = self.T[lvl - 1]
        rc = T.T @ (r - self.A[lvl] @ c)
        cc = None
        for _ in range(gamma):
            cc = self.cycle(lvl - 1, rc, cc, nu1, nu2, gamma)
        c += T @ cc
        for _ in range(nu2):
            kernels.gs_forward(ker.indptr, ker.indices, ker.data, ker.diag, c, r)
            kernels.gs_backward(ker.indptr, ker.indices, ker.data, ker.diag, c, r)
        return c


def standard_mg_cycle(stack: OperatorStack, residual, config: MGConfig,
                      initial=None):
    """Correction returned by one V/W cycle on the top level of the stack."""
    return stack.cycle(stack.n_levels() - 1, np.asarray(residual, dtype=float),
                       initial, config.nu1, config.nu2, config.gamma)


def energy_value(A, b, x):
    return 0.5 * float(x @ (A @ x)) - float(b @ x)


def energy_norm_diff(A, x_prev, x_curr):
    d = x_curr - x_prev
    return float(np.sqrt(max(d @ (A @ d), 0.0)))


class ConvergenceMonitor:
    """Energy-norm corrections and their ratios across outer iterations."""

    def __init__(self, A):
        if callable(A):
            self.matvec = A
        else:
            self.matvec = lambda v: A @ v
        self.prev_correction = None

    def update(self, x_prev, x_curr):
        d = x_curr - x_prev
        corr = float(np.sqrt(max(d @ self.matvec(d), 0.0)))
        rate = None if self.prev_correction in (None, 0.0) \
            else corr / self.prev_correction
        self.prev_correction = corr
        return corr, rate


def generalized_mg_solve(A_hat, b_hat, tri: TriangularFactor, transfers,
                         bounds: Bounds, config: MGConfig,
                         coarse_builder=None, aux_modes=None):
    """Outer constrained multigrid iteration on the rotated system.

    ``A_hat`` is the rotated operator, either explicit sparse or a
    :class:`HatSystem`; ``transfers`` is the level stack [T_1, ...,
    T_{L-1}, T_hat_L] with the finest (rotated) operator last; an empty
    list degenerates to the smoother alone.  Returns (x_hat, SolveReport).

    The truncated hierarchy depends only on the active set, so it is
    cached and rebuilt only when the set changes.  ``coarse_builder``
    optionally supplies the top coarse operator (active, P) -> A_{L-1}
    through a cheaper but algebraically identical product.

    ``aux_modes`` (n x k) spans near-kernel directions, e.g. rigid modes
    of floating bodies, which neither the smoother (tiny Rayleigh
    quotients) nor the geometric coarse space (cut cells represent them
    inexactly) can resolve; they get an exact subspace correction each
    iteration.
    """
    system = A_hat if isinstance(A_hat, HatSystem) else HatSystem(A_hat)
    n = system.n
    m = tri.m
    pair = _TriPair(tri)
    R1T = pair.lower
    ker = system.pgs
    skip = system.skip
    b_hat = np.asarray(b_hat, dtype=float)
    matvec = system.matvec
    if coarse_builder is None and system.matrix is None and transfers:
        raise ValueError("implicit rotated system requires a coarse_builder")

    def energy(v):
        return 0.5 * float(v @ matvec(v)) - float(b_hat @ v)

    x = np.zeros(n)
    if m:
        viol = R1T @ x[:m]
        if np.any(viol > bounds.ub) or np.any(viol < bounds.lb):
            x = project_feasible(x, R1T, bounds)

    block = BlockQPSolver(system, tri, bounds) \
        if (m or len(system.band)) else None
    report = SolveReport()
    track = config.track_invariants
    if track:
        report.diagnostics = {"energy": [], "feasibility": [],
                              "active_row_drift": [], "active_sets": []}
    monitor = ConvergenceMonitor(matvec)
    stack_cache = {}

    for it in range(1, config.max_iters + 1):
        x_start = x.copy()
        J_start = energy(x) if track else None

        x, active = modified_pgs(ker, b_hat, pair, x, bounds, config.nu1, skip)
        if block is not None:
            x = block.solve(b_hat, x)
            active = _binding_rows(R1T, x, bounds)

        drift = 0.0
        if transfers:
            r = b_hat - matvec(x)
            frozen = active
            if m:
                # freeze, in addition to the binding rows, every row the
                # semismooth complementarity test declares active: rows whose
                # recovered multiplier exceeds their slack carry contact
                # pressure even if a smoothing fluctuation momentarily
                # released them, and coarse corrections must not fight them
                lam_est = solve_triangular(tri.R1, r[:m], lower=False)
                rv = R1T @ x[:m]
                slack = np.minimum(bounds.ub - rv, rv - bounds.lb)
                ss = np.nonzero(lam_est - slack > 0.0)[0]
                frozen = np.union1d(active, ss)
            key = frozen.tobytes()
            if key not in stack_cache:
                P = truncation_projector(R1T, frozen, n)
                T_top = transfers[-1]
                if coarse_builder is not None:
                    A_coarse_top = coarse_builder(frozen, P)
                else:
                    A_trc = truncate_matrix(system.matrix, P, frozen)
                    A_coarse_top = galerkin_coarsen(A_trc, T_top)
                aux = None
                if aux_modes is not None and aux_modes.shape[1]:
                    # near-kernel modes projected onto the contact-compatible
                    # subspace; the exact minimization over their span then
                    # never fights the frozen constraint rows
                    ZP = np.column_stack([P @ aux_modes[:, k]
                                          for k in range(aux_modes.shape[1])])
                    AZ = np.column_stack([matvec(ZP[:, k])
                                          for k in range(ZP.shape[1])])
                    G = ZP.T @ AZ
                    G = G + 1e-14 * max(np.trace(G), 1.0) * np.eye(G.shape[0])
                    aux = (ZP, np.linalg.cholesky(G))
                if len(stack_cache) > 24:
                    stack_cache.clear()
                stack_cache[key] = (
                    P, OperatorStack.from_fine(A_coarse_top, transfers[:-1]),
                    aux)
            P, stack, aux = stack_cache[key]
            T_top = transfers[-1]
            r_trc = truncate_vector_adjoint(r, P)
            rc = T_top.T @ r_trc
            cc = None
            for _ in range(config.gamma):
                cc = stack.cycle(stack.n_levels() - 1, rc, cc,
                                 config.nu1, config.nu2, config.gamma)
            c_hat = truncate_vector(T_top @ cc, P)
            c_hat = pin_and_clip_correction(x, c_hat, pair, bounds, frozen)
            if m and len(active):
                drift = float(np.max(np.abs((R1T @ c_hat[:m])[active])))
            x = x + c_hat

            if aux is not None:
                Z, G_chol = aux
                r = b_hat - matvec(x)
                alpha = np.linalg.solve(G_chol.T,
                                        np.linalg.solve(G_chol, Z.T @ r))
                c_aux = pin_and_clip_correction(x, Z @ alpha, pair, bounds,
                                                frozen)
                if m and len(active):
                    drift = max(drift, float(
                        np.max(np.abs((R1T @ c_aux[:m])[active]))))
                x = x + c_aux

        x, active_post = modified_pgs(ker, b_hat, pair, x, bounds, config.nu2, skip)
        if block is not None:
            x = block.solve(b_hat, x)
            active_post = _binding_rows(R1T, x, bounds)

        corr, rate = monitor.update(x_start, x)
        report.corrections.append(corr)
        report.rates.append(rate)
        report.active_sizes.append(int(len(active)))
        if track:
            report.diagnostics["energy"].append((J_start, energy(x)))
            feas = 0.0
            if m:
                rv = R1T @ x[:m]
                feas = max(float(np.max(rv - bounds.ub, initial=0.0)),
                           float(np.max(bounds.lb - rv, initial=0.0)))
            report.diagnostics["feasibility"].append(feas)
            report.diagnostics["active_row_drift"].append(drift)
            report.diagnostics["active_sets"].append(tuple(active.tolist()))

        report.iterations = it
        if corr < config.tol:
            report.converged = True
            break

    if report.rates and report.rates[-1] is not None:
        report.rho_star = report.rates[-1]
    return x, report
