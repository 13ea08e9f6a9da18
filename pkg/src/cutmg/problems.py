"""Benchmark problem definitions and the end-to-end solve pipelines.

Four shipped configurations: two Signorini bodies pressed against rigid
lines (a semicircle and a wavy semicircle) and two embedded two-body
problems (circular and elliptical inclusion squeezed inside a loaded
square).  A problem is assembled level by level into the constrained
quadratic program, then handed to the generalized multigrid driver or to
one of the reference solvers on the identical algebraic system.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_triangular

from . import elasticity as el
from . import geometry as geo
from . import mg
from . import multiplier as mp
from . import qp
from . import transfer as tr
from . import transform as tf
from .sparse import finalize

__all__ = ["ProblemSpec", "example", "AssembledProblem", "assemble_problem",
           "solve_gmg", "solve_reference", "GMGResult", "EXAMPLE_IDS"]

EXAMPLE_IDS = ("ex1_sc", "ex2_sc", "ex1_tc", "ex2_tc")


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    bounds: tuple
    nx0: int
    ny0: int
    mode: str
    levelset: object
    dirichlet: tuple
    neumann: tuple
    obstacle: object
    E: dict
    nu: dict


def example(name, E2=None) -> ProblemSpec:
    """Shipped benchmark definitions; E2 overrides the second body's modulus."""
    if name == "ex1_sc":
        return ProblemSpec(
            name=name, bounds=(-1.09, 1.09, 0.0, 1.09), nx0=100, ny0=50,
            mode="signorini",
            levelset=geo.CircleLevelSet((0.0, 1.0), 0.9),
            dirichlet=(el.DirichletBC("top", (0.0, 0.0)),),
            neumann=(),
            obstacle=mp.LineObstacle((0.0, 0.12), (0.0, 1.0)),
            E={1: 10.0}, nu={1: 0.3})
    if name == "ex2_sc":
        return ProblemSpec(
            name=name, bounds=(-1.09, 1.09, 0.0, 1.09), nx0=100, ny0=50,
            mode="signorini",
            levelset=geo.WavyLevelSet((1e-5, 1.0 + 1e-5), 1.31111),
            dirichlet=(el.DirichletBC("top", (0.0, 0.0)),),
            neumann=(),
            obstacle=mp.LineObstacle((0.2, 0.0), (0.7, 1.2)),
            E={1: 10.0}, nu={1: 0.3})
    if name == "ex1_tc":
        return ProblemSpec(
            name=name, bounds=(0.0, 1.0, 0.0, 1.0), nx0=50, ny0=50,
            mode="two_body",
            levelset=geo.CircleLevelSet((0.5, 0.5), math.sqrt(3.0 - 2.0 * math.sqrt(2.0))),
            dirichlet=(el.DirichletBC("bottom", (0.0, 0.0)),),
            neumann=(el.NeumannBC("top", (0.0, 5.0)),),
            obstacle=None,
            E={1: 10.0, 2: E2 if E2 is not None else 10.0}, nu={1: 0.3, 2: 0.3})
    if name == "ex2_tc":
        return ProblemSpec(
            name=name, bounds=(0.0, 1.0, 0.0, 1.0), nx0=50, ny0=50,
            mode="two_body",
            levelset=geo.EllipseLevelSet(
                (0.5, 0.5), math.sqrt(2.0 * (3.0 - 2.0 * math.sqrt(2.0))), 1.0, 0.8),
            dirichlet=(el.DirichletBC("bottom", (0.0, 0.0)),),
            neumann=(el.NeumannBC("top", (0.0, 5.0)),),
            obstacle=None,
            E={1: 10.0, 2: E2 if E2 is not None else 10.0}, nu={1: 0.3, 2: 0.3})
    raise ValueError(f"unknown problem id {name!r}")


@dataclass
class AssembledProblem:
    spec: ProblemSpec
    level: int
    classifications: list
    dofmaps: list
    materials: dict
    eps_ghost: float
    A: sp.csr_matrix
    b: np.ndarray
    lift: np.ndarray
    dirichlet: np.ndarray
    B: sp.csr_matrix
    g: np.ndarray
    basis: mp.MultiplierBasis
    kept_rows: np.ndarray
    floating: list = field(default_factory=list)

    @property
    def cls(self):
        return self.classifications[-1]

    @property
    def dofmap(self):
        return self.dofmaps[-1]

    def instance(self) -> qp.QPInstance:
        return qp.QPInstance(A=self.A, b=self.b, B=self.B, g=self.g)


def assemble_problem(spec: ProblemSpec, level, *, eps_ghost=1e-2,
                     materials=None, reg_floating=1e-8,
                     mesh_shift=(0.0, 0.0)) -> AssembledProblem:
    """Geometry, stabilized stiffness, loads and constraints for one level."""
    hier = geo.build_hierarchy(spec.bounds, spec.nx0, spec.ny0, level)
    if mesh_shift != (0.0, 0.0):
        hier = hier.translated(*mesh_shift)
    classifications = [geo.classify(m, spec.levelset, spec.mode)
                       for m in hier.meshes]
    dofmaps = [el.build_dofmap(c) for c in classifications]
    cls, dm = classifications[-1], dofmaps[-1]

    if materials is None:
        materials = {d: el.MaterialParams(spec.E[d], spec.nu[d]) for d in cls.domains}

    A = el.assemble_stiffness(cls, materials, dm)
    if eps_ghost > 0.0:
        A = finalize(A + el.assemble_ghost_penalty(cls, materials, eps_ghost, dm))
    b = el.assemble_loads(cls, dm, neumann=spec.neumann)

    dofs, vals = el.dirichlet_dofs(cls, dm, spec.dirichlet)

    # a body without any Dirichlet dof floats: shift its diagonal so the
    # rigid modes become mildly penalized and every solver sees an SPD system
    if reg_floating > 0.0:
        for domain in cls.domains:
            lo = dm.offset[domain]
            hi = lo + 2 * dm.count[domain]
            if not np.any((dofs >= lo) & (dofs < hi)):
                d = np.zeros(dm.ndof)
                d[lo:hi] = reg_floating * materials[domain].E
                A = finalize(A + sp.diags(d))

    A_el, b_el, lift = el.apply_dirichlet(A, b, dofs, vals)

    vital = mp.select_vital_vertices(cls)
    basis = mp.build_multiplier_basis(cls, vital)
    B, g = mp.assemble_constraints(cls, dm, basis, spec.obstacle)
    B, g, kept = el.constrain_columns(B, g, dofs, lift)

    floating = [d for d in cls.domains
                if not np.any((dofs >= dm.offset[d])
                              & (dofs < dm.offset[d] + 2 * dm.count[d]))]

    return AssembledProblem(spec=spec, level=level,
                            classifications=classifications, dofmaps=dofmaps,
                            materials=materials, eps_ghost=eps_ghost,
                            A=A_el, b=b_el, lift=lift, dirichlet=dofs,
                            B=B, g=g, basis=basis, kept_rows=kept,
                            floating=floating)


def build_transfer_stack(ap: AssembledProblem):
    """Plain per-pair transfers with fine Dirichlet rows removed on top."""
    transfers = []
    L = ap.level
    for l in range(1, L + 1):
        T = tr.pseudo_l2_transfer(ap.classifications[l - 1], ap.classifications[l],
                                  ap.dofmaps[l - 1], ap.dofmaps[l])
        if l == L and len(ap.dirichlet):
            keep = np.ones(ap.dofmaps[l].ndof)
            keep[ap.dirichlet] = 0.0
            T = finalize(sp.diags(keep) @ T)
        transfers.append(T)
    return transfers


@dataclass
class GMGResult:
    u: np.ndarray                 # full displacement coefficients (with lift)
    x: np.ndarray                 # homogenized solution in the original basis
    lam: np.ndarray               # recovered multipliers per vital vertex
    report: mg.SolveReport
    vital_sigma_n: np.ndarray     # -lambda_h at the vital vertices
    vital_points: np.ndarray
    vital_gaps: np.ndarray
    active: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def _vital_sigma_n(ap: AssembledProblem, lam_kept):
    """Contact pressure -lambda_h evaluated at every vital vertex."""
    basis = ap.basis
    vital = basis.vital
    m_all = basis.m
    lam = np.zeros(m_all)
    lam[ap.kept_rows] = lam_kept
    pts = np.asarray(vital.vital_points)
    sigma = np.zeros(len(pts))
    edge_cell = {}
    for seg in ap.cls.segments:
        edge_cell.setdefault(seg.edge0, seg.cell)
        edge_cell.setdefault(seg.edge1, seg.cell)
    for k, e in enumerate(vital.vital_edges):
        cell = edge_cell[e]
        psis = basis.evaluate(ap.cls, cell, pts[k][None, :])
        sigma[k] = -sum(lam[r] * v[0] for r, v in psis.items())
    gaps = ap.spec.obstacle.gap(pts) if ap.spec.obstacle is not None \
        else np.zeros(len(pts))
    return sigma, pts, gaps


def rigid_modes(ap: AssembledProblem):
    """Rigid-body modes of floating domains, normalized, as dense columns."""
    if not ap.floating:
        return None
    dm, cls = ap.dofmap, ap.cls
    cols = []
    for d in ap.floating:
        nodes = dm.active_nodes(d)
        xy = cls.mesh.node_coords(nodes)
        dofs = dm.node_dofs(d, nodes)
        c = xy.mean(axis=0)
        for mode in ("tx", "ty", "rot"):
            z = np.zeros(dm.ndof)
            if mode == "tx":
                z[dofs[:, 0]] = 1.0
            elif mode == "ty":
                z[dofs[:, 1]] = 1.0
            else:
                z[dofs[:, 0]] = -(xy[:, 1] - c[1])
                z[dofs[:, 1]] = xy[:, 0] - c[0]
            cols.append(z / np.linalg.norm(z))
    return np.column_stack(cols)


def solve_gmg(ap: AssembledProblem, config: mg.MGConfig) -> GMGResult:
    """Full generalized multigrid pipeline on an assembled problem."""
    cls, dm = ap.cls, ap.dofmap
    normals = tf.compute_nodal_normals(cls)
    O = tf.build_householder(normals, dm)
    Abar, bbar, Bbar = tf.rotate_local(ap.A, ap.b, ap.B, O)
    Q, R1 = tf.givens_qr(finalize(sp.csr_matrix(Bbar.T)))

    system = mg.HatSystem.from_rotation(Abar, Q, m=R1.m)
    bhat = Q.apply_t(bbar)

    transfers = build_transfer_stack(ap)
    coarse_builder = None
    if transfers:
        Qs = Q.to_sparse()
        That = finalize(Qs.T @ (O @ transfers[-1]))
        stack = tr.compose_hierarchy(transfers[:-1], That)
        diag_hat = system.diagonal()
        # base Galerkin operator: the orthogonal factors cancel, so the
        # untruncated coarse operator is the plain one; the active-set
        # truncation enters as a low-rank correction handled below
        A_c0 = tr.galerkin_coarsen(ap.A, transfers[-1])
        band = system.band
        band_local = np.full(ap.dofmap.ndof, -1, dtype=np.int64)
        band_local[band] = np.arange(len(band))

        def hat_column(f):
            v = np.zeros(ap.dofmap.ndof)
            v[f] = 1.0
            return Q.apply_t(Abar @ Q.apply(v))

        def coarse_builder(frozen, P):
            if len(frozen) == 0:
                return A_c0
            # effective prolongation P @ That = That + E_F W with the
            # truncation acting on the frozen rows only
            W = finalize(P[frozen] @ That - That[frozen])
            cols = np.column_stack([hat_column(f) for f in frozen])
            G1 = finalize(sp.csr_matrix(That.T @ cols))
            A_ff = system.band_dense[np.ix_(band_local[frozen],
                                            band_local[frozen])]
            S1 = G1 @ W
            S2 = W.T @ (finalize(sp.csr_matrix(A_ff)) @ W)
            Ac = A_c0 + S1 + S1.T + S2
            rows = finalize(sp.diags(np.sqrt(diag_hat[frozen])) @ That[frozen])
            Ac = Ac + rows.T @ rows
            Ac = 0.5 * (Ac + Ac.T)
            return finalize(Ac)
    else:
        stack = []

    aux = rigid_modes(ap)
    if aux is not None:
        aux = np.column_stack([Q.apply_t(O @ aux[:, k])
                               for k in range(aux.shape[1])])
    bounds = mg.Bounds.contact(ap.g)
    x_hat, report = mg.generalized_mg_solve(system, bhat, R1, stack, bounds,
                                            config, coarse_builder=coarse_builder,
                                            aux_modes=aux)

    x = O @ Q.apply(x_hat)
    u = x + ap.lift
    m = R1.m
    resid = (bhat - system.matvec(x_hat))[:m]
    lam = solve_triangular(R1.R1, resid, lower=False) if m else np.zeros(0)
    sigma, pts, gaps = _vital_sigma_n(ap, lam)
    rv = R1.lower_csr() @ x_hat[:m]
    active = np.nonzero(rv >= ap.g - 1e-10 * max(1.0, np.abs(ap.g).max()))[0]
    return GMGResult(u=u, x=x, lam=lam, report=report, vital_sigma_n=sigma,
                     vital_points=pts, vital_gaps=gaps, active=active)


def solve_reference(ap: AssembledProblem, method, tol=1e-10):
    """SSN or IP solve of the identical algebraic problem."""
    inst = ap.instance()
    if method == "ssn":
        pt = qp.semismooth_newton(inst, tol=tol)
    elif method == "ip":
        pt = qp.interior_point(inst, tol=tol)
    elif method == "oracle":
        pt = qp.oracle_qp(inst)
    else:
        raise ValueError(f"unknown reference solver {method!r}")
    return pt
