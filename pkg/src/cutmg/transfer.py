"""Pseudo-L2-projection transfer operators between enriched levels.

The prolongation tested against the fine dual (biorthogonal) basis keeps
the operator as sparse as nodal interpolation, reproduces constants
exactly on the active domain, and reduces to the standard bilinear
interpolation stencil wherever the meshes are effectively nested.  On
cut cells the duals are integrated over the physical part only; rows
whose dual weight degenerates (deeply cut supports) fall back to the
lumped-mass projection, which is always positive.
"""

import numpy as np
import scipy.sparse as sp

from . import geometry as geo
from .elasticity import DofMap
from .sparse import finalize

__all__ = ["pseudo_l2_transfer", "galerkin_coarsen", "compose_hierarchy",
           "build_counter"]

# audit counter: how many transfer operators were assembled
_BUILDS = 0

# below this fraction of the lumped weight the dual row is considered degenerate
_DUAL_FALLBACK_FRACTION = 0.25


def build_counter():
    return _BUILDS


def _dual_1d(t):
    """Biorthogonal duals of the 1D hat pair on [0, 1]."""
    return np.stack([2.0 - 3.0 * t, 3.0 * t - 1.0], axis=-1)


def _hat_1d(t):
    return np.stack([1.0 - t, t], axis=-1)


def _q1_at(local, funcs):
    """Tensor values of the 4 basis/dual functions at local coords (k, 2)."""
    fx = funcs(local[:, 0])
    fy = funcs(local[:, 1])
    # node order: (0,0), (1,0), (1,1), (0,1)
    return np.stack([fx[:, 0] * fy[:, 0], fx[:, 1] * fy[:, 0],
                     fx[:, 1] * fy[:, 1], fx[:, 0] * fy[:, 1]], axis=1)


def _local_coords(mesh, cells, pts):
    cells = np.asarray(cells)
    ix = cells % mesh.nx
    iy = cells // mesh.nx
    out = np.empty((len(pts), 2))
    out[:, 0] = (pts[:, 0] - (mesh.xmin + ix * mesh.hx)) / mesh.hx
    out[:, 1] = (pts[:, 1] - (mesh.ymin + iy * mesh.hy)) / mesh.hy
    return out


def _quadrant_templates(fine_mesh):
    """Per-quadrant 4x4 coupling blocks for uncut fine cells.

    Exact 2x2 Gauss integration of dual/lumped fine functions against the
    coarse basis of the parent cell.
    """
    gx, gw = geo._GAUSS_1D[2]
    ref = np.array([[x, y] for y in gx for x in gx])
    w = np.array([wy * wx for wy in gw for wx in gw]) * fine_mesh.hx * fine_mesh.hy
    dual_f = _q1_at(ref, _dual_1d)
    hat_f = _q1_at(ref, _hat_1d)
    tmpl = {}
    for qy in (0, 1):
        for qx in (0, 1):
            coarse_local = 0.5 * (ref + [qx, qy])
            hat_c = _q1_at(coarse_local, _hat_1d)
            M_dual = np.einsum("q,qa,qb->ab", w, dual_f, hat_c)
            M_lump = np.einsum("q,qa,qb->ab", w, hat_f, hat_c)
            d_dual = w @ dual_f
            d_lump = w @ hat_f
            tmpl[(qx, qy)] = (M_dual, M_lump, d_dual, d_lump)
    return tmpl


class _Accumulator:
    """COO triplets for the dual/lumped couplings of one domain."""

    def __init__(self, nf, nc):
        self.nf, self.nc = nf, nc
        self.rows, self.cols = [], []
        self.vd, self.vl = [], []
        self.dd = np.zeros(nf)
        self.dl = np.zeros(nf)

    def add_batch(self, fn, cn, M_dual, M_lump, d_dual, d_lump):
        """fn, cn: (k, 4) index blocks; M_*: (k, 4, 4); d_*: (k, 4)."""
        ok = (fn >= 0)[:, :, None] & (cn >= 0)[:, None, :]
        r = np.repeat(fn[:, :, None], 4, axis=2)
        c = np.repeat(cn[:, None, :], 4, axis=1)
        self.rows.append(r[ok])
        self.cols.append(c[ok])
        self.vd.append(M_dual[ok])
        self.vl.append(M_lump[ok])
        okf = fn >= 0
        np.add.at(self.dd, fn[okf], d_dual[okf])
        np.add.at(self.dl, fn[okf], d_lump[okf])

    def matrices(self):
        rows = np.concatenate(self.rows) if self.rows else np.zeros(0, dtype=int)
        cols = np.concatenate(self.cols) if self.cols else np.zeros(0, dtype=int)
        shape = (self.nf, self.nc)
        Md = finalize(sp.coo_matrix((np.concatenate(self.vd) if self.vd else [],
                                     (rows, cols)), shape=shape))
        Ml = finalize(sp.coo_matrix((np.concatenate(self.vl) if self.vl else [],
                                     (rows, cols)), shape=shape))
        return Md, Ml


def pseudo_l2_transfer(cls_coarse: geo.CutClassification,
                       cls_fine: geo.CutClassification,
                       dm_coarse: DofMap, dm_fine: DofMap) -> sp.csr_matrix:
    """Block prolongation (fine dofs x coarse dofs), direct sum over domains."""
    global _BUILDS
    fine = cls_fine.mesh
    coarse = cls_coarse.mesh
    if fine.nx != 2 * coarse.nx or fine.ny != 2 * coarse.ny:
        raise ValueError("transfer requires a 2:1 parent-child mesh pair")
    tmpl = _quadrant_templates(fine)

    rows_all, cols_all, vals_all = [], [], []
    for domain in cls_fine.domains:
        if domain not in cls_coarse.node_in_domain or \
                not np.any(cls_coarse.node_in_domain[domain]):
            raise ValueError(f"empty coarse active mesh for domain {domain}")
        nf = dm_fine.count[domain]
        nc = dm_coarse.count[domain]
        acc = _Accumulator(nf, nc)
        fine_idx = dm_fine.node_index[domain]
        coarse_idx = dm_coarse.node_index[domain]

        def index_blocks(cells):
            ix = cells % fine.nx
            iy = cells // fine.nx
            n0 = iy * (fine.nx + 1) + ix
            fnodes = np.stack([n0, n0 + 1, n0 + fine.nx + 2, n0 + fine.nx + 1], axis=1)
            px, py = ix // 2, iy // 2
            c0 = py * (coarse.nx + 1) + px
            cnodes = np.stack([c0, c0 + 1, c0 + coarse.nx + 2, c0 + coarse.nx + 1], axis=1)
            return fine_idx[fnodes], coarse_idx[cnodes], ix % 2, iy % 2

        interior_tag = geo.TAG_INTERIOR_1 if domain == 1 else geo.TAG_INTERIOR_2
        active = np.nonzero(cls_fine.cell_in_domain[domain])[0]
        interior = active[cls_fine.cell_tag[active] == interior_tag]
        cut = active[cls_fine.cell_tag[active] == geo.TAG_CUT]

        if len(interior):
            fn, cn, qx, qy = index_blocks(interior)
            for q in range(4):
                mask = (qx == q % 2) & (qy == q // 2)
                if not np.any(mask):
                    continue
                M_dual, M_lump, d_dual, d_lump = tmpl[(q % 2, q // 2)]
                k = int(mask.sum())
                acc.add_batch(fn[mask], cn[mask],
                              np.broadcast_to(M_dual, (k, 4, 4)),
                              np.broadcast_to(M_lump, (k, 4, 4)),
                              np.broadcast_to(d_dual, (k, 4)),
                              np.broadcast_to(d_lump, (k, 4)))

        side = cls_fine.side_of_domain(domain)
        for cell in cut:
            pts, w = geo.cut_cell_quadrature(cls_fine, cell, side, degree=4)
            if len(w) == 0:
                continue
            fn, cn, _, _ = index_blocks(np.array([cell]))
            parent_ix = (cell % fine.nx) // 2
            parent_iy = (cell // fine.nx) // 2
            parent = parent_iy * coarse.nx + parent_ix
            lf = _local_coords(fine, np.full(len(pts), cell), pts)
            lc = _local_coords(coarse, np.full(len(pts), parent), pts)
            dual_f = _q1_at(lf, _dual_1d)
            hat_f = _q1_at(lf, _hat_1d)
            hat_c = _q1_at(lc, _hat_1d)
            acc.add_batch(fn, cn,
                          np.einsum("q,qa,qb->ab", w, dual_f, hat_c)[None],
                          np.einsum("q,qa,qb->ab", w, hat_f, hat_c)[None],
                          (w @ dual_f)[None], (w @ hat_f)[None])

        Md, Ml = acc.matrices()
        use_lump = acc.dd < _DUAL_FALLBACK_FRACTION * acc.dl
        den = np.where(use_lump, acc.dl, acc.dd)
        inv = np.zeros(nf)
        nz = den != 0.0
        inv[nz] = 1.0 / den[nz]
        sel_d = sp.diags((~use_lump).astype(float))
        sel_l = sp.diags(use_lump.astype(float))
        Tscalar = sp.diags(inv) @ (sel_d @ Md + sel_l @ Ml)
        Tco = sp.coo_matrix(Tscalar)

        for comp in (0, 1):
            rows_all.append(dm_fine.offset[domain] + 2 * Tco.row + comp)
            cols_all.append(dm_coarse.offset[domain] + 2 * Tco.col + comp)
            vals_all.append(Tco.data)

    T = sp.coo_matrix((np.concatenate(vals_all),
                       (np.concatenate(rows_all), np.concatenate(cols_all))),
                      shape=(dm_fine.ndof, dm_coarse.ndof))
    _BUILDS += 1
    return finalize(T)


def galerkin_coarsen(A_fine: sp.csr_matrix, T: sp.csr_matrix) -> sp.csr_matrix:
    """Coarse operator T^T A T, symmetrized against roundoff."""
    if A_fine.shape[1] != T.shape[0]:
        raise ValueError("transfer and operator dimensions do not match")
    Ac = T.T @ (A_fine @ T)
    Ac = 0.5 * (Ac + Ac.T)
    return finalize(Ac)


def compose_hierarchy(plain_transfers, finest_rotated):
    """Ordered stack [T_1, ..., T_{L-1}, T_hat_L] consumed by the MG driver."""
    stack = list(plain_transfers) + [finest_rotated]
    if any(t is None for t in stack):
        raise ValueError("missing transfer operator in the hierarchy")
    return stack
