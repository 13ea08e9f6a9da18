"""Local Householder basis rotation and Givens-QR constraint decoupling.

The nodal rotation aligns the first local basis vector of every
interface node with its outward normal, after which the non-penetration
rows act mostly on one dof per node.  A sparse Givens QR of the rotated
constraint transpose then turns the constraint block into a triangular
factor whose rows can be resolved sequentially by the smoother.  The
orthogonal factor is kept as the recorded rotation sequence; a sparse
matrix form is materialized once for operator rotations.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .sparse import finalize

__all__ = [
    "compute_nodal_normals",
    "build_householder",
    "rotate_local",
    "OrthogonalFactor",
    "TriangularFactor",
    "givens_qr",
    "rotate_global",
]


def compute_nodal_normals(cls, nodes=None):
    """Length-weighted average of incident segment normals per node."""
    mesh = cls.mesh
    acc = {}
    for seg in cls.segments:
        for n in mesh.cell_nodes(seg.cell):
            v = acc.setdefault(int(n), np.zeros(2))
            v += seg.length * seg.normal
    if nodes is None:
        nodes = sorted(acc)
    out = {}
    for n in nodes:
        v = acc.get(int(n))
        if v is None:
            raise ValueError(f"node {n} has no incident interface segment")
        nv = np.linalg.norm(v)
        if nv < 1e-10:
            raise ValueError(f"ambiguous normal at node {n}: incident normals cancel")
        out[int(n)] = v / nv
    return out


def _householder_block(normal):
    n = np.asarray(normal, dtype=float)
    e1 = np.array([1.0, 0.0])
    w = n - e1
    nw = np.linalg.norm(w)
    if nw < 1e-12:
        return np.eye(2)
    w = w / nw
    return np.eye(2) - 2.0 * np.outer(w, w)


def build_householder(normals: dict, dofmap) -> sp.csr_matrix:
    """Global block-diagonal rotation; identity away from interface nodes.

    ``normals`` maps node id to its unit outward normal.  In two-body
    mode both domains' copies of an interface node are rotated with the
    same normal.
    """
    n = dofmap.ndof
    rows, cols, vals = [], [], []
    rotated = set()
    for domain in dofmap.domains:
        in_dom = dofmap.cls.node_in_domain[domain]
        for node, normal in normals.items():
            if not in_dom[node]:
                continue
            if np.linalg.norm(normal) < 1e-14:
                raise ValueError(f"zero normal at node {node}")
            O = _householder_block(normal)
            d = dofmap.node_dofs(domain, [node])[0]
            for a in range(2):
                for b in range(2):
                    if O[a, b] != 0.0:
                        rows.append(d[a])
                        cols.append(d[b])
                        vals.append(O[a, b])
            rotated.add(int(d[0]))
            rotated.add(int(d[1]))
    ident = [i for i in range(n) if i not in rotated]
    rows.extend(ident)
    cols.extend(ident)
    vals.extend([1.0] * len(ident))
    return finalize(sp.coo_matrix((vals, (rows, cols)), shape=(n, n)))


def rotate_local(A, b, B, O):
    """Congruence transform into the nodal normal-tangent basis."""
    Abar = finalize(O @ A @ O)
    bbar = O @ b
    Bbar = finalize(B @ O)
    return Abar, bbar, Bbar


@dataclass
class TriangularFactor:
    """Upper-triangular m x m factor with positive diagonal."""

    R1: np.ndarray

    @property
    def m(self):
        return self.R1.shape[0]

    @property
    def diag(self):
        return np.diag(self.R1)

    def lower_csr(self):
        """R1^T as CSR with sorted indices (diagonal last in each row)."""
        return finalize(sp.csr_matrix(self.R1.T))

    def upper_csr(self):
        """R1 as CSR; row i lists the rows coupled to coordinate i."""
        return finalize(sp.csr_matrix(self.R1))


class OrthogonalFactor:
    """Orthogonal matrix stored as an ordered Givens/flip sequence."""

    def __init__(self, n, ops):
        self.n = n
        self.ops = ops          # ('g', i, j, c, s) or ('f', i)
        self._Q = None
        self._arrays = None

    def ops_arrays(self):
        """Sequence as flat arrays; flips encoded as i == j with c = -1."""
        if self._arrays is None:
            k = len(self.ops)
            ii = np.empty(k, dtype=np.int64)
            jj = np.empty(k, dtype=np.int64)
            cc = np.empty(k)
            ss = np.empty(k)
            for t, op in enumerate(self.ops):
                if op[0] == "g":
                    _, ii[t], jj[t], cc[t], ss[t] = op
                else:
                    ii[t] = jj[t] = op[1]
                    cc[t], ss[t] = -1.0, 0.0
            self._arrays = (ii, jj, cc, ss)
        return self._arrays

    def apply_t(self, v):
        """Q^T v: run the recorded sequence forward."""
        from . import kernels
        v = np.array(v, dtype=float, copy=True)
        kernels.apply_rot_forward(*self.ops_arrays(), v)
        return v

    def apply(self, v):
        """Q v: run the sequence backward with inverted rotations."""
        from . import kernels
        v = np.array(v, dtype=float, copy=True)
        kernels.apply_rot_backward(*self.ops_arrays(), v)
        return v

    def touched_rows(self):
        """Indices whose coordinates the rotation sequence mixes."""
        touched = set()
        for op in self.ops:
            touched.add(op[1])
            if op[0] == "g":
                touched.add(op[2])
        return np.array(sorted(touched), dtype=np.int64)

    def band_block(self):
        """(band indices, dense Q restricted to the band).

        All rotations act inside the touched index set, so Q is the
        identity outside this block.
        """
        from . import kernels
        band = self.touched_rows()
        k = len(band)
        if k == 0:
            return band, np.zeros((0, 0))
        local = np.full(self.n, -1, dtype=np.int64)
        local[band] = np.arange(k)
        ii, jj, cc, ss = self.ops_arrays()
        D = np.eye(k)
        kernels.apply_rot_forward_rows(local[ii], local[jj], cc, ss, D)
        return band, D.T  # rows of D are Q^T rows, so Q_bb is the transpose

    def to_sparse(self) -> sp.csr_matrix:
        """Materialize Q; rows never touched by an op stay unit vectors."""
        if self._Q is not None:
            return self._Q
        band, Qbb = self.band_block()
        k = len(band)
        mask = np.ones(self.n, dtype=bool)
        mask[band] = False
        ident = np.nonzero(mask)[0]
        rows = [ident]
        cols = [ident]
        vals = [np.ones(len(ident))]
        if k:
            r, c = np.nonzero(Qbb)
            rows.append(band[r])
            cols.append(band[c])
            vals.append(Qbb[r, c])
        Q = sp.coo_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(self.n, self.n))
        self._Q = finalize(Q)
        return self._Q


def givens_qr(Bbar_T: sp.spmatrix, tol=1e-12, order="ascending", drop_tol=1e-14):
    """QR of the tall constraint transpose by sparse Givens rotations.

    Column j is reduced so its support lies in rows <= j; below-pivot
    rows are eliminated in ascending (or descending) row order, and the
    pivot sign is normalized positive so downstream bound logic never
    branches on it.

    Rotations mixing overlapping constraint columns create a cascade of
    geometrically decaying fill; entries below ``drop_tol`` relative to
    the input norm are discarded from the working matrix.  The recorded
    rotations stay exactly orthogonal, only the triangular factor absorbs
    a backward perturbation of that size.
    """
    Bbar_T = sp.csc_matrix(Bbar_T)
    n, m = Bbar_T.shape
    if m > n:
        raise ValueError("constraint transpose must be tall")
    norm_b = np.sqrt(np.sum(Bbar_T.data ** 2)) if Bbar_T.nnz else 0.0
    drop = drop_tol * norm_b

    cols = []
    row_cols = {}
    for j in range(m):
        sl = slice(Bbar_T.indptr[j], Bbar_T.indptr[j + 1])
        col = dict(zip(Bbar_T.indices[sl].tolist(), Bbar_T.data[sl].tolist()))
        cols.append(col)
        for r in col:
            row_cols.setdefault(r, set()).add(j)

    ops = []

    def rotate(i, r, c, s, from_col):
        """Apply G(i, r) to all columns >= from_col with entries in rows i, r."""
        affected = (row_cols.get(i, set()) | row_cols.get(r, set()))
        for k in affected:
            if k < from_col:
                continue
            ck = cols[k]
            vi = ck.get(i, 0.0)
            vr = ck.get(r, 0.0)
            ni = c * vi + s * vr
            nr = -s * vi + c * vr
            for row, val in ((i, ni), (r, nr)):
                # keep the pivot entry of the current column exactly
                if abs(val) > drop or (k == from_col and row == i):
                    ck[row] = val
                    row_cols.setdefault(row, set()).add(k)
                elif row in ck:
                    del ck[row]
                    row_cols[row].discard(k)

    for j in range(m):
        below = sorted(r for r in cols[j] if r > j)
        if order == "descending":
            below = below[::-1]
        for r in below:
            vj = cols[j].get(j, 0.0)
            vr = cols[j].get(r, 0.0)
            if vr == 0.0:
                continue
            rho = np.hypot(vj, vr)
            c, s = vj / rho, vr / rho
            ops.append(("g", j, r, c, s))
            rotate(j, r, c, s, j)
            cols[j][j] = rho
            cols[j].pop(r, None)
            row_cols.setdefault(j, set()).add(j)
            row_cols.get(r, set()).discard(j)
        pivot = cols[j].get(j, 0.0)
        if abs(pivot) < tol * max(norm_b, 1e-300):
            raise ValueError(f"rank-deficient constraints, column {j}")
        if pivot < 0.0:
            ops.append(("f", j))
            for k in sorted(row_cols.get(j, set())):
                if k >= j and j in cols[k]:
                    cols[k][j] = -cols[k][j]

    R1 = np.zeros((m, m))
    for j in range(m):
        for r, v in cols[j].items():
            if r > j:
                raise AssertionError("below-diagonal residue after elimination")
            R1[r, j] = v
    return OrthogonalFactor(n, ops), TriangularFactor(R1)


def rotate_global(Abar, bbar, Tbar, Q: OrthogonalFactor):
    """Rotate the system into the QR basis: A_hat, b_hat, finest transfer."""
    Qs = Q.to_sparse()
    A_hat = finalize(Qs.T @ Abar @ Qs)
    b_hat = Q.apply_t(bbar)
    T_hat = finalize(Qs.T @ Tbar) if Tbar is not None else None
    return A_hat, b_hat, T_hat
