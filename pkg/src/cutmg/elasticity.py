"""Assembly of the stabilized plane-strain elasticity system on cut meshes.

Degrees of freedom are blocked per domain: every active node of a domain
carries an (x, y) pair, and nodes of cut cells are duplicated across
domains so each body owns an independent copy ("cut" basis).  Interior
cells share one precomputed element matrix; only cut cells are
integrated individually.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import geometry as geo
from .sparse import finalize

__all__ = [
    "MaterialParams",
    "DirichletBC",
    "NeumannBC",
    "DofMap",
    "build_dofmap",
    "assemble_stiffness",
    "assemble_ghost_penalty",
    "assemble_loads",
    "dirichlet_dofs",
    "apply_dirichlet",
    "constrain_columns",
    "evaluate_stress",
    "energy_h1_norms",
    "interface_stress_error",
    "export_displacement_csv",
    "export_stress_csv",
]

_ASSEMBLY_CHUNK = 50000


@dataclass(frozen=True)
class MaterialParams:
    """Linear elastic material; Lame parameters derived from E and nu."""

    E: float
    nu: float

    @property
    def lam(self):
        return self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))

    @property
    def mu(self):
        return self.E / (2.0 * (1.0 + self.nu))

    def __post_init__(self):
        if self.E <= 0.0:
            raise ValueError("Young's modulus must be positive")
        if not (0.0 <= self.nu < 0.5):
            raise ValueError("Poisson ratio must lie in [0, 0.5)")


@dataclass(frozen=True)
class DirichletBC:
    edge: str
    value: tuple = (0.0, 0.0)


@dataclass(frozen=True)
class NeumannBC:
    edge: str
    traction: tuple = (0.0, 0.0)


class DofMap:
    """Blocked dof numbering: domain 1 first, then domain 2."""

    def __init__(self, cls: geo.CutClassification):
        self.cls = cls
        self.domains = cls.domains
        self.node_index = {}
        self.count = {}
        self.offset = {}
        off = 0
        for d in self.domains:
            mask = cls.node_in_domain[d]
            idx = np.full(cls.mesh.n_nodes, -1, dtype=np.int64)
            idx[mask] = np.arange(mask.sum())
            self.node_index[d] = idx
            self.count[d] = int(mask.sum())
            self.offset[d] = off
            off += 2 * self.count[d]
        self.ndof = off

    def node_dofs(self, domain, nodes):
        """(len(nodes), 2) dof indices for the x/y components."""
        idx = self.node_index[domain][np.asarray(nodes)]
        if np.any(idx < 0):
            raise ValueError("node not active in domain")
        base = self.offset[domain] + 2 * idx
        return np.stack([base, base + 1], axis=-1)

    def active_nodes(self, domain):
        return np.nonzero(self.cls.node_in_domain[domain])[0]


def build_dofmap(cls: geo.CutClassification) -> DofMap:
    return DofMap(cls)


def shape_functions(mesh, cells, pts):
    """Q1 values and physical gradients at points grouped per cell.

    ``cells`` is (k,), ``pts`` is (k, 2); returns N (k, 4) and dN (k, 4, 2).
    """
    cells = np.asarray(cells)
    pts = np.asarray(pts, dtype=float)
    ix = cells % mesh.nx
    iy = cells // mesh.nx
    xi = (pts[:, 0] - (mesh.xmin + ix * mesh.hx)) / mesh.hx
    eta = (pts[:, 1] - (mesh.ymin + iy * mesh.hy)) / mesh.hy
    N = np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta], axis=1)
    dN = np.empty((len(pts), 4, 2))
    dN[:, 0, 0] = -(1 - eta)
    dN[:, 1, 0] = (1 - eta)
    dN[:, 2, 0] = eta
    dN[:, 3, 0] = -eta
    dN[:, 0, 1] = -(1 - xi)
    dN[:, 1, 1] = -xi
    dN[:, 2, 1] = xi
    dN[:, 3, 1] = (1 - xi)
    dN[:, :, 0] /= mesh.hx
    dN[:, :, 1] /= mesh.hy
    return N, dN


def _element_stiffness(dN, weights, mat):
    """8x8 element matrix from gradients (k,4,2) and weights (k,)."""
    k = len(weights)
    B = np.zeros((k, 3, 8))
    B[:, 0, 0::2] = dN[:, :, 0]
    B[:, 1, 1::2] = dN[:, :, 1]
    B[:, 2, 0::2] = dN[:, :, 1]
    B[:, 2, 1::2] = dN[:, :, 0]
    D = np.array([
        [mat.lam + 2 * mat.mu, mat.lam, 0.0],
        [mat.lam, mat.lam + 2 * mat.mu, 0.0],
        [0.0, 0.0, mat.mu],
    ])
    return np.einsum("q,qia,ij,qjb->ab", weights, B, D, B, optimize=True)


def cells_nodes(mesh, cells):
    """(n, 4) corner node ids for a batch of cells, CCW from lower-left."""
    cells = np.asarray(cells)
    ix = cells % mesh.nx
    iy = cells // mesh.nx
    n0 = iy * (mesh.nx + 1) + ix
    return np.stack([n0, n0 + 1, n0 + mesh.nx + 2, n0 + mesh.nx + 1], axis=-1)


def cells_origins(mesh, cells):
    cells = np.asarray(cells)
    ix = cells % mesh.nx
    iy = cells // mesh.nx
    return np.stack([mesh.xmin + ix * mesh.hx, mesh.ymin + iy * mesh.hy], axis=-1)


def _cell_dof_block(dofmap, domain, cells):
    """(n, 8) dof layout n0x n0y n1x n1y ... for a batch of cells."""
    cells = np.asarray(cells)
    nodes = cells_nodes(dofmap.cls.mesh, cells)
    d = dofmap.node_dofs(domain, nodes.ravel()).reshape(len(cells), 4, 2)
    return d.reshape(len(cells), 8)


def _scatter_dense_blocks(rows_out, cols_out, vals_out, dofs, K):
    """Append the triplets of identical element matrices for many cells."""
    n = dofs.shape[0]
    r = np.repeat(dofs[:, :, None], 8, axis=2)
    c = np.repeat(dofs[:, None, :], 8, axis=1)
    rows_out.append(r.ravel())
    cols_out.append(c.ravel())
    vals_out.append(np.broadcast_to(K, (n, 8, 8)).ravel())


def assemble_stiffness(cls: geo.CutClassification, materials: dict,
                       dofmap: DofMap) -> sp.csr_matrix:
    """Stiffness of sigma(u):eps(v) over each domain's active region."""
    mesh = cls.mesh
    rows, cols, vals = [], [], []
    gx, gw = geo._GAUSS_1D[2]
    ref_pts = np.array([[x, y] for y in gx for x in gx])
    for domain in cls.domains:
        mat = materials[domain]
        interior_tag = geo.TAG_INTERIOR_1 if domain == 1 else geo.TAG_INTERIOR_2
        interior = np.nonzero(cls.cell_tag == interior_tag)[0]
        if len(interior):
            pts = np.column_stack([ref_pts[:, 0] * mesh.hx, ref_pts[:, 1] * mesh.hy])
            _, dN = shape_functions(mesh, np.zeros(len(pts), dtype=int),
                                    pts + [mesh.xmin, mesh.ymin])
            w = np.array([wy * wx for wy in gw for wx in gw]) * mesh.hx * mesh.hy
            K_uncut = _element_stiffness(dN, w, mat)
            for start in range(0, len(interior), _ASSEMBLY_CHUNK):
                batch = interior[start:start + _ASSEMBLY_CHUNK]
                dofs = _cell_dof_block(dofmap, domain, batch)
                _scatter_dense_blocks(rows, cols, vals, dofs, K_uncut)
        side = cls.side_of_domain(domain)
        for cell in cls.cut_cells:
            if not cls.cell_in_domain[domain][cell]:
                continue
            pts, w = geo.cut_cell_quadrature(cls, cell, side, degree=2)
            if len(w) == 0:
                continue
            _, dN = shape_functions(mesh, np.full(len(pts), cell), pts)
            K = _element_stiffness(dN, w, mat)
            dofs = _cell_dof_block(dofmap, domain, [cell])[0]
            r = np.repeat(dofs, 8)
            c = np.tile(dofs, 8)
            rows.append(r)
            cols.append(c)
            vals.append(K.ravel())
    if not rows:
        raise ValueError("empty active mesh: nothing to assemble")
    A = sp.coo_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(dofmap.ndof, dofmap.ndof))
    return finalize(A)


def _ghost_face_jump_matrix(mesh, axis, mat, eps_ghost):
    """8x8 jump matrix shared by all ghost faces of one axis.

    Node slots: 4 nodes of the lower/left cell then 4 of the upper/right
    cell; shared nodes appear twice and their contributions add during
    scatter.  The integrand pairs jumps of the normal derivative of the
    canonical bilinear extensions, which are linear along the face, so a
    two-point Gauss rule is exact.
    """
    gx, gw = geo._GAUSS_1D[2]
    scale = eps_ghost * (2.0 * mat.mu + mat.lam)
    if axis == 0:
        h_face = mesh.hy
        # d/dx of Q1 depends only on eta: [-(1-eta), (1-eta), eta, -eta]/hx
        def deriv(t):
            return np.array([-(1 - t), (1 - t), t, -t]) / mesh.hx
    else:
        h_face = mesh.hx
        def deriv(t):
            return np.array([-(1 - t), -t, t, (1 - t)]) / mesh.hy
    M = np.zeros((8, 8))
    for t, w in zip(gx, gw):
        d = deriv(t)
        j = np.concatenate([d, -d])
        M += (w * h_face) * np.outer(j, j)
    return scale * h_face * M


def assemble_ghost_penalty(cls: geo.CutClassification, materials: dict,
                           eps_ghost: float, dofmap: DofMap) -> sp.csr_matrix:
    """Face-jump stabilization on ghost faces of each domain's active mesh."""
    if eps_ghost < 0.0:
        raise ValueError("ghost penalty parameter must be nonnegative")
    mesh = cls.mesh
    n = dofmap.ndof
    if eps_ghost == 0.0:
        return sp.csr_matrix((n, n))
    rows, cols, vals = [], [], []
    for domain in cls.domains:
        mat = materials[domain]
        faces = geo.collect_ghost_faces(cls, domain)
        if not faces:
            continue
        for axis in (0, 1):
            fa = [f for f in faces if f.axis == axis]
            if not fa:
                continue
            M = _ghost_face_jump_matrix(mesh, axis, mat, eps_ghost)
            cells_a = np.array([f.cells[0] for f in fa])
            cells_b = np.array([f.cells[1] for f in fa])
            nodes = np.hstack([cells_nodes(mesh, cells_a), cells_nodes(mesh, cells_b)])
            dof_xy = dofmap.node_dofs(domain, nodes.ravel()).reshape(len(fa), 8, 2)
            for comp in (0, 1):
                dofs = dof_xy[:, :, comp]
                r = np.repeat(dofs[:, :, None], 8, axis=2)
                c = np.repeat(dofs[:, None, :], 8, axis=1)
                rows.append(r.ravel())
                cols.append(c.ravel())
                vals.append(np.broadcast_to(M, (len(fa), 8, 8)).ravel())
    if not rows:
        return sp.csr_matrix((n, n))
    J = sp.coo_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return finalize(J)


def _clip_boundary_edge(cls, na, nb, domain):
    """Sub-interval [t0, t1] of a boundary edge lying in the domain, or None."""
    va, vb = cls.node_values[na], cls.node_values[nb]
    want_pos = domain == 1
    a_in = (va > 0.0) == want_pos
    b_in = (vb > 0.0) == want_pos
    if a_in and b_in:
        return 0.0, 1.0
    if not a_in and not b_in:
        return None
    pa = cls.mesh.node_coords(na).astype(float)
    pb = cls.mesh.node_coords(nb).astype(float)
    t = geo._bisect_batch(cls.levelset, pa[None, :], pb[None, :],
                          np.array([va]), np.array([vb]))[0]
    return (0.0, t) if a_in else (t, 1.0)


def assemble_loads(cls: geo.CutClassification, dofmap: DofMap,
                   neumann=(), body_force=(0.0, 0.0)) -> np.ndarray:
    """Load vector from Neumann tractions on fitted edges plus body force."""
    mesh = cls.mesh
    b = np.zeros(dofmap.ndof)
    gx, gw = geo._GAUSS_1D[2]
    for bc in neumann:
        node_line = mesh.boundary_edge_nodes(bc.edge)
        length = mesh.hx if bc.edge in ("bottom", "top") else mesh.hy
        t = np.asarray(bc.traction, dtype=float)
        for domain in cls.domains:
            for k in range(len(node_line) - 1):
                na, nb = node_line[k], node_line[k + 1]
                if not (cls.node_in_domain[domain][na] and cls.node_in_domain[domain][nb]):
                    continue
                clip = _clip_boundary_edge(cls, na, nb, domain)
                if clip is None:
                    continue
                t0, t1 = clip
                seg_len = (t1 - t0) * length
                if seg_len <= 0.0:
                    continue
                dofs = dofmap.node_dofs(domain, [na, nb])
                for s, w in zip(gx, gw):
                    u = t0 + s * (t1 - t0)
                    phi = np.array([1.0 - u, u])
                    for comp in (0, 1):
                        b[dofs[:, comp]] += w * seg_len * t[comp] * phi
    bf = np.asarray(body_force, dtype=float)
    if np.any(bf != 0.0):
        for domain in cls.domains:
            for cell in np.nonzero(cls.cell_in_domain[domain])[0]:
                pts, w = geo.domain_quadrature(cls, cell, domain)
                if len(w) == 0:
                    continue
                N, _ = shape_functions(mesh, np.full(len(pts), cell), pts)
                dofs = dofmap.node_dofs(domain, mesh.cell_nodes(cell))
                for comp in (0, 1):
                    b[dofs[:, comp]] += bf[comp] * (w @ N)
    return b


def dirichlet_dofs(cls: geo.CutClassification, dofmap: DofMap, bcs):
    """Constrained dof indices and prescribed values from edge selectors."""
    dofs, values = [], []
    for bc in bcs:
        nodes = cls.mesh.boundary_edge_nodes(bc.edge)
        val = np.asarray(bc.value, dtype=float)
        for domain in cls.domains:
            mask = cls.node_in_domain[domain][nodes]
            if not np.any(mask):
                continue
            nd = dofmap.node_dofs(domain, nodes[mask])
            for comp in (0, 1):
                dofs.append(nd[:, comp])
                values.append(np.full(mask.sum(), val[comp]))
    if not dofs:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    dofs = np.concatenate(dofs)
    values = np.concatenate(values)
    order = np.argsort(dofs)
    return dofs[order], values[order]


def apply_dirichlet(A: sp.csr_matrix, b: np.ndarray, dofs, values):
    """Symmetric elimination; returns (A, b, lift) for the homogenized unknown."""
    n = A.shape[0]
    lift = np.zeros(n)
    lift[dofs] = values
    b_adj = b - A @ lift
    keep = np.ones(n)
    keep[dofs] = 0.0
    Z = sp.diags(keep)
    pin = sp.diags(1.0 - keep)
    A_elim = finalize(Z @ A @ Z + pin)
    b_adj[dofs] = 0.0
    return A_elim, b_adj, lift


def constrain_columns(B: sp.csr_matrix, g: np.ndarray, dofs, lift):
    """Restrict constraints to the homogenized unknown: zero eliminated columns.

    Rows whose support was entirely eliminated are dropped, with their
    gap entries, so the constraint matrix keeps full row rank.
    """
    n = B.shape[1]
    keep = np.ones(n)
    keep[dofs] = 0.0
    g_adj = g - B @ lift
    B_adj = finalize(B @ sp.diags(keep))
    row_norm = np.sqrt(np.asarray(B_adj.multiply(B_adj).sum(axis=1)).ravel())
    scale = row_norm.max() if len(row_norm) else 0.0
    alive = row_norm > 1e-14 * max(scale, 1.0)
    if not np.all(alive):
        B_adj = finalize(B_adj[alive])
        g_adj = g_adj[alive]
    return B_adj, g_adj, np.nonzero(alive)[0]


def evaluate_stress(cls: geo.CutClassification, dofmap: DofMap, coeffs,
                    materials: dict):
    """Cell-center stresses per domain: (cell, domain, x, y, sxx, syy, sxy, vm)."""
    mesh = cls.mesh
    out = []
    for domain in cls.domains:
        mat = materials[domain]
        cells = np.nonzero(cls.cell_in_domain[domain])[0]
        if len(cells) == 0:
            continue
        centers = cells_origins(mesh, cells) + [0.5 * mesh.hx, 0.5 * mesh.hy]
        _, dN = shape_functions(mesh, cells, centers)
        dof8 = _cell_dof_block(dofmap, domain, cells)
        u8 = np.asarray(coeffs)[dof8].reshape(len(cells), 4, 2)
        grad = np.einsum("kac,kad->kcd", u8, dN)  # grad[k, comp, deriv]
        exx = grad[:, 0, 0]
        eyy = grad[:, 1, 1]
        exy = 0.5 * (grad[:, 0, 1] + grad[:, 1, 0])
        tr = exx + eyy
        sxx = mat.lam * tr + 2 * mat.mu * exx
        syy = mat.lam * tr + 2 * mat.mu * eyy
        sxy = 2 * mat.mu * exy
        vm = np.sqrt(sxx ** 2 - sxx * syy + syy ** 2 + 3 * sxy ** 2)
        for i, c in enumerate(cells):
            out.append((int(c), domain, centers[i, 0], centers[i, 1],
                        sxx[i], syy[i], sxy[i], vm[i]))
    return out


def _accumulate_norms(dN, N, w, u8, mat):
    grad = np.einsum("kac,kad->kcd", u8, dN)
    exx = grad[:, 0, 0]
    eyy = grad[:, 1, 1]
    exy = 0.5 * (grad[:, 0, 1] + grad[:, 1, 0])
    tr = exx + eyy
    energy = w @ (mat.lam * tr ** 2 + 2 * mat.mu * (exx ** 2 + eyy ** 2 + 2 * exy ** 2))
    uval = np.einsum("ka,kac->kc", N, u8)
    h1 = w @ ((uval ** 2).sum(axis=1)
              + (grad ** 2).sum(axis=(1, 2)))
    return energy, h1


def energy_h1_norms(cls: geo.CutClassification, dofmap: DofMap, coeffs,
                    materials: dict):
    """(energy norm, H1 norm) of an FE field over the active domains.

    Quadrature is exact for products of Q1 fields: 3x3 Gauss on interior
    cells, degree-4 triangle rules on cut pieces.
    """
    mesh = cls.mesh
    energy = 0.0
    h1 = 0.0
    coeffs = np.asarray(coeffs)
    gx, gw = geo._GAUSS_1D[3]
    ref = np.array([[x, y] for y in gx for x in gx])
    ref_w = np.array([wy * wx for wy in gw for wx in gw]) * mesh.hx * mesh.hy
    for domain in cls.domains:
        mat = materials[domain]
        interior_tag = geo.TAG_INTERIOR_1 if domain == 1 else geo.TAG_INTERIOR_2
        interior = np.nonzero(cls.cell_tag == interior_tag)[0]
        for start in range(0, len(interior), _ASSEMBLY_CHUNK):
            batch = interior[start:start + _ASSEMBLY_CHUNK]
            origins = cells_origins(mesh, batch)
            pts = origins[:, None, :] + ref[None, :, :] * [mesh.hx, mesh.hy]
            cells_rep = np.repeat(batch, len(ref))
            N, dN = shape_functions(mesh, cells_rep, pts.reshape(-1, 2))
            dof8 = _cell_dof_block(dofmap, domain, batch)
            u8 = coeffs[dof8].reshape(len(batch), 4, 2)
            u8_rep = np.repeat(u8, len(ref), axis=0)
            w_rep = np.tile(ref_w, len(batch))
            e, h = _accumulate_norms(dN, N, w_rep, u8_rep, mat)
            energy += e
            h1 += h
        side = cls.side_of_domain(domain)
        for cell in cls.cut_cells:
            if not cls.cell_in_domain[domain][cell]:
                continue
            pts, w = geo.cut_cell_quadrature(cls, cell, side, degree=4)
            if len(w) == 0:
                continue
            N, dN = shape_functions(mesh, np.full(len(pts), cell), pts)
            dof8 = _cell_dof_block(dofmap, domain, [cell])[0]
            u8 = coeffs[dof8].reshape(1, 4, 2)
            u8_rep = np.repeat(u8, len(pts), axis=0)
            e, h = _accumulate_norms(dN, N, w, u8_rep, mat)
            energy += e
            h1 += h
    return float(np.sqrt(energy)), float(np.sqrt(h1))


def normal_stress_on_segment(cls, dofmap, coeffs, materials, segment, point=None):
    """sigma_n = n . sigma n at a point of a segment (midpoint by default).

    Signorini uses the single body's side; two-body averages both sides.
    """
    mesh = cls.mesh
    pt = segment.midpoint if point is None else point
    vals = []
    for domain in cls.domains:
        if not cls.cell_in_domain[domain][segment.cell]:
            continue
        mat = materials[domain]
        _, dN = shape_functions(mesh, np.array([segment.cell]), pt[None, :])
        dof8 = _cell_dof_block(dofmap, domain, [segment.cell])[0]
        u8 = np.asarray(coeffs)[dof8].reshape(4, 2)
        grad = np.einsum("ac,ad->cd", u8, dN[0])
        exx, eyy = grad[0, 0], grad[1, 1]
        exy = 0.5 * (grad[0, 1] + grad[1, 0])
        tr = exx + eyy
        s = np.array([[mat.lam * tr + 2 * mat.mu * exx, 2 * mat.mu * exy],
                      [2 * mat.mu * exy, mat.lam * tr + 2 * mat.mu * eyy]])
        n = segment.normal
        vals.append(float(n @ s @ n))
    return float(np.mean(vals))


def interface_stress_error(cls, dofmap, coeffs_ref, coeffs, materials):
    """Mesh-dependent interface norm of the normal-stress mismatch."""
    total = 0.0
    h = cls.mesh.h
    for seg in cls.segments:
        s_ref = normal_stress_on_segment(cls, dofmap, coeffs_ref, materials, seg)
        s_val = normal_stress_on_segment(cls, dofmap, coeffs, materials, seg)
        total += h * seg.length * (s_ref - s_val) ** 2
    return float(np.sqrt(total))


def export_displacement_csv(path, cls, dofmap, coeffs):
    coeffs = np.asarray(coeffs)
    with open(path, "w") as f:
        f.write("node_id,x,y,ux,uy\n")
        for domain in cls.domains:
            nodes = dofmap.active_nodes(domain)
            xy = cls.mesh.node_coords(nodes)
            d = dofmap.node_dofs(domain, nodes)
            for k, nd in enumerate(nodes):
                f.write(f"{nd},{xy[k, 0]:.17g},{xy[k, 1]:.17g},"
                        f"{coeffs[d[k, 0]]:.17g},{coeffs[d[k, 1]]:.17g}\n")


def export_stress_csv(path, stress_rows):
    with open(path, "w") as f:
        f.write("cell_id,x,y,sxx,syy,sxy,vm\n")
        for (cell, domain, x, y, sxx, syy, sxy, vm) in stress_rows:
            f.write(f"{cell},{x:.17g},{y:.17g},{sxx:.17g},{syy:.17g},"
                    f"{sxy:.17g},{vm:.17g}\n")
