"""Structured background meshes, level-set geometries and cut-cell machinery.

The background mesh never conforms to the physical domain.  A level set
classifies its cells as interior, cut or outside; cut cells carry the
polygonal pieces on each side of the interface, straight interface
segments, and the ghost faces needed for stabilization.  All geometric
products are immutable once built.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BackgroundMesh",
    "MeshHierarchy",
    "build_hierarchy",
    "translate_mesh",
    "CircleLevelSet",
    "EllipseLevelSet",
    "WavyLevelSet",
    "HalfplaneLevelSet",
    "CutClassification",
    "InterfaceSegment",
    "GhostFace",
    "classify",
    "extract_segments",
    "cell_gauss_quadrature",
    "cut_cell_quadrature",
    "domain_quadrature",
    "interface_quadrature",
    "collect_ghost_faces",
]

log = logging.getLogger(__name__)

TAG_OUTSIDE = 0
TAG_INTERIOR_1 = 1
TAG_INTERIOR_2 = 2
TAG_CUT = 3

# relative area below which a cut polygon is treated as a sliver and dropped
SLIVER_REL_AREA = 1e-14

_GAUSS_1D = {
    1: (np.array([0.5]), np.array([1.0])),
    2: (np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)]),
        np.array([0.5, 0.5])),
    3: (np.array([0.5 - 0.5 * math.sqrt(0.6), 0.5, 0.5 + 0.5 * math.sqrt(0.6)]),
        np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])),
}

# triangle rules in barycentric coordinates, weights sum to 1
_TRI_RULES = {
    2: (np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]),
        np.array([1.0, 1.0, 1.0]) / 3.0),
    4: (np.array([
            [0.445948490915965, 0.445948490915965, 0.108103018168070],
            [0.445948490915965, 0.108103018168070, 0.445948490915965],
            [0.108103018168070, 0.445948490915965, 0.445948490915965],
            [0.091576213509771, 0.091576213509771, 0.816847572980459],
            [0.091576213509771, 0.816847572980459, 0.091576213509771],
            [0.816847572980459, 0.091576213509771, 0.091576213509771],
        ]),
        np.array([0.223381589678011, 0.223381589678011, 0.223381589678011,
                  0.109951743655322, 0.109951743655322, 0.109951743655322])),
}


@dataclass(frozen=True)
class BackgroundMesh:
    """Axis-aligned structured quadrilateral mesh on a rectangle."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("nx and ny must be at least 1")
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError("mesh bounds must be ordered")

    @property
    def hx(self):
        return (self.xmax - self.xmin) / self.nx

    @property
    def hy(self):
        return (self.ymax - self.ymin) / self.ny

    @property
    def h(self):
        """Cell size used for mesh-size arguments (cells are near-square)."""
        return max(self.hx, self.hy)

    @property
    def n_cells(self):
        return self.nx * self.ny

    @property
    def n_nodes(self):
        return (self.nx + 1) * (self.ny + 1)

    def node_id(self, ix, iy):
        return iy * (self.nx + 1) + ix

    def node_coords(self, node):
        node = np.asarray(node)
        ix = node % (self.nx + 1)
        iy = node // (self.nx + 1)
        return np.stack([self.xmin + ix * self.hx, self.ymin + iy * self.hy], axis=-1)

    def all_node_coords(self):
        x = self.xmin + np.arange(self.nx + 1) * self.hx
        y = self.ymin + np.arange(self.ny + 1) * self.hy
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    def cell_id(self, ix, iy):
        return iy * self.nx + ix

    def cell_index(self, cell):
        return cell % self.nx, cell // self.nx

    def cell_nodes(self, cell):
        """Corner node ids in counter-clockwise order starting lower-left."""
        ix, iy = self.cell_index(cell)
        n0 = self.node_id(ix, iy)
        return np.array([n0, n0 + 1, n0 + self.nx + 2, n0 + self.nx + 1])

    def cell_origin(self, cell):
        ix, iy = self.cell_index(cell)
        return self.xmin + ix * self.hx, self.ymin + iy * self.hy

    # global edge ids: horizontal edges first, then vertical
    def h_edge(self, ix, iy):
        return iy * self.nx + ix

    def v_edge(self, ix, iy):
        return (self.ny + 1) * self.nx + ix * self.ny + iy

    @property
    def n_edges(self):
        return (self.ny + 1) * self.nx + (self.nx + 1) * self.ny

    def edge_nodes(self, edge):
        nh = (self.ny + 1) * self.nx
        if edge < nh:
            iy, ix = divmod(edge, self.nx)
            return self.node_id(ix, iy), self.node_id(ix + 1, iy)
        e = edge - nh
        ix, iy = divmod(e, self.ny)
        return self.node_id(ix, iy), self.node_id(ix, iy + 1)

    def cell_edges(self, cell):
        """Edge ids in boundary-walk order: bottom, right, top, left."""
        ix, iy = self.cell_index(cell)
        return (self.h_edge(ix, iy), self.v_edge(ix + 1, iy),
                self.h_edge(ix, iy + 1), self.v_edge(ix, iy))

    def boundary_edge_nodes(self, which):
        """Node ids along a named rectangle edge, in axis order."""
        if which == "bottom":
            return np.array([self.node_id(ix, 0) for ix in range(self.nx + 1)])
        if which == "top":
            return np.array([self.node_id(ix, self.ny) for ix in range(self.nx + 1)])
        if which == "left":
            return np.array([self.node_id(0, iy) for iy in range(self.ny + 1)])
        if which == "right":
            return np.array([self.node_id(self.nx, iy) for iy in range(self.ny + 1)])
        raise ValueError(f"unknown boundary edge {which!r}")


def translate_mesh(mesh: BackgroundMesh, dx: float, dy: float) -> BackgroundMesh:
    """Shift the mesh rigidly; topology and cell sizes are unchanged."""
    return BackgroundMesh(mesh.xmin + dx, mesh.xmax + dx,
                          mesh.ymin + dy, mesh.ymax + dy, mesh.nx, mesh.ny)


@dataclass(frozen=True)
class MeshHierarchy:
    """Nested uniformly refined meshes, level 0 coarsest."""

    meshes: tuple

    @property
    def n_levels(self):
        return len(self.meshes)

    def parent_cell(self, level, cell):
        """Parent of a level-``level`` cell on level ``level - 1``."""
        if level < 1:
            raise ValueError("level 0 has no parent")
        fine = self.meshes[level]
        coarse = self.meshes[level - 1]
        ix, iy = fine.cell_index(cell)
        return coarse.cell_id(ix // 2, iy // 2)

    def translated(self, dx, dy):
        return MeshHierarchy(tuple(translate_mesh(m, dx, dy) for m in self.meshes))


def build_hierarchy(bounds, nx0, ny0, L) -> MeshHierarchy:
    """L+1 nested meshes over ``bounds``; level ``l`` has ``nx0*2^l`` x ``ny0*2^l`` cells."""
    if L < 0:
        raise ValueError("L must be nonnegative")
    xmin, xmax, ymin, ymax = bounds
    meshes = tuple(BackgroundMesh(xmin, xmax, ymin, ymax, nx0 * 2 ** l, ny0 * 2 ** l)
                   for l in range(L + 1))
    return MeshHierarchy(meshes)


class CircleLevelSet:
    """Positive inside the circle: r^2 - |x - c|^2."""

    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def value(self, pts):
        d = np.asarray(pts, dtype=float) - self.center
        return self.radius ** 2 - np.sum(d * d, axis=-1)

    def gradient(self, pts):
        d = np.asarray(pts, dtype=float) - self.center
        return -2.0 * d


class EllipseLevelSet:
    """Positive inside the ellipse: r^2 - ((x-cx)/a)^2 - ((y-cy)/b)^2."""

    def __init__(self, center, radius, a, b):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.a = float(a)
        self.b = float(b)

    def value(self, pts):
        d = np.asarray(pts, dtype=float) - self.center
        return self.radius ** 2 - (d[..., 0] / self.a) ** 2 - (d[..., 1] / self.b) ** 2

    def gradient(self, pts):
        d = np.asarray(pts, dtype=float) - self.center
        g = np.empty_like(d)
        g[..., 0] = -2.0 * d[..., 0] / self.a ** 2
        g[..., 1] = -2.0 * d[..., 1] / self.b ** 2
        return g


class WavyLevelSet:
    """Semicircle-like blob with a sinusoidal boundary perturbation.

    r^2 - 0.5 * rho^2 * (5 + A sin(phase + f * theta)) with polar
    coordinates (rho, theta) about the center.  The angle is evaluated
    with the two-argument arctangent; since the frequency is an integer
    the 2*pi jump across the branch cut cancels inside the sine and the
    function is continuous away from the center.
    """

    def __init__(self, center, radius, amplitude=0.3, frequency=21, phase=math.pi / 36):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.amplitude = float(amplitude)
        self.frequency = float(frequency)
        self.phase = float(phase)

    def value(self, pts):
        d = np.asarray(pts, dtype=float) - self.center
        rho2 = d[..., 0] ** 2 + d[..., 1] ** 2
        theta = np.arctan2(d[..., 1], d[..., 0])
        s = 5.0 + self.amplitude * np.sin(self.phase + self.frequency * theta)
        return self.radius ** 2 - 0.5 * rho2 * s

    def gradient(self, pts):
        d = np.asarray(pts, dtype=float) - self.center
        xt, yt = d[..., 0], d[..., 1]
        w = self.phase + self.frequency * np.arctan2(yt, xt)
        s = 5.0 + self.amplitude * np.sin(w)
        c = 0.5 * self.amplitude * self.frequency * np.cos(w)
        g = np.empty_like(d)
        g[..., 0] = -xt * s + c * yt
        g[..., 1] = -yt * s - c * xt
        return g


class HalfplaneLevelSet:
    """Positive on the side the unit normal points away from: n . (x - p)."""

    def __init__(self, point, normal):
        self.point = np.asarray(point, dtype=float)
        n = np.asarray(normal, dtype=float)
        self.normal = n / np.linalg.norm(n)

    def value(self, pts):
        d = np.asarray(pts, dtype=float) - self.point
        return d @ self.normal

    def gradient(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.broadcast_to(self.normal, pts.shape).copy()


@dataclass(frozen=True)
class InterfaceSegment:
    """Straight interface piece inside one cut cell, oriented + to - side."""

    cell: int
    p0: np.ndarray
    p1: np.ndarray
    edge0: int
    edge1: int
    normal: np.ndarray
    length: float

    @property
    def midpoint(self):
        return 0.5 * (self.p0 + self.p1)


@dataclass(frozen=True)
class GhostFace:
    """Interior active-mesh face adjacent to at least one cut cell."""

    cells: tuple
    axis: int          # 0: face normal along x, 1: along y
    h: float           # face length
    domain: int


@dataclass
class CutCellData:
    """Geometric pieces of one cut cell."""

    crossings: list            # [(edge_id, point)] in boundary-walk order
    pairs: list                # [(i, j)] crossing indices forming segments
    polys: dict                # side (+1/-1) -> list of vertex arrays


@dataclass
class CutClassification:
    """Partition of a mesh against a level set, with all cut-cell geometry."""

    mesh: BackgroundMesh
    levelset: object
    mode: str
    node_values: np.ndarray
    cell_tag: np.ndarray
    cut_cells: np.ndarray
    cut_data: dict = field(default_factory=dict)
    segments: list = field(default_factory=list)
    node_in_domain: dict = field(default_factory=dict)
    cell_in_domain: dict = field(default_factory=dict)

    @property
    def domains(self):
        return (1,) if self.mode == "signorini" else (1, 2)

    def side_of_domain(self, domain):
        return +1 if domain == 1 else -1

    def export_csv(self, path):
        """Debug dump: one row per cell with its tag and owning domain."""
        with open(path, "w") as f:
            f.write("cell_id,ix,iy,tag,domain\n")
            for cell in range(self.mesh.n_cells):
                ix, iy = self.mesh.cell_index(cell)
                tag = int(self.cell_tag[cell])
                dom = {TAG_OUTSIDE: 0, TAG_INTERIOR_1: 1,
                       TAG_INTERIOR_2: 2, TAG_CUT: -1}[tag]
                f.write(f"{cell},{ix},{iy},{tag},{dom}\n")


def classify(mesh: BackgroundMesh, levelset, mode: str) -> CutClassification:
    """Tag cells by corner signs and build all cut-cell geometry.

    Node values within 1e-12*h of zero are perturbed to +1e-12*h so every
    node has a definite sign and the classification is total.
    """
    if mode not in ("signorini", "two_body"):
        raise ValueError(f"unknown mode {mode!r}")
    coords = mesh.all_node_coords()
    vals = np.asarray(levelset.value(coords), dtype=float).copy()
    tol = 1e-12 * min(mesh.hx, mesh.hy)
    vals[np.abs(vals) < tol] = tol

    nxp, nyp = mesh.nx + 1, mesh.ny + 1
    grid = vals.reshape(nyp, nxp)
    pos = grid > 0.0
    c00 = pos[:-1, :-1]
    c10 = pos[:-1, 1:]
    c11 = pos[1:, 1:]
    c01 = pos[1:, :-1]
    npos = (c00.astype(np.int8) + c10.astype(np.int8)
            + c11.astype(np.int8) + c01.astype(np.int8))

    cell_tag = np.empty(mesh.n_cells, dtype=np.int8)
    flat = npos.ravel()
    cell_tag[flat == 4] = TAG_INTERIOR_1
    cell_tag[flat == 0] = TAG_INTERIOR_2 if mode == "two_body" else TAG_OUTSIDE
    cut_mask = (flat > 0) & (flat < 4)
    cell_tag[cut_mask] = TAG_CUT
    cut_cells = np.nonzero(cut_mask)[0]

    if mode == "signorini" and not np.any(cell_tag == TAG_INTERIOR_1) and len(cut_cells) == 0:
        raise ValueError("empty domain: level set is negative on the whole mesh")

    cls = CutClassification(mesh=mesh, levelset=levelset, mode=mode,
                            node_values=vals, cell_tag=cell_tag, cut_cells=cut_cells)

    # roots on all cut edges, vectorized bisection over the whole batch
    edge_root = {}
    seen = set()
    ea, eb = [], []
    edge_ids = []
    for cell in cut_cells:
        for e in mesh.cell_edges(cell):
            if e in seen:
                continue
            seen.add(e)
            na, nb = mesh.edge_nodes(e)
            if (vals[na] > 0.0) != (vals[nb] > 0.0):
                edge_ids.append(e)
                ea.append(na)
                eb.append(nb)
    if edge_ids:
        pa = mesh.node_coords(np.array(ea))
        pb = mesh.node_coords(np.array(eb))
        va = vals[np.array(ea)]
        vb = vals[np.array(eb)]
        t = _bisect_batch(levelset, pa, pb, va, vb)
        pts = pa + t[:, None] * (pb - pa)
        for k, e in enumerate(edge_ids):
            edge_root[e] = pts[k]

    cell_area = mesh.hx * mesh.hy
    for cell in cut_cells:
        cls.cut_data[cell] = _build_cut_cell(mesh, levelset, vals, cell, edge_root, cell_area)

    _build_node_and_cell_sets(cls)
    cls.segments = extract_segments(cls)
    return cls


def _bisect_batch(levelset, pa, pb, va, vb, iters=60):
    lo = np.zeros(len(va))
    hi = np.ones(len(va))
    flo = va.copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        pm = pa + mid[:, None] * (pb - pa)
        fm = np.asarray(levelset.value(pm), dtype=float)
        left = (flo < 0.0) != (fm < 0.0)
        hi = np.where(left, mid, hi)
        lo = np.where(left, lo, mid)
        flo = np.where(left, flo, fm)
    return 0.5 * (lo + hi)


def _build_cut_cell(mesh, levelset, vals, cell, edge_root, cell_area):
    nodes = mesh.cell_nodes(cell)
    corners = mesh.node_coords(nodes)
    signs = vals[nodes] > 0.0
    edges = mesh.cell_edges(cell)

    # boundary walk: corner, then crossing on the following edge if present
    walk = []       # (point, kind, payload): kind 'c' corner / 'x' crossing
    for k in range(4):
        walk.append((corners[k], "c", bool(signs[k])))
        e = edges[k]
        if e in edge_root:
            walk.append((edge_root[e], "x", e))

    cross_pos = [i for i, w in enumerate(walk) if w[1] == "x"]
    ncross = len(cross_pos)
    if ncross not in (2, 4):
        raise ValueError(
            f"geometry under-resolved in cell {cell}: {ncross} edge intersections, refine mesh")

    crossings = [(walk[i][2], walk[i][0]) for i in cross_pos]

    # arcs of corners between consecutive crossings (cyclic)
    arcs = []
    n = len(walk)
    for a in range(ncross):
        i0 = cross_pos[a]
        i1 = cross_pos[(a + 1) % ncross]
        pts, sign = [], None
        j = (i0 + 1) % n
        while j != i1:
            assert walk[j][1] == "c"
            pts.append(walk[j][0])
            sign = walk[j][2]
            j = (j + 1) % n
        arcs.append((pts, sign, a, (a + 1) % ncross))

    polys = {+1: [], -1: []}
    pairs = []
    if ncross == 2:
        for pts, sign, a, b in arcs:
            poly = [crossings[a][1]] + pts + [crossings[b][1]]
            polys[+1 if sign else -1].append(np.array(poly))
        pairs.append((0, 1))
    else:
        center = corners.mean(axis=0)
        vc = float(levelset.value(center))
        center_pos = vc > 0.0 if abs(vc) > 0.0 else True
        merged_sign = center_pos
        keep = [arc for arc in arcs if arc[1] == merged_sign]
        cutoff = [arc for arc in arcs if arc[1] != merged_sign]
        # merged region: both same-sign arcs joined through the cell interior
        poly = []
        for pts, _, a, b in keep:
            poly = poly + [crossings[a][1]] + pts + [crossings[b][1]]
        polys[+1 if merged_sign else -1].append(np.array(poly))
        for pts, sign, a, b in cutoff:
            tri = [crossings[a][1]] + pts + [crossings[b][1]]
            polys[+1 if sign else -1].append(np.array(tri))
            pairs.append((a, b))

    # drop sliver polygons below the relative area threshold
    for side in (+1, -1):
        kept = []
        for poly in polys[side]:
            if _poly_area(poly) >= SLIVER_REL_AREA * cell_area:
                kept.append(poly)
            else:
                log.debug("dropping sliver polygon in cell %d side %+d", cell, side)
        polys[side] = kept

    return CutCellData(crossings=crossings, pairs=pairs, polys=polys)


def _poly_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _build_node_and_cell_sets(cls):
    mesh = cls.mesh
    cell_area = mesh.hx * mesh.hy
    for domain in cls.domains:
        side = cls.side_of_domain(domain)
        interior_tag = TAG_INTERIOR_1 if domain == 1 else TAG_INTERIOR_2
        cell_in = np.zeros(mesh.n_cells, dtype=bool)
        cell_in[cls.cell_tag == interior_tag] = True
        for cell in cls.cut_cells:
            area = sum(_poly_area(p) for p in cls.cut_data[cell].polys[side])
            if area > SLIVER_REL_AREA * cell_area:
                cell_in[cell] = True
        node_in = np.zeros(mesh.n_nodes, dtype=bool)
        active_cells = np.nonzero(cell_in)[0]
        for cell in active_cells:
            node_in[mesh.cell_nodes(cell)] = True
        cls.cell_in_domain[domain] = cell_in
        cls.node_in_domain[domain] = node_in
        if cls.mode == "signorini" and not np.any(cell_in):
            raise ValueError("empty domain: no active cells")


def extract_segments(cls: CutClassification):
    """Straight interface segments per cut cell, normals oriented + to - side."""
    segments = []
    for cell in cls.cut_cells:
        data = cls.cut_data[cell]
        for a, b in data.pairs:
            e0, p0 = data.crossings[a]
            e1, p1 = data.crossings[b]
            mid = 0.5 * (np.asarray(p0) + np.asarray(p1))
            g = np.asarray(cls.levelset.gradient(mid), dtype=float)
            gn = np.linalg.norm(g)
            if gn < 1e-12:
                raise ValueError(f"level-set gradient vanishes on segment in cell {cell}")
            normal = -g / gn
            length = float(np.linalg.norm(np.asarray(p1) - np.asarray(p0)))
            if length == 0.0:
                continue
            segments.append(InterfaceSegment(cell=int(cell), p0=np.asarray(p0),
                                             p1=np.asarray(p1), edge0=int(e0),
                                             edge1=int(e1), normal=normal,
                                             length=length))
    return segments


def cell_gauss_quadrature(mesh: BackgroundMesh, cell, n=2):
    """Tensor Gauss rule on an uncut cell, in physical coordinates."""
    gx, gw = _GAUSS_1D[n]
    x0, y0 = mesh.cell_origin(cell)
    X, Y = np.meshgrid(x0 + gx * mesh.hx, y0 + gx * mesh.hy)
    W = np.outer(gw, gw) * (mesh.hx * mesh.hy)
    return np.column_stack([X.ravel(), Y.ravel()]), W.ravel()


def _triangle_rule(p0, p1, p2, degree):
    bary, w = _TRI_RULES[degree]
    pts = bary @ np.array([p0, p1, p2])
    area = 0.5 * abs((p1[0] - p0[0]) * (p2[1] - p0[1])
                     - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    return pts, w * area


def cut_cell_quadrature(cls: CutClassification, cell, side, degree=2):
    """Quadrature over the ``side`` (+1/-1) part of a cut cell.

    The polygonal piece is fan-triangulated from its centroid and a
    symmetric triangle rule of the requested degree is placed on each
    triangle.  Returns (points, weights); the rule may be empty if the
    piece degenerates to a sliver.
    """
    if cell not in cls.cut_data:
        raise ValueError(f"cell {cell} is not a cut cell")
    pts_all, wts_all = [], []
    for poly in cls.cut_data[cell].polys[side]:
        centroid = poly.mean(axis=0)
        k = len(poly)
        for i in range(k):
            p, w = _triangle_rule(centroid, poly[i], poly[(i + 1) % k], degree)
            pts_all.append(p)
            wts_all.append(w)
    if not pts_all:
        return np.zeros((0, 2)), np.zeros(0)
    return np.vstack(pts_all), np.concatenate(wts_all)


def domain_quadrature(cls: CutClassification, cell, domain, degree=2, gauss_n=2):
    """Quadrature over the part of ``cell`` belonging to ``domain``.

    Interior cells get the tensor Gauss rule, cut cells the triangulated
    rule on the matching side.
    """
    tag = cls.cell_tag[cell]
    if tag == TAG_CUT:
        return cut_cell_quadrature(cls, cell, cls.side_of_domain(domain), degree)
    interior_tag = TAG_INTERIOR_1 if domain == 1 else TAG_INTERIOR_2
    if tag == interior_tag:
        return cell_gauss_quadrature(cls.mesh, cell, gauss_n)
    return np.zeros((0, 2)), np.zeros(0)


def interface_quadrature(segment: InterfaceSegment, n=2):
    """Gauss rule on a straight segment; weights sum to its length."""
    gx, gw = _GAUSS_1D[n]
    pts = segment.p0[None, :] + gx[:, None] * (segment.p1 - segment.p0)[None, :]
    return pts, gw * segment.length


def collect_ghost_faces(cls: CutClassification, domain):
    """Interior faces of the active mesh with at least one cut-cell neighbor."""
    mesh = cls.mesh
    cell_in = cls.cell_in_domain[domain]
    is_cut = cls.cell_tag == TAG_CUT
    faces = []
    for cell in np.nonzero(cell_in)[0]:
        ix, iy = mesh.cell_index(cell)
        # right neighbor: vertical face, normal along x
        if ix + 1 < mesh.nx:
            nb = mesh.cell_id(ix + 1, iy)
            if cell_in[nb] and (is_cut[cell] or is_cut[nb]):
                faces.append(GhostFace(cells=(int(cell), int(nb)), axis=0,
                                       h=mesh.hy, domain=domain))
        # top neighbor: horizontal face, normal along y
        if iy + 1 < mesh.ny:
            nb = mesh.cell_id(ix, iy + 1)
            if cell_in[nb] and (is_cut[cell] or is_cut[nb]):
                faces.append(GhostFace(cells=(int(cell), int(nb)), axis=1,
                                       h=mesh.hx, domain=domain))
    return faces
