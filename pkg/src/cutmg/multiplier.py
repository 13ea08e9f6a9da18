"""Stable Lagrange multiplier space on the interface and the constraint system.

Multiplier basis functions are traces of the background Q1 basis,
combined so that one function sits on every vital vertex: interface
chains are walked edge by edge, every second cut edge is designated
vital, and the trace contributions of the remaining nodes are spread to
the two nearest vital vertices by inverse-arclength interpolation.  The
resulting functions form a partition of unity on the interface.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import geometry as geo
from .elasticity import DofMap, shape_functions
from .sparse import finalize

__all__ = [
    "CutEdge",
    "InterfaceChain",
    "VitalVertexSet",
    "MultiplierBasis",
    "LineObstacle",
    "find_cut_edges",
    "build_chains",
    "select_vital_vertices",
    "build_multiplier_basis",
    "assemble_constraints",
]


@dataclass(frozen=True)
class CutEdge:
    edge: int
    nodes: tuple
    t: float
    point: np.ndarray


@dataclass
class InterfaceChain:
    """Ordered walk of cut edges; consecutive edges share a segment."""

    edges: list
    closed: bool
    arc: dict             # edge id -> arclength of its intersection point
    length: float
    segs_by_pair: dict    # frozenset({e0,e1}) -> InterfaceSegment


@dataclass
class VitalVertexSet:
    chains: list
    vital_edges: list      # global ordering, chain by chain in walk order
    vital_points: list
    vital_chain: list      # chain index per vital
    active_nodes: set
    inactive_nodes: set
    all_nodes: set

    @property
    def m(self):
        return len(self.vital_edges)


@dataclass
class MultiplierBasis:
    weights: list          # per vital vertex: dict node -> coefficient
    node_rows: dict        # node -> list of (row, weight)
    vital: VitalVertexSet

    @property
    def m(self):
        return len(self.weights)

    def evaluate(self, cls, cell, pts):
        """psi values at points inside one cell: dict row -> (npts,) array."""
        nodes = cls.mesh.cell_nodes(cell)
        N, _ = shape_functions(cls.mesh, np.full(len(pts), cell), pts)
        out = {}
        for k, q in enumerate(nodes):
            for row, w in self.node_rows.get(int(q), ()):
                out.setdefault(row, np.zeros(len(pts)))
                out[row] += w * N[:, k]
        return out


@dataclass(frozen=True)
class LineObstacle:
    """Rigid line obstacle; gap measured along its unit normal.

    ``normal`` points from the obstacle into the admissible half plane,
    so the signed gap of a point p is normal . (p - point): negative
    values mean the undeformed body already penetrates.
    """

    point: tuple
    normal: tuple

    def gap(self, pts):
        nu = np.asarray(self.normal, dtype=float)
        nu = nu / np.linalg.norm(nu)
        d = np.asarray(pts, dtype=float) - np.asarray(self.point, dtype=float)
        return d @ nu


def find_cut_edges(cls: geo.CutClassification):
    """Every mesh edge whose endpoint signs differ, with its interface point."""
    seen = {}
    for cell in cls.cut_cells:
        for e, pt in cls.cut_data[cell].crossings:
            if e in seen:
                continue
            na, nb = cls.mesh.edge_nodes(e)
            pa = cls.mesh.node_coords(na)
            pb = cls.mesh.node_coords(nb)
            denom = np.linalg.norm(pb - pa)
            t = float(np.linalg.norm(np.asarray(pt) - pa) / denom)
            seen[e] = CutEdge(edge=int(e), nodes=(int(na), int(nb)), t=t,
                              point=np.asarray(pt))
    return [seen[e] for e in sorted(seen)]


def build_chains(cls: geo.CutClassification):
    """Order the interface segments into simple chains of cut edges."""
    adj = {}
    seg_of = {}
    for seg in cls.segments:
        key = frozenset((seg.edge0, seg.edge1))
        if key in seg_of:
            # two cells sharing an edge each contribute the same crossing pair
            # only for degenerate tangencies; keep the first
            continue
        seg_of[key] = seg
        adj.setdefault(seg.edge0, []).append(seg.edge1)
        adj.setdefault(seg.edge1, []).append(seg.edge0)
    for e, nbrs in adj.items():
        if len(nbrs) > 2:
            raise ValueError(f"non-manifold interface at edge {e}")

    visited = set()
    chains = []
    endpoints = sorted(e for e, nbrs in adj.items() if len(nbrs) == 1)
    starts = endpoints + sorted(adj)
    for start in starts:
        if start in visited or start not in adj:
            continue
        edges = [start]
        visited.add(start)
        nbrs = sorted(adj[start])
        nxt = nbrs[0] if nbrs[0] not in visited or len(nbrs) == 1 else None
        if nxt is None and len(nbrs) > 1:
            nxt = nbrs[1]
        while nxt is not None and nxt not in visited:
            edges.append(nxt)
            visited.add(nxt)
            candidates = [e for e in adj[nxt] if e not in visited]
            nxt = min(candidates) if candidates else None
        closed = len(edges) > 2 and frozenset((edges[-1], edges[0])) in seg_of
        point_of = {}
        for seg in seg_of.values():
            point_of[seg.edge0] = seg.p0
            point_of[seg.edge1] = seg.p1
        arc = {edges[0]: 0.0}
        total = 0.0
        for k in range(1, len(edges)):
            total += float(np.linalg.norm(point_of[edges[k]] - point_of[edges[k - 1]]))
            arc[edges[k]] = total
        if closed:
            total += float(np.linalg.norm(point_of[edges[0]] - point_of[edges[-1]]))
        chains.append(InterfaceChain(edges=edges, closed=closed, arc=arc,
                                     length=total, segs_by_pair=seg_of))
    return chains


def select_vital_vertices(cls: geo.CutClassification, chains=None) -> VitalVertexSet:
    """Greedy every-second-edge rule along each chain.

    The first edge of a chain is always vital; open chains additionally
    keep their last edge so both interface ends carry a multiplier.
    """
    if chains is None:
        chains = build_chains(cls)
    point_of = {}
    for seg in cls.segments:
        point_of[seg.edge0] = seg.p0
        point_of[seg.edge1] = seg.p1

    vital_edges, vital_points, vital_chain = [], [], []
    for ci, chain in enumerate(chains):
        k = len(chain.edges)
        picks = list(range(0, k, 2))
        if not chain.closed and picks[-1] != k - 1:
            picks.append(k - 1)
        for i in picks:
            e = chain.edges[i]
            vital_edges.append(e)
            vital_points.append(point_of[e])
            vital_chain.append(ci)

    all_nodes = set()
    for cell in cls.cut_cells:
        all_nodes.update(int(n) for n in cls.mesh.cell_nodes(cell))
    active = set()
    for e in vital_edges:
        na, nb = cls.mesh.edge_nodes(e)
        active.add(int(na))
        active.add(int(nb))
    inactive = all_nodes - active
    return VitalVertexSet(chains=chains, vital_edges=vital_edges,
                          vital_points=vital_points, vital_chain=vital_chain,
                          active_nodes=active, inactive_nodes=inactive,
                          all_nodes=all_nodes)


def _node_adjacent_cells(mesh, node):
    ix = node % (mesh.nx + 1)
    iy = node // (mesh.nx + 1)
    cells = []
    for dy in (-1, 0):
        for dx in (-1, 0):
            cx, cy = ix + dx, iy + dy
            if 0 <= cx < mesh.nx and 0 <= cy < mesh.ny:
                cells.append(mesh.cell_id(cx, cy))
    return cells


def _project_to_chain(cls, vital, node, segs_by_cell, edge_chain):
    """Arclength position of a node's closest interface point: (chain, s)."""
    mesh = cls.mesh
    p = mesh.node_coords(node).astype(float)
    best = None
    for cell in _node_adjacent_cells(mesh, node):
        for seg in segs_by_cell.get(cell, ()):
            ci = edge_chain[seg.edge0]
            chain = vital.chains[ci]
            d = seg.p1 - seg.p0
            L2 = float(d @ d)
            t = 0.0 if L2 == 0.0 else float(np.clip((p - seg.p0) @ d / L2, 0.0, 1.0))
            x = seg.p0 + t * d
            dist = float(np.linalg.norm(p - x))
            sa, sb = chain.arc[seg.edge0], chain.arc[seg.edge1]
            s = sa + t * (sb - sa)
            if best is None or dist < best[0] - 1e-15:
                best = (dist, ci, s)
    if best is None:
        raise ValueError(f"node {node} has no nearby interface segment")
    return best[1], best[2]


def build_multiplier_basis(cls: geo.CutClassification,
                           vital: VitalVertexSet) -> MultiplierBasis:
    """Coefficients w[r][q] of psi_r = sum_q w_rq phi_q restricted to the interface."""
    if vital.m == 0:
        raise ValueError("no vital vertices: interface is empty")
    m = vital.m
    weights = [dict() for _ in range(m)]

    # active nodes: weight 1 to their own vital vertex, split if shared
    owners = {}
    for r, e in enumerate(vital.vital_edges):
        for n in cls.mesh.edge_nodes(e):
            owners.setdefault(int(n), []).append(r)
    for n, rows in owners.items():
        for r in rows:
            weights[r][n] = weights[r].get(n, 0.0) + 1.0 / len(rows)

    # per chain: vital arc positions in walk order
    chain_rows = {}
    for r, ci in enumerate(vital.vital_chain):
        chain_rows.setdefault(ci, []).append(r)

    segs_by_cell = {}
    for seg in cls.segments:
        segs_by_cell.setdefault(seg.cell, []).append(seg)
    edge_chain = {}
    for ci, chain in enumerate(vital.chains):
        for e in chain.edges:
            edge_chain[e] = ci

    for q in sorted(vital.inactive_nodes):
        ci, s = _project_to_chain(cls, vital, q, segs_by_cell, edge_chain)
        rows = chain_rows[ci]
        chain = vital.chains[ci]
        sv = np.array([chain.arc[vital.vital_edges[r]] for r in rows])
        if chain.closed:
            # cyclic bracket: duplicate the first vital at s + length
            if s <= sv[0]:
                s += chain.length
            idx = np.searchsorted(sv, s) - 1
            if idx >= len(rows) - 1:
                r0, r1 = rows[-1], rows[0]
                s0, s1 = sv[-1], sv[0] + chain.length
            else:
                r0, r1 = rows[idx], rows[idx + 1]
                s0, s1 = sv[idx], sv[idx + 1]
            t = 0.0 if s1 == s0 else (s - s0) / (s1 - s0)
        else:
            if s <= sv[0]:
                r0 = r1 = rows[0]
                t = 0.0
            elif s >= sv[-1]:
                r0 = r1 = rows[-1]
                t = 0.0
            else:
                idx = int(np.searchsorted(sv, s)) - 1
                r0, r1 = rows[idx], rows[idx + 1]
                s0, s1 = sv[idx], sv[idx + 1]
                t = 0.0 if s1 == s0 else (s - s0) / (s1 - s0)
        if r0 == r1:
            weights[r0][q] = weights[r0].get(q, 0.0) + 1.0
        else:
            weights[r0][q] = weights[r0].get(q, 0.0) + (1.0 - t)
            weights[r1][q] = weights[r1].get(q, 0.0) + t

    node_rows = {}
    for r, wr in enumerate(weights):
        for q, w in wr.items():
            if w != 0.0:
                node_rows.setdefault(q, []).append((r, w))
    return MultiplierBasis(weights=weights, node_rows=node_rows, vital=vital)


def assemble_constraints(cls: geo.CutClassification, dofmap: DofMap,
                         basis: MultiplierBasis, obstacle=None):
    """Constraint matrix B and gap vector g of the non-penetration condition.

    Two-body rows pair the jump (u1 - u2) . n with g = 0 on the embedded
    interface; Signorini rows use the single body and the obstacle gap.
    """
    m = basis.m
    rows, cols, vals = [], [], []
    g = np.zeros(m)
    for seg in cls.segments:
        pts, w = geo.interface_quadrature(seg)
        psis = basis.evaluate(cls, seg.cell, pts)
        N, _ = shape_functions(cls.mesh, np.full(len(pts), seg.cell), pts)
        nodes = cls.mesh.cell_nodes(seg.cell)
        if obstacle is not None:
            gap_vals = obstacle.gap(pts)
        for r, psi in psis.items():
            if obstacle is not None:
                g[r] += float(w @ (psi * gap_vals))
            for domain in cls.domains:
                if not cls.cell_in_domain[domain][seg.cell]:
                    continue
                sign = 1.0 if domain == 1 else -1.0
                dofs = dofmap.node_dofs(domain, nodes)
                for comp in (0, 1):
                    contrib = sign * seg.normal[comp] * (w * psi) @ N
                    rows.extend([r] * 4)
                    cols.extend(dofs[:, comp])
                    vals.extend(contrib)
    B = finalize(sp.coo_matrix((vals, (rows, cols)), shape=(m, dofmap.ndof)))
    return B, g
