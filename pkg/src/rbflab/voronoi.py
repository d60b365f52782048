"""Clipped Voronoi diagrams, interior edges and the jump-penalty operator.

The stencil-based trial space is discontinuous across Voronoi edges; the
penalty P = J^T J with J the matrix of solution jumps at the interior edge
midpoints forces those jumps toward zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import Voronoi
from shapely.geometry import LineString, Polygon
from shapely.prepared import prep

from rbflab import local_interp as li
from rbflab.errors import ConfigurationError, GeometryError
from rbflab.geometry import DomainSpec, PointSet
from rbflab.methods import _fd_system, fd_stencil_systems

_TWO_PI = 2.0 * np.pi


@dataclass
class VoronoiEdge:
    left: int  # node index of the cell on one side (lower index)
    right: int  # node index on the other side
    endpoints: np.ndarray  # (2, 2) clipped segment endpoints
    midpoint: np.ndarray  # (2,)
    length: float


@dataclass
class VoronoiDiagram:
    cells: list  # per node: (k, 2) polygon vertex array (clipped)
    edges: list  # interior VoronoiEdge list
    h_edge: float  # mean clipped interior edge length

    @property
    def n_edges(self):
        return len(self.edges)

    def cell_areas(self):
        out = np.empty(len(self.cells))
        for i, verts in enumerate(self.cells):
            x, y = verts[:, 0], verts[:, 1]
            out[i] = 0.5 * abs(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
        return out

    def midpoints(self):
        return np.array([e.midpoint for e in self.edges])


def _voronoi_with_ghosts(points):
    span = float(np.max(np.abs(points))) + 1.0
    t = np.linspace(0.0, _TWO_PI, 64, endpoint=False)
    ghosts = 4.0 * span * np.column_stack([np.cos(t), np.sin(t)])
    full = np.vstack([points, ghosts])
    try:
        return Voronoi(full)
    except Exception:
        try:
            return Voronoi(full, qhull_options="QJ Qbb")
        except Exception as exc:
            raise GeometryError(f"Voronoi construction failed: {exc}") from exc


def _longest_line(geom):
    if geom.is_empty:
        return None
    if geom.geom_type == "LineString":
        return geom
    if geom.geom_type in ("MultiLineString", "GeometryCollection"):
        lines = [g for g in geom.geoms if g.geom_type == "LineString"]
        if not lines:
            return None
        return max(lines, key=lambda g: g.length)
    return None


def build_voronoi(X: PointSet, domain: DomainSpec) -> VoronoiDiagram:
    """Voronoi cells of the nodes, clipped to the polygonized domain."""
    pts = X.points
    if len(pts) < 2:
        raise ConfigurationError("need at least two nodes for a Voronoi diagram")
    h = X.h if X.h else float(np.sqrt(domain.area() / len(pts)))
    poly = domain.polygon(h / 4.0)
    prepared = prep(poly)
    vor = _voronoi_with_ghosts(pts)

    cells = []
    for i in range(len(pts)):
        region = vor.regions[vor.point_region[i]]
        if -1 in region or len(region) < 3:
            raise GeometryError(f"unbounded Voronoi cell at node {i}")
        cell = Polygon(vor.vertices[region])
        if not prepared.contains(cell):
            cell = cell.intersection(poly)
            if cell.is_empty:
                cells.append(np.zeros((0, 2)))
                continue
            if cell.geom_type == "MultiPolygon":
                cell = max(cell.geoms, key=lambda g: g.area)
        cells.append(np.asarray(cell.exterior.coords[:-1]))

    edges = []
    for (a, b), verts in zip(vor.ridge_points, vor.ridge_vertices):
        if a >= len(pts) or b >= len(pts):
            continue
        if -1 in verts:
            raise GeometryError(f"unbounded ridge between nodes {a} and {b}")
        seg = LineString(vor.vertices[list(verts)])
        if seg.length < 1e-12:
            continue
        clipped = _longest_line(seg.intersection(poly))
        if clipped is None or clipped.length < 1e-12:
            continue
        mid = clipped.interpolate(0.5, normalized=True)
        lo, hi = (a, b) if a < b else (b, a)
        edges.append(VoronoiEdge(left=lo, right=hi,
                                 endpoints=np.asarray(clipped.coords),
                                 midpoint=np.array([mid.x, mid.y]),
                                 length=float(clipped.length)))
    if not edges:
        raise GeometryError("no interior Voronoi edges found")
    h_edge = float(np.mean([e.length for e in edges]))
    return VoronoiDiagram(cells=cells, edges=edges, h_edge=h_edge)


@dataclass
class PenaltyOperator:
    P: sp.csr_matrix  # N x N, J^T J
    gamma: float  # -h_edge
    jump_matrix: sp.csr_matrix  # J, one row per interior edge


def assemble_penalty(vd: VoronoiDiagram, X, p, n=None) -> PenaltyOperator:
    """P = (E+ - E-)^T (E+ - E-) over the interior edge midpoints.

    The E+ row uses the stencil of the lower-index cell node, E- the stencil
    of the higher-index one, both evaluated at the clipped edge midpoint.
    """
    X = np.asarray(X, dtype=float)
    if n is None:
        n = 2 * li.monomial_count(p)
    smap, cache = fd_stencil_systems(X, p, n)

    n_edges = len(vd.edges)
    rows, cols, vals = [], [], []
    # group midpoint evaluations per stencil owner for batched solves
    by_node = {}
    for k, e in enumerate(vd.edges):
        by_node.setdefault(e.left, []).append((k, +1.0))
        by_node.setdefault(e.right, []).append((k, -1.0))
    mids = vd.midpoints()
    for i, entries in by_node.items():
        sys = _fd_system(X, p, smap, cache, i)
        eidx = np.array([k for k, _ in entries])
        sgn = np.array([s for _, s in entries])
        w = li.weight_rows(sys, li.VALUE, mids[eidx])
        rows.append(np.repeat(eidx, w.shape[1]))
        cols.append(np.tile(smap.indices[i], len(eidx)))
        vals.append((sgn[:, None] * w).ravel())
    J = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_edges, len(X))).tocsr()
    P = (J.T @ J).tocsr()
    return PenaltyOperator(P=P, gamma=-vd.h_edge, jump_matrix=J)


def jump_magnitude_1d(N: int, n: int, p: int) -> float:
    """Largest discontinuity of the cardinal function nearest x = 0.4.

    Uniform nodes on [0, 1]; the trial function is evaluated from the left
    and right owner stencils at each midpoint between adjacent nodes.
    Ownership ties at exact midpoints go to the left node.
    """
    if n > N:
        raise ConfigurationError(f"stencil size n={n} exceeds N={N}")
    m = p + 1
    if n < m:
        raise ConfigurationError(f"stencil size n={n} cannot support degree {p}")
    x = np.linspace(0.0, 1.0, N)
    star = int(np.argmin(np.abs(x - 0.4)))

    systems = {}

    def cardinal_at(owner, y):
        if owner not in systems:
            # n nearest nodes of the owner; distance ties broken by index
            d = np.abs(x - x[owner])
            idx = np.lexsort((np.arange(N), d))[:n]
            idx = np.sort(idx)
            systems[owner] = (idx, li.assemble_local(x[idx][:, None], p))
        idx, sys = systems[owner]
        pos = np.flatnonzero(idx == star)
        if len(pos) == 0:
            return 0.0
        w = li.weight_vector(sys, li.VALUE, np.array([y]))
        return float(w[pos[0]])

    worst = 0.0
    for j in range(N - 1):
        mid = 0.5 * (x[j] + x[j + 1])
        jump = cardinal_at(j, mid) - cardinal_at(j + 1, mid)
        worst = max(worst, abs(jump))
    return worst
