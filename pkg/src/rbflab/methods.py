"""Global evaluation and differentiation matrices for the three methods.

Kansa: one global saddle system, dense rows.
RBF-PUM: per-patch systems blended with Shepard/Wendland weights, sparse.
RBF-FD: per-node stencil systems; each evaluation point takes its row from
the stencil of the nearest node, so rows have exactly n nonzeros.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from rbflab import local_interp as li
from rbflab.errors import ConfigurationError, CoverageError
from rbflab.geometry import DomainSpec, PointSet

_CHUNK = 4096


@dataclass
class GlobalOperator:
    """Evaluation matrix E and directional differentiation matrices D1, D2."""

    method: str
    E: object  # (M, N) ndarray or csr_matrix
    D1: object
    D2: object
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.E.shape

    def matrices(self):
        return self.E, self.D1, self.D2


# ---------------------------------------------------------------------------
# Kansa's global method
# ---------------------------------------------------------------------------

def kansa_system(X, p) -> li.LocalSystem:
    """The single global saddle system over all nodes."""
    return li.assemble_local(np.asarray(X, dtype=float), p)


def kansa_weight_chunks(sys: li.LocalSystem, Y, chunk=_CHUNK):
    """Yield (slice, E_rows, D1_rows, D2_rows) over Y in blocks."""
    Y = np.atleast_2d(Y)
    for start in range(0, len(Y), chunk):
        sl = slice(start, min(start + chunk, len(Y)))
        block = Y[sl]
        yield (sl,
               li.weight_rows(sys, li.VALUE, block),
               li.weight_rows(sys, li.DX, block),
               li.weight_rows(sys, li.DY, block))


def build_kansa(X, Y, p) -> GlobalOperator:
    X = np.asarray(X, dtype=float)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    sys = kansa_system(X, p)
    M, N = len(Y), len(X)
    E = np.empty((M, N))
    D1 = np.empty((M, N))
    D2 = np.empty((M, N))
    for sl, e, d1, d2 in kansa_weight_chunks(sys, Y):
        E[sl], D1[sl], D2[sl] = e, d1, d2
    return GlobalOperator("kansa", E, D1, D2, meta={"p": p})


# ---------------------------------------------------------------------------
# Partition of unity
# ---------------------------------------------------------------------------

@dataclass
class PatchCover:
    """Open cover of the domain by discs, each holding >= 2m nodes."""

    centers: np.ndarray  # (Np, 2)
    radii: np.ndarray  # (Np,)
    members: list  # per patch: node index array into X

    @property
    def n_patches(self):
        return len(self.centers)


def wendland_c2(r):
    """Phi(r) = (1-r)^4_+ (4r+1), the C2 Wendland function."""
    r = np.asarray(r, dtype=float)
    return np.where(r < 1.0, (1.0 - np.clip(r, 0.0, 1.0)) ** 4 * (4.0 * r + 1.0), 0.0)


def wendland_c2_deriv(r):
    """d Phi / d r = -20 r (1-r)^3 for r < 1."""
    r = np.asarray(r, dtype=float)
    return np.where(r < 1.0, -20.0 * r * (1.0 - np.clip(r, 0.0, 1.0)) ** 3, 0.0)


def _patch_phi(cover: PatchCover, j, Y, with_grad=False):
    d = Y - cover.centers[j]
    dist = np.linalg.norm(d, axis=1)
    r = dist / cover.radii[j]
    phi = wendland_c2(r)
    if not with_grad:
        return phi
    with np.errstate(invalid="ignore", divide="ignore"):
        fac = wendland_c2_deriv(r) / (cover.radii[j] * dist)
    fac = np.where(dist > 0.0, fac, 0.0)
    return phi, fac[:, None] * d


def shepard_weight(y, j, cover: PatchCover):
    """Shepard weight w_j(y) and its gradient."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    phis = np.empty((cover.n_patches, len(y)))
    grads = np.empty((cover.n_patches, len(y), 2))
    for k in range(cover.n_patches):
        phis[k], grads[k] = _patch_phi(cover, k, y, with_grad=True)
    s = phis.sum(axis=0)
    if np.any(s <= 0.0):
        raise CoverageError("point not covered by any patch")
    gs = grads.sum(axis=0)
    w = phis[j] / s
    gw = grads[j] / s[:, None] - (phis[j] / s**2)[:, None] * gs
    if len(y) == 1:
        return float(w[0]), gw[0]
    return w, gw


def _hex_centers(domain: DomainSpec, pitch):
    lo, hi = domain.bounding_box()
    lo = lo - pitch
    hi = hi + pitch
    dy = pitch * np.sqrt(3.0) / 2.0
    nx = int(np.ceil((hi[0] - lo[0]) / pitch)) + 1
    ny = int(np.ceil((hi[1] - lo[1]) / dy)) + 1
    ix, iy = np.arange(nx), np.arange(ny)
    xx = lo[0] + np.add.outer(ix * pitch, np.where(iy % 2 == 0, 0.0, pitch / 2.0))
    yy = lo[1] + np.broadcast_to(iy * dy, xx.shape)
    return np.column_stack([xx.ravel(), yy.ravel()])


def build_patch_cover(X, Y, p, target_patch_size=None, domain: DomainSpec = None) -> PatchCover:
    """Hexagonal patch lattice sized so each patch holds ~target nodes."""
    X = np.asarray(X, dtype=float)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    m = li.monomial_count(p)
    if target_patch_size is None:
        target_patch_size = 2 * m
    if target_patch_size < 2 * m:
        raise ConfigurationError(f"target patch size must be >= 2m = {2 * m}")
    domain = domain if domain is not None else DomainSpec()

    # pick the pitch so one hexagonal lattice cell covers about
    # target_patch_size nodes; the patch count is then ~ N/target while the
    # 1.25*pitch discs overlap and hold comfortably more than 2m nodes each
    area = domain.area()
    density = len(X) / area
    pitch = np.sqrt(target_patch_size / (density * np.sqrt(3.0) / 2.0))
    centers = _hex_centers(domain, pitch)
    radii = np.full(len(centers), 1.25 * pitch)

    xtree = cKDTree(X)
    keep = np.array([len(xtree.query_ball_point(c, r)) > 0
                     for c, r in zip(centers, radii)])
    centers, radii = centers[keep], radii[keep]
    if len(centers) == 0:
        raise ConfigurationError("patch pitch too small to cover any node")

    # drop starving patches, then repair coverage and membership by growth
    for _ in range(20):
        counts = np.array([len(xtree.query_ball_point(c, r))
                           for c, r in zip(centers, radii)])
        small = counts < 2 * m
        if not small.any() or len(centers) == 1:
            break
        worst = int(np.argmin(np.where(small, counts, np.iinfo(int).max)))
        centers = np.delete(centers, worst, axis=0)
        radii = np.delete(radii, worst)

    ctree = cKDTree(centers)
    all_pts = np.vstack([X, Y])
    for _ in range(50):
        d, nearest = ctree.query(all_pts)
        uncovered = d >= radii[nearest] * 0.999
        if not uncovered.any():
            break
        for i in np.flatnonzero(uncovered):
            j = nearest[i]
            radii[j] = max(radii[j], 1.05 * d[i])
    else:
        raise ConfigurationError("could not construct a covering patch set")

    for j in range(len(centers)):
        k = 2 * m
        if len(xtree.query_ball_point(centers[j], radii[j])) < k:
            dk, _ = xtree.query(centers[j], k=k)
            radii[j] = max(radii[j], 1.01 * dk[-1])

    members = [np.array(sorted(xtree.query_ball_point(c, r)), dtype=int)
               for c, r in zip(centers, radii)]
    return PatchCover(centers=centers, radii=radii, members=members)


def build_pum(X, Y, p, cover: PatchCover) -> GlobalOperator:
    X = np.asarray(X, dtype=float)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    M, N = len(Y), len(X)

    # pass 1: Shepard normalization S(y) and grad S(y)
    S = np.zeros(M)
    gS = np.zeros((M, 2))
    patch_hits = []
    for j in range(cover.n_patches):
        phi, gphi = _patch_phi(cover, j, Y, with_grad=True)
        hit = np.flatnonzero(phi > 0.0)
        patch_hits.append((hit, phi[hit], gphi[hit]))
        S[hit] += phi[hit]
        gS[hit] += gphi[hit]
    if np.any(S <= 0.0):
        bad = np.flatnonzero(S <= 0.0)
        raise CoverageError(
            f"{len(bad)} evaluation points not covered by any patch, e.g. {Y[bad[0]]}")

    rows, cols = [], []
    ve, v1, v2 = [], [], []
    for j, (hit, phi, gphi) in enumerate(patch_hits):
        if len(hit) == 0:
            continue
        idx = cover.members[j]
        sys = li.assemble_local(X[idx], p)
        yb = Y[hit]
        psi = li.weight_rows(sys, li.VALUE, yb)
        psix = li.weight_rows(sys, li.DX, yb)
        psiy = li.weight_rows(sys, li.DY, yb)
        w = phi / S[hit]
        gw = gphi / S[hit, None] - (phi / S[hit] ** 2)[:, None] * gS[hit]
        rows.append(np.repeat(hit, len(idx)))
        cols.append(np.tile(idx, len(hit)))
        ve.append((w[:, None] * psi).ravel())
        v1.append((gw[:, 0:1] * psi + w[:, None] * psix).ravel())
        v2.append((gw[:, 1:2] * psi + w[:, None] * psiy).ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    shape = (M, N)
    E = sp.coo_matrix((np.concatenate(ve), (rows, cols)), shape=shape).tocsr()
    D1 = sp.coo_matrix((np.concatenate(v1), (rows, cols)), shape=shape).tocsr()
    D2 = sp.coo_matrix((np.concatenate(v2), (rows, cols)), shape=shape).tocsr()
    return GlobalOperator("pum", E, D1, D2, meta={"p": p, "patches": cover.n_patches})


# ---------------------------------------------------------------------------
# RBF-FD
# ---------------------------------------------------------------------------

@dataclass
class StencilMap:
    """Per-node nearest-neighbor stencils and per-point ownership."""

    indices: np.ndarray  # (N, n) stencil node indices, row i centered at x_i
    tree: cKDTree

    def owners(self, Y):
        """Index of the nearest node per y; exact ties to the lowest index."""
        d, i = self.tree.query(np.atleast_2d(Y), k=2)
        tie = d[:, 0] == d[:, 1]
        out = i[:, 0].copy()
        out[tie] = np.minimum(i[tie, 0], i[tie, 1])
        return out


def build_stencils(X, n) -> StencilMap:
    X = np.asarray(X, dtype=float)
    if n > len(X):
        raise ConfigurationError(f"stencil size n={n} exceeds N={len(X)}")
    tree = cKDTree(X)
    _, idx = tree.query(X, k=n)
    idx = np.atleast_2d(idx)
    if idx.shape[1] != n:
        idx = idx.reshape(len(X), n)
    return StencilMap(indices=idx, tree=tree)


def fd_stencil_systems(X, p, n=None):
    """StencilMap plus one factorized LocalSystem per node (lazy dict)."""
    X = np.asarray(X, dtype=float)
    if n is None:
        n = 2 * li.monomial_count(p)
    smap = build_stencils(X, n)
    return smap, {}


def _fd_system(X, p, smap, cache, i):
    sys = cache.get(i)
    if sys is None:
        try:
            sys = li.assemble_local(X[smap.indices[i]], p)
        except Exception as exc:
            raise type(exc)(f"stencil centered at node {i}: {exc}") from exc
        cache[i] = sys
    return sys


def build_fd(X, Y, p, n=None) -> GlobalOperator:
    X = np.asarray(X, dtype=float)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if n is None:
        n = 2 * li.monomial_count(p)
    smap, cache = fd_stencil_systems(X, p, n)
    owner = smap.owners(Y)
    M, N = len(Y), len(X)

    order = np.argsort(owner, kind="stable")
    rows = np.empty(M * n, dtype=np.int64)
    cols = np.empty(M * n, dtype=np.int64)
    ve = np.empty(M * n)
    v1 = np.empty(M * n)
    v2 = np.empty(M * n)
    pos = 0
    start = 0
    while start < M:
        i = owner[order[start]]
        stop = start
        while stop < M and owner[order[stop]] == i:
            stop += 1
        ys = order[start:stop]
        sys = _fd_system(X, p, smap, cache, i)
        k = len(ys) * n
        rows[pos:pos + k] = np.repeat(ys, n)
        cols[pos:pos + k] = np.tile(smap.indices[i], len(ys))
        ve[pos:pos + k] = li.weight_rows(sys, li.VALUE, Y[ys]).ravel()
        v1[pos:pos + k] = li.weight_rows(sys, li.DX, Y[ys]).ravel()
        v2[pos:pos + k] = li.weight_rows(sys, li.DY, Y[ys]).ravel()
        pos += k
        start = stop
    shape = (M, N)
    E = sp.coo_matrix((ve, (rows, cols)), shape=shape).tocsr()
    D1 = sp.coo_matrix((v1, (rows, cols)), shape=shape).tocsr()
    D2 = sp.coo_matrix((v2, (rows, cols)), shape=shape).tocsr()
    return GlobalOperator("fd", E, D1, D2, meta={"p": p, "n": n})


def build_operator(method, X, Y, p, n=None, cover=None, domain=None) -> GlobalOperator:
    """Dispatch on the method tag; used by the experiment drivers."""
    if method == "kansa":
        return build_kansa(X, Y, p)
    if method == "pum":
        if cover is None:
            cover = build_patch_cover(X, Y, p, domain=domain)
        return build_pum(X, Y, p, cover)
    if method == "fd":
        return build_fd(X, Y, p, n=n)
    raise ConfigurationError(f"unknown method {method!r}")
