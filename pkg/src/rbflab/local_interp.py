"""Cubic PHS + monomial saddle-point interpolation systems.

One factorized system serves many evaluation points: the weight row for an
operator at y is w = (b(y) A~^-1)_{1:n}, where A~ = [[A, P], [P^T, 0]].
Stencil coordinates are shifted to the centroid and scaled by the stencil
radius before assembly; derivative weights pick up the chain-rule factor.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from rbflab.errors import ConfigurationError, NumericalError, UnisolvencyError

PHS_EXPONENT = 3

VALUE = "value"
DX = "dx"
DY = "dy"


def phs_value(r):
    """phi(r) = r^3."""
    r = np.asarray(r, dtype=float)
    return r**3


def phs_gradient(dx):
    """Gradient of phi(., x_l) at x, for dx = x - x_l: 3 ||dx|| dx."""
    dx = np.asarray(dx, dtype=float)
    r = np.linalg.norm(dx, axis=-1, keepdims=True)
    return 3.0 * r * dx


def monomial_count(p, dim=2):
    return comb(p + dim, dim)


def monomial_exponents(p, dim=2):
    """Exponent tuples ordered by total degree, then lexicographically."""
    if dim == 1:
        return [(k,) for k in range(p + 1)]
    exps = []
    for total in range(p + 1):
        for ex in range(total, -1, -1):
            exps.append((ex, total - ex))
    # lexicographic within a total degree: (x^total, ..., y^total)
    return exps


def _monomial_matrix(points, exps, diff=None):
    """Values (or one first derivative) of the monomial basis at points."""
    pts = np.atleast_2d(points)
    out = np.empty((len(pts), len(exps)))
    for k, ex in enumerate(exps):
        col = np.ones(len(pts))
        for axis, e in enumerate(ex):
            e_eff = e
            if diff == axis:
                if e == 0:
                    col = np.zeros(len(pts))
                    break
                col = col * e
                e_eff = e - 1
            if e_eff > 0:
                col = col * pts[:, axis] ** e_eff
        out[:, k] = col
    return out


@dataclass
class LocalSystem:
    """Factorized saddle system over one stencil/patch/global point set."""

    points: np.ndarray  # (n, d), global coordinates
    degree: int
    exps: list
    center: np.ndarray
    scale: float
    matrix: np.ndarray  # assembled A~, kept for diagnostics
    _lu: tuple

    @property
    def n(self):
        return len(self.points)

    @property
    def scaled_points(self):
        return (self.points - self.center) / self.scale


def assemble_local(X_loc, p) -> LocalSystem:
    """Assemble and factorize the (n+m) x (n+m) saddle matrix for X_loc."""
    pts = np.atleast_2d(np.asarray(X_loc, dtype=float))
    n, dim = pts.shape
    m = monomial_count(p, dim)
    if n < m:
        raise ConfigurationError(
            f"stencil of {n} points cannot support degree {p} ({m} monomials)")
    center = pts.mean(axis=0)
    scale = float(np.max(np.linalg.norm(pts - center, axis=1)))
    if scale <= 0.0:
        raise ConfigurationError("stencil points are all identical")
    z = (pts - center) / scale

    exps = monomial_exponents(p, dim)
    diff = z[:, None, :] - z[None, :, :]
    r = np.linalg.norm(diff, axis=-1)
    A = r**3
    P = _monomial_matrix(z, exps)

    sv = np.linalg.svd(P, compute_uv=False)
    if sv[-1] < 1e-10 * sv[0]:
        raise UnisolvencyError(
            f"stencil near {center} is not unisolvent for degree {p}")

    sys_mat = np.zeros((n + m, n + m))
    sys_mat[:n, :n] = A
    sys_mat[:n, n:] = P
    sys_mat[n:, :n] = P.T
    try:
        lu = lu_factor(sys_mat)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"saddle factorization failed near {center}: {exc}") from exc
    if np.any(np.abs(np.diag(lu[0])) < 1e-14 * np.max(np.abs(sys_mat))):
        raise NumericalError(f"saddle system near {center} is numerically singular")
    return LocalSystem(points=pts, degree=p, exps=exps, center=center,
                       scale=scale, matrix=sys_mat, _lu=lu)


def _rhs_matrix(sys: LocalSystem, op, Y):
    """b(y) rows for all y in Y, in scaled coordinates with chain rule."""
    z = (np.atleast_2d(Y) - sys.center) / sys.scale
    zx = sys.scaled_points
    diff = z[:, None, :] - zx[None, :, :]
    r = np.linalg.norm(diff, axis=-1)
    if op == VALUE:
        phi = r**3
        poly = _monomial_matrix(z, sys.exps)
        fac = 1.0
    elif op in (DX, DY):
        axis = 0 if op == DX else 1
        if axis >= z.shape[1]:
            raise ConfigurationError(f"operator {op} undefined in {z.shape[1]}D")
        phi = 3.0 * r * diff[:, :, axis]
        poly = _monomial_matrix(z, sys.exps, diff=axis)
        fac = 1.0 / sys.scale
    else:
        raise ConfigurationError(f"unsupported operator {op!r}")
    return np.hstack([phi, poly]) * fac


def weight_rows(sys: LocalSystem, op, Y):
    """Weight vectors (one row per y in Y) for an operator: value, dx or dy."""
    b = _rhs_matrix(sys, op, Y)
    w = lu_solve(sys._lu, b.T, trans=1)  # A~ is symmetric; trans is cosmetic
    return np.ascontiguousarray(w[: sys.n].T)


def weight_vector(sys: LocalSystem, op, y):
    return weight_rows(sys, op, np.atleast_2d(y))[0]
