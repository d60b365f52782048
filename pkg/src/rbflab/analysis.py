"""Experiment harnesses: spectra vs. the RK4 region, convergence tables,
integration-error sweeps and maximal-CFL searches.

All slopes are ordinary least-squares fits in log-log coordinates over the
whole sweep, which is robust against pre-asymptotic wiggle in single
intervals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import brentq

from rbflab import advection as adv
from rbflab.errors import ConfigurationError, NumericalError
from rbflab.geometry import DomainSpec, generate_evaluation_set, generate_nodes

_MAX_DENSE_EIG = 6000
# random perturbation magnitude (fraction of h) used for the scattered-node
# variants of the spectra and max-CFL experiments
SCATTER_PERTURBATION = 0.65


# ---------------------------------------------------------------------------
# RK4 stability region
# ---------------------------------------------------------------------------

def rk4_amplification(z):
    """|R(z)| with R(z) = 1 + z + z^2/2 + z^3/6 + z^4/24."""
    z = np.asarray(z, dtype=complex)
    return np.abs(1.0 + z + z**2 / 2.0 + z**3 / 6.0 + z**4 / 24.0)


def rk4_real_axis_bound():
    """Largest x > 0 with |R(-x)| <= 1 (about 2.7853)."""
    r = lambda x: 1.0 - x + x**2 / 2.0 - x**3 / 6.0 + x**4 / 24.0
    return brentq(lambda x: r(x) - 1.0, 2.0, 3.0)


def rk4_region_boundary(n=720):
    """Polyline of the RK4 region boundary, traced radially per angle."""
    pts = []
    for ang in np.linspace(0.0, 2.0 * np.pi, n, endpoint=False):
        d = complex(np.cos(ang), np.sin(ang))
        f = lambda r: rk4_amplification(r * d) - 1.0
        if f(1e-9) >= 0.0:
            # the region does not extend in this direction (right half-plane)
            pts.append(0.0 * d)
            continue
        hi = 1.0
        while f(hi) < 0.0 and hi < 16.0:
            hi *= 2.0
        r = brentq(f, 1e-9, hi) if f(hi) >= 0.0 else hi
        pts.append(r * d)
    pts.append(pts[0])
    return np.asarray(pts)


# ---------------------------------------------------------------------------
# ODE matrix and spectra
# ---------------------------------------------------------------------------

@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray  # complex, of the reduced ODE matrix
    dt: float
    stable: np.ndarray  # per-eigenvalue flag |R(lambda dt)| <= 1

    @property
    def n_total(self):
        return len(self.eigenvalues)

    @property
    def n_unstable(self):
        return int(np.count_nonzero(~self.stable))

    @property
    def is_stable(self):
        return self.n_unstable == 0


def ode_matrix(system: adv.SemiDiscreteSystem, t_star=0.0, keep_inflow=False):
    """Dense A = (E~^T E~)^{-1} (-E~^T D~(t*) + gamma P), inflow rows/columns
    removed.  Returns (A_reduced, kept node indices)."""
    n = system.n
    bc = system.classify(t_star)
    keep = np.setdiff1d(np.arange(n), bc.inflow) if not keep_inflow \
        else np.arange(n)
    if len(keep) > _MAX_DENSE_EIG:
        raise ConfigurationError(
            f"reduced system of size {len(keep)} exceeds the dense "
            f"eigensolve guard ({_MAX_DENSE_EIG})")
    mass = system.mass.toarray() if sp.issparse(system.mass) else system.mass
    drift = system.drift_matrix(t_star)
    if sp.issparse(drift):
        drift = drift.toarray()
    try:
        c = sla.cho_factor(mass)
        A = sla.cho_solve(c, drift)
    except sla.LinAlgError as exc:
        raise NumericalError(f"mass matrix factorization failed: {exc}") from exc
    return np.ascontiguousarray(A[np.ix_(keep, keep)]), keep


def spectrum(A, dt, check_residuals=True) -> SpectrumReport:
    """Dense eigendecomposition of A classified against the RK4 region."""
    try:
        lam, vecs = sla.eig(A)
    except sla.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    if check_residuals and len(lam):
        rng = np.random.default_rng(0)
        idx = rng.choice(len(lam), size=min(10, len(lam)), replace=False)
        norm_a = np.linalg.norm(A, "fro")
        for k in idx:
            res = np.linalg.norm(A @ vecs[:, k] - lam[k] * vecs[:, k])
            if res > 1e-7 * norm_a:
                raise NumericalError(
                    f"eigenpair residual {res:.3e} exceeds 1e-7 ||A||_F")
    stable = rk4_amplification(lam * dt) <= 1.0
    return SpectrumReport(eigenvalues=lam, dt=dt, stable=stable)


def run_spectrum_suite(method, domain, h, p, q_values, cfl, n=None,
                       penalty=False, perturb=0.0, seed=0, t_star=0.0):
    """Per-q spectrum reports for one (method, h, p) combination.

    The node set is generated once and shared across all q.
    """
    nodes = generate_nodes(domain, h, seed=seed)
    if perturb > 0.0:
        from rbflab.geometry import perturb_nodes
        nodes = perturb_nodes(nodes, perturb, seed=seed)
    velocity = adv.rotational_field()
    dt = adv.timestep(cfl, h, velocity, t_star)
    out = {}
    for q in q_values:
        system = adv.build_semidiscrete(method, domain, h, q, p, n=n,
                                        penalty=penalty, seed=seed,
                                        velocity=velocity, nodes=nodes)
        A, _ = ode_matrix(system, t_star=t_star)
        out[q] = spectrum(A, dt)
    return out


# ---------------------------------------------------------------------------
# Convergence in h
# ---------------------------------------------------------------------------

def fit_loglog_slope(x, y):
    """OLS slope and R^2 of log(y) against log(x); y must be positive."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - np.mean(ly)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0
    return float(slope), r2


@dataclass
class ConvergenceTable:
    h_values: np.ndarray
    n_values: np.ndarray
    errors: np.ndarray  # (len(h), 3) relative 1-, 2-, inf-norm errors
    slopes: dict = field(default_factory=dict)  # norm key -> fitted slope
    r2: dict = field(default_factory=dict)

    NORMS = (1, 2, "inf")


def _relative_errors(u_h, u_exact):
    out = []
    for k in (1, 2, np.inf):
        denom = np.linalg.norm(u_exact, ord=k)
        out.append(float(np.linalg.norm(u_h - u_exact, ord=k) / denom))
    return out


def convergence_study(method, domain, p_values, h_values, q, cfl, t_final,
                      penalty=False, n=None, seed=0):
    """Solve the advected-bump problem over an h-sweep; fit slopes per norm."""
    tables = {}
    for p in p_values:
        rows, counts = [], []
        for h in h_values:
            system = adv.build_semidiscrete(method, domain, h, q, p, n=n,
                                            penalty=penalty, seed=seed)
            u0 = adv.initial_condition(system.nodes.points)
            cfg = adv.SolveConfig(cfl=cfl, t_final=t_final)
            u, _ = adv.rk4_advance(system, u0, cfg)
            u_y = system.evaluate_solution(u)
            exact = adv.exact_solution(system.eval_points.points, t_final)
            rows.append(_relative_errors(u_y, exact))
            counts.append(system.n)
        errors = np.asarray(rows)
        table = ConvergenceTable(h_values=np.asarray(h_values, dtype=float),
                                 n_values=np.asarray(counts), errors=errors)
        for col, key in enumerate(ConvergenceTable.NORMS):
            table.slopes[key], table.r2[key] = fit_loglog_slope(
                h_values, errors[:, col])
        tables[p] = table
    return tables


# ---------------------------------------------------------------------------
# Quadrature (integration error of the scaled point-set sum)
# ---------------------------------------------------------------------------

def integrand_gaussian(y):
    return np.exp(-3.0 * np.linalg.norm(np.atleast_2d(y), axis=1))


def integrand_cubic(y):
    return np.linalg.norm(np.atleast_2d(y), axis=1) ** 3


def integrand_piecewise(y):
    y = np.atleast_2d(y)
    r = np.linalg.norm(y, axis=1)
    prod = y[:, 0] * y[:, 1]
    out = np.where(r <= 0.5, 0.2 + np.sin(4.0 * np.pi * prod),
                   np.where(r <= 0.7, y[:, 0] ** 3 * y[:, 1],
                            0.4 + np.cos(4.0 * np.pi * prod)))
    return out


INTEGRANDS = {
    "gaussian": integrand_gaussian,
    "cubic": integrand_cubic,
    "piecewise": integrand_piecewise,
}

_SPLIT_RADII = (0.5, 0.7)  # radii where the piecewise integrand switches


def _theta_breakpoints(domain: DomainSpec):
    """Angles where the boundary radius crosses one of the split radii."""
    thetas = [0.0]
    grid = np.linspace(0.0, 2.0 * np.pi, 4097)
    r = domain.radius(grid)
    for c in _SPLIT_RADII:
        s = r - c
        for k in np.flatnonzero(np.sign(s[:-1]) * np.sign(s[1:]) < 0):
            thetas.append(brentq(lambda t: domain.radius(t) - c,
                                 grid[k], grid[k + 1]))
    thetas.append(2.0 * np.pi)
    return np.unique(thetas)


def _polar_integral(domain, f, n_theta, n_r):
    """Gauss-Legendre in rho (split at the integrand radii) and theta
    (split where the boundary crosses those radii)."""
    gt, wt = np.polynomial.legendre.leggauss(n_theta)
    gr, wr = np.polynomial.legendre.leggauss(n_r)
    total = 0.0
    bps = _theta_breakpoints(domain)
    for a, b in zip(bps[:-1], bps[1:]):
        th = 0.5 * (b - a) * gt + 0.5 * (a + b)
        jac_t = 0.5 * (b - a) * wt
        for theta, wth in zip(th, jac_t):
            r_out = float(domain.radius(theta))
            radii = [0.0] + [c for c in _SPLIT_RADII if c < r_out] + [r_out]
            for r0, r1 in zip(radii[:-1], radii[1:]):
                rho = 0.5 * (r1 - r0) * gr + 0.5 * (r0 + r1)
                w = 0.5 * (r1 - r0) * wr
                pts = np.column_stack([rho * np.cos(theta),
                                       rho * np.sin(theta)])
                total += wth * float(np.sum(w * f(pts) * rho))
    return total


def reference_integral(domain, f, n_theta=24, n_r=24, rel_tol=1e-9):
    """High-order polar quadrature with a resolution-doubling self check."""
    coarse = _polar_integral(domain, f, n_theta, n_r)
    fine = _polar_integral(domain, f, 2 * n_theta, 2 * n_r)
    scale = max(abs(fine), 1.0)
    if abs(fine - coarse) > rel_tol * scale:
        raise NumericalError(
            f"reference quadrature did not converge: "
            f"|{fine:.12g} - {coarse:.12g}| > {rel_tol} * {scale:.3g}")
    return fine


@dataclass
class QuadratureReport:
    entries: dict  # (integrand, kind) -> dict(h_y, errors, slope, r2)
    references: dict  # integrand -> reference integral
    area: float


def quadrature_study(domain, integrands=None, kinds=None, h_y_values=None,
                     seed=0):
    """Error |I - (|Omega|/M) sum f(y_k)| over an h_y sweep per point kind."""
    if integrands is None:
        integrands = tuple(INTEGRANDS)
    if kinds is None:
        kinds = ("cartesian", "halton", "quasi-uniform")
    qu_sweep = None
    if h_y_values is None:
        h_y_values = tuple(np.geomspace(0.12, 0.01, 16))
        # relaxed point generation is expensive below h_y ~ 0.02; the default
        # quasi-uniform sweep stops there
        qu_sweep = (0.1, 0.075, 0.055, 0.04, 0.03, 0.0225)
    if len(h_y_values) < 4:
        raise ConfigurationError("need at least 4 spacings to fit a slope")
    area = domain.area()
    refs = {name: reference_integral(domain, INTEGRANDS[name])
            for name in integrands}
    point_sets = {}
    for kind in kinds:
        sweep = qu_sweep if kind == "quasi-uniform" and qu_sweep is not None \
            else tuple(h_y_values)
        # the integration-order fit benefits from a fully converged relaxation,
        # so the quasi-uniform sweep uses more Lloyd iterations than the
        # evaluation-set default
        point_sets[kind] = (sweep, [
            generate_evaluation_set(domain, h_y, 1, kind=kind, seed=seed,
                                    relax_iterations=60)
            for h_y in sweep])
    entries = {}
    for name in integrands:
        f = INTEGRANDS[name]
        for kind in kinds:
            sweep, sets = point_sets[kind]
            errs = []
            for ps in sets:
                approx = area / ps.n * float(np.sum(f(ps.points)))
                errs.append(abs(refs[name] - approx))
            slope, r2 = fit_loglog_slope(sweep, errs)
            entries[(name, kind)] = {
                "h_y": np.asarray(sweep, dtype=float),
                "errors": np.asarray(errs),
                "slope": slope,
                "r2": r2,
            }
    return QuadratureReport(entries=entries, references=refs, area=area)


# ---------------------------------------------------------------------------
# Maximal stable CFL
# ---------------------------------------------------------------------------

@dataclass
class MaxCflResult:
    cfl: float
    stable: bool  # False when no positive CFL is stable
    n_eigenvalues: int


def max_cfl_from_eigenvalues(lam, h, velocity=None, iterations=20):
    """Bisection (fixed iteration count) for the largest stable CFL."""
    lam = np.asarray(lam, dtype=complex)
    if velocity is None:
        velocity = adv.rotational_field()
    scale = float(np.max(np.abs(lam))) if len(lam) else 0.0
    if scale == 0.0:
        return MaxCflResult(cfl=math.inf, stable=True, n_eigenvalues=len(lam))
    if np.any(lam.real > 1e-12 * scale):
        return MaxCflResult(cfl=0.0, stable=False, n_eigenvalues=len(lam))

    def is_stable(cfl):
        dt = adv.timestep(cfl, h, velocity)
        return bool(np.all(rk4_amplification(lam * dt) <= 1.0))

    lo, hi = 0.0, 1.0
    while is_stable(hi):
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            return MaxCflResult(cfl=lo, stable=True, n_eigenvalues=len(lam))
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if is_stable(mid):
            lo = mid
        else:
            hi = mid
    return MaxCflResult(cfl=lo, stable=lo > 0.0, n_eigenvalues=len(lam))


def max_cfl_search(method, domain, h, p, q, n=None, penalty=False,
                   perturb=0.0, seed=0, t_star=0.0, nodes=None) -> MaxCflResult:
    """Largest CFL for which every eigenvalue stays inside the RK4 region."""
    if nodes is None:
        nodes = generate_nodes(domain, h, seed=seed)
        if perturb > 0.0:
            from rbflab.geometry import perturb_nodes
            nodes = perturb_nodes(nodes, perturb, seed=seed)
    system = adv.build_semidiscrete(method, domain, h, q, p, n=n,
                                    penalty=penalty, seed=seed, nodes=nodes)
    A, _ = ode_matrix(system, t_star=t_star)
    lam = sla.eigvals(A)
    return max_cfl_from_eigenvalues(lam, h, system.velocity)
