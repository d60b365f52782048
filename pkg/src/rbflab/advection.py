"""Scaled semi-discrete advection system, RK4 time stepping and energy traces.

The semi-discrete problem is (E~^T E~) du/dt = -E~^T D~(t) u + gamma P u with
E~ = h_y E and D~(t) = h_y (F1'(t) D1 + F2'(t) D2).  The mass matrix E~^T E~
is symmetric positive definite and every right-hand-side evaluation is one
conjugate-gradient solve, warm-started from the previous stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from rbflab.errors import ConfigurationError, DivergenceError, SolverError
from rbflab.geometry import (DomainSpec, PointSet, classify_boundary,
                             generate_evaluation_set, generate_nodes,
                             perturb_nodes)
from rbflab import methods
from rbflab.voronoi import assemble_penalty, build_voronoi

_TWO_PI = 2.0 * np.pi

# E, D1, D2 are stored explicitly only below this many dense entries; larger
# Kansa systems keep the factorized global system and stream weight rows.
_DENSE_STORE_LIMIT = 6_000_000


@dataclass(frozen=True)
class VelocityField:
    """Time-dependent, space-constant velocity t -> (F1'(t), F2'(t))."""

    func: object
    divergence_free: bool = True

    def __call__(self, t):
        return np.asarray(self.func(t), dtype=float)

    def speed(self, t):
        return float(np.linalg.norm(self(t)))


def rotational_field() -> VelocityField:
    """F'(t) = (cos(2 pi t), sin(2 pi t)) / 2; constant speed 1/2."""
    return VelocityField(lambda t: 0.5 * np.array([np.cos(_TWO_PI * t),
                                                   np.sin(_TWO_PI * t)]))


def zero_field() -> VelocityField:
    return VelocityField(lambda t: np.zeros(2))


def initial_condition(y):
    """Compactly supported bump (1-s)^6 (35 s^2 + 18 s + 3), s = ||y|| / 0.4."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    s = np.linalg.norm(y, axis=1) / 0.4
    inside = s <= 1.0
    out = np.zeros(len(y))
    si = s[inside]
    out[inside] = (1.0 - si) ** 6 * (35.0 * si**2 + 18.0 * si + 3.0)
    return out if out.size > 1 else float(out[0])


def displacement(t):
    """Integral of the rotational field: s(t) = (sin 2pi t, 1 - cos 2pi t)/(4 pi)."""
    return np.array([np.sin(_TWO_PI * t), 1.0 - np.cos(_TWO_PI * t)]) / (2.0 * _TWO_PI)


def exact_solution(y, t):
    """Advected bump u(y, t) = u0(y - s(t)) for the rotational field."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    return initial_condition(y - displacement(t))


def timestep(cfl, h, velocity, t=0.0):
    """dt = CFL * h / ||F'(t)||; the rotational field gives dt = 2 CFL h."""
    if cfl <= 0.0:
        raise ConfigurationError(f"CFL must be positive, got {cfl}")
    speed = velocity.speed(t) if isinstance(velocity, VelocityField) else \
        float(np.linalg.norm(np.asarray(velocity(t), dtype=float)))
    if speed <= 0.0:
        raise ConfigurationError("zero velocity: time step undefined")
    return cfl * h / speed


@dataclass
class SolveConfig:
    cfl: float
    t_final: float
    inflow_data: object = None  # callable (points, t) -> values; None means 0
    cg_tol: float = 1e-10
    cg_maxiter: int = None  # default 10 sqrt(N)

    def __post_init__(self):
        if self.cfl <= 0.0:
            raise ConfigurationError(f"CFL must be positive, got {self.cfl}")
        if self.t_final < 0.0:
            raise ConfigurationError(f"t_final must be >= 0, got {self.t_final}")

    def inflow_values(self, points, t):
        if self.inflow_data is None:
            return np.zeros(len(points))
        return np.asarray(self.inflow_data(points, t), dtype=float)


@dataclass
class EnergyTrace:
    """Solution energy ||E~ u(t)||^2 relative to the initial energy."""

    times: np.ndarray
    ratios: np.ndarray

    @property
    def max_ratio(self):
        return float(np.max(self.ratios))

    @property
    def final_ratio(self):
        return float(self.ratios[-1])


@dataclass
class SemiDiscreteSystem:
    """Assembled operators of one (method, X, Y, p) combination.

    mass = E~^T E~, K1 = E~^T (h_y D1), K2 = E~^T (h_y D2); the penalty
    contribution gamma P is stored pre-multiplied by gamma = -h_edge.
    """

    method: str
    domain: DomainSpec
    nodes: PointSet
    eval_points: PointSet
    h_y: float
    mass: object  # (N, N) ndarray or csr_matrix
    K1: object
    K2: object
    velocity: VelocityField
    gamma_P: object = None  # gamma * P, or None when unstabilized
    gamma: float = 0.0
    E: object = None  # unscaled (M, N) evaluation matrix when stored
    kansa_sys: object = None  # factorized global system for streamed evaluation
    cg_tol: float = 1e-10
    cg_maxiter: int = None
    meta: dict = field(default_factory=dict)
    _warm: np.ndarray = None

    @property
    def n(self):
        return self.nodes.n

    @property
    def penalized(self):
        return self.gamma_P is not None

    def drift_matrix(self, t):
        """-E~^T D~(t) + gamma P as one matrix (dense or sparse)."""
        f1, f2 = self.velocity(t)
        A = -(f1 * self.K1 + f2 * self.K2)
        if self.gamma_P is not None:
            A = A + self.gamma_P
        return A

    def rhs(self, u, t):
        """du/dt: CG solve of mass * v = -E~^T D~(t) u + gamma P u."""
        f1, f2 = self.velocity(t)
        b = -(f1 * (self.K1 @ u) + f2 * (self.K2 @ u))
        if self.gamma_P is not None:
            b = b + self.gamma_P @ u
        if not np.all(np.isfinite(b)):
            raise DivergenceError("non-finite right-hand side", time=t)
        maxiter = self.cg_maxiter or int(10 * math.sqrt(self.n)) + 1
        v, info = cg(self.mass, b, x0=self._warm, rtol=self.cg_tol, atol=0.0,
                     maxiter=maxiter)
        if info != 0:
            res = float(np.linalg.norm(self.mass @ v - b))
            if not np.isfinite(res):
                raise DivergenceError("mass solve overflowed", time=t)
            raise SolverError(
                f"CG did not converge in {maxiter} iterations "
                f"(residual {res:.3e})", residual=res)
        self._warm = v
        return v

    def energy(self, u):
        """||E~ u||^2 = u^T mass u."""
        u = np.asarray(u, dtype=float)
        return float(u @ (self.mass @ u))

    def evaluate_solution(self, u):
        """u_h(Y) = E(Y, X) u with the unscaled evaluation matrix."""
        u = np.asarray(u, dtype=float)
        if self.E is not None:
            return np.asarray(self.E @ u)
        if self.kansa_sys is None:
            raise ConfigurationError("no evaluation matrix stored for this system")
        out = np.empty(self.eval_points.n)
        for sl, e, _, _ in methods.kansa_weight_chunks(self.kansa_sys,
                                                       self.eval_points.points):
            out[sl] = e @ u
        return out

    def classify(self, t):
        return classify_boundary(self.nodes, self.domain, self.velocity, t)

    def inject(self, u, cfg: SolveConfig, t):
        """Overwrite the inflow nodal values with the Dirichlet data at time t."""
        bc = self.classify(t)
        if len(bc.inflow):
            u[bc.inflow] = cfg.inflow_values(self.nodes.points[bc.inflow], t)
        return u


def _accumulate_kansa(sys, Y, h_y):
    """Stream E/D1/D2 rows and accumulate the N x N products."""
    n = sys.n
    mass = np.zeros((n, n))
    K1 = np.zeros((n, n))
    K2 = np.zeros((n, n))
    for _, e, d1, d2 in methods.kansa_weight_chunks(sys, Y):
        mass += e.T @ e
        K1 += e.T @ d1
        K2 += e.T @ d2
    s = h_y * h_y
    return s * mass, s * K1, s * K2


def build_semidiscrete(method, domain, h, q, p, n=None, penalty=False,
                       seed=0, perturb=0.0, eval_kind="quasi-uniform",
                       velocity=None, cg_tol=1e-10, cg_maxiter=None,
                       nodes=None, eval_points=None) -> SemiDiscreteSystem:
    """Generate point sets, assemble one method and scale the system.

    q = 1 collocates (Y = X); otherwise the evaluation set has spacing
    h_y = h / sqrt(q).  With penalty=True the Voronoi jump penalty gamma P,
    gamma = -h_edge, is attached.
    """
    if velocity is None:
        velocity = rotational_field()
    if nodes is None:
        nodes = generate_nodes(domain, h, seed=seed)
    if perturb > 0.0:
        nodes = perturb_nodes(nodes, perturb, seed=seed)
    if eval_points is None:
        kind = "collocate" if q == 1 else eval_kind
        eval_points = generate_evaluation_set(domain, h, q, kind=kind,
                                              seed=seed + 1, nodes=nodes)
    h_y = h / math.sqrt(q)
    X, Y = nodes.points, eval_points.points
    M, N = len(Y), len(X)

    E = K1 = K2 = mass = None
    kansa_sys = None
    meta = {"p": p, "q": q, "h": h, "N": N, "M": M}
    if method == "kansa" and 3 * M * N > _DENSE_STORE_LIMIT:
        kansa_sys = methods.kansa_system(X, p)
        mass, K1, K2 = _accumulate_kansa(kansa_sys, Y, h_y)
    else:
        op = methods.build_operator(method, X, Y, p, n=n, domain=domain)
        E, D1, D2 = op.matrices()
        s = h_y * h_y
        if sp.issparse(E):
            mass = (s * (E.T @ E)).tocsr()
            K1 = (s * (E.T @ D1)).tocsr()
            K2 = (s * (E.T @ D2)).tocsr()
        else:
            mass = s * (E.T @ E)
            K1 = s * (E.T @ D1)
            K2 = s * (E.T @ D2)
        meta.update(op.meta)
        if method == "kansa":
            kansa_sys = methods.kansa_system(X, p)

    gamma_P = None
    gamma = 0.0
    if penalty:
        vd = build_voronoi(nodes, domain)
        pen = assemble_penalty(vd, X, p, n=n)
        gamma = pen.gamma
        gamma_P = gamma * pen.P
        if sp.issparse(mass):
            gamma_P = gamma_P.tocsr()
        else:
            gamma_P = gamma_P.toarray()
        meta["h_edge"] = vd.h_edge

    return SemiDiscreteSystem(method=method, domain=domain, nodes=nodes,
                              eval_points=eval_points, h_y=h_y, mass=mass,
                              K1=K1, K2=K2, velocity=velocity,
                              gamma_P=gamma_P, gamma=gamma, E=E,
                              kansa_sys=kansa_sys, cg_tol=cg_tol,
                              cg_maxiter=cg_maxiter, meta=meta)


def rk4_advance(system: SemiDiscreteSystem, u0, cfg: SolveConfig):
    """Classical RK4 with inflow injection after every step.

    Returns (u(t_final), EnergyTrace).  The energy is recorded at every step;
    NaN/inf in the solution raises DivergenceError carrying the partial trace.
    """
    u = np.array(u0, dtype=float)
    times = [0.0]
    ratios = [1.0]
    e0 = system.energy(u)
    if cfg.t_final == 0.0:
        return u, EnergyTrace(np.array(times), np.array(ratios))

    dt0 = timestep(cfg.cfl, system.nodes.h, system.velocity, 0.0)
    nsteps = int(math.ceil(cfg.t_final / dt0 - 1e-12))
    system.cg_tol = cfg.cg_tol
    system.cg_maxiter = cfg.cg_maxiter
    t = 0.0
    for _ in range(nsteps):
        dt = min(dt0, cfg.t_final - t)
        try:
            k1 = system.rhs(u, t)
            k2 = system.rhs(u + 0.5 * dt * k1, t + 0.5 * dt)
            k3 = system.rhs(u + 0.5 * dt * k2, t + 0.5 * dt)
            k4 = system.rhs(u + dt * k3, t + dt)
        except DivergenceError as exc:
            raise DivergenceError(f"diverged at t={t:.6g}", time=t,
                                  trace=EnergyTrace(np.array(times),
                                                    np.array(ratios))) from exc
        u = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += dt
        system.inject(u, cfg, t)
        if not np.all(np.isfinite(u)):
            raise DivergenceError(f"diverged at t={t:.6g}", time=t,
                                  trace=EnergyTrace(np.array(times),
                                                    np.array(ratios)))
        times.append(t)
        ratios.append(system.energy(u) / e0 if e0 > 0.0 else 1.0)
    return u, EnergyTrace(np.array(times), np.array(ratios))
