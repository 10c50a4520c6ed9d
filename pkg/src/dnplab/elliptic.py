"""Weighted p-Laplace problems with absorption, solved by energy minimization.

The discrete energy of a nodal field ``v`` is

    sum_T |T| * gbar_T / p * (|grad v|_T^2 + delta^2)^(p/2)
        + sum_i M_i * V_i / (m + 1) * max(v_i, 0)^(m + 1)
        - sum_i M_i * s_i * v_i

with ``gbar_T`` the vertex average of gamma, ``M`` the lumped mass and ``s``
an optional nodal source (used by the implicit time stepper).  Minimization
runs damped Newton on the interior nodes with a decreasing sequence of
regularization parameters ``delta``.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .discretization import (
    TriangleMesh,
    assemble_stiffness,
    element_gradients,
    harmonic_extension,
    vertex_average,
)

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Newton iteration failed; ``diagnostics`` holds the per-stage history."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


@dataclass(frozen=True, eq=False)
class EllipticProblem:
    """-div(gamma |grad w|^(p-2) grad w) + V w^m = source, w = g on the boundary."""

    mesh: TriangleMesh
    gamma: np.ndarray
    potential: np.ndarray
    p: float
    m: float
    dirichlet: np.ndarray
    source: np.ndarray | None = None
    mu: float | None = None

    def __post_init__(self):
        n = self.mesh.n_nodes
        for name in ("gamma", "potential"):
            val = np.asarray(getattr(self, name), dtype=float)
            val = np.broadcast_to(val, (n,)).copy()
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        g = np.broadcast_to(np.asarray(self.dirichlet, dtype=float), self.mesh.boundary_nodes.shape).copy()
        g.setflags(write=False)
        object.__setattr__(self, "dirichlet", g)
        if self.source is not None:
            s = np.broadcast_to(np.asarray(self.source, dtype=float), (n,)).copy()
            s.setflags(write=False)
            object.__setattr__(self, "source", s)
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "m", float(self.m))

        if not self.p > 1.0:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if not self.m > 0.0:
            raise ValueError(f"m must be positive, got {self.m}")
        if not np.all(self.gamma > 0):
            raise ValueError("gamma must be strictly positive")
        if np.any(self.potential < 0):
            raise ValueError("potential must be nonnegative")
        if self.has_absorption and np.any(self.dirichlet < 0):
            raise ValueError("Dirichlet data must be nonnegative when the absorption term is active")
        if self.mu is not None:
            lo, hi = 1.0 / self.mu, self.mu
            if np.any(self.gamma < lo) or np.any(self.gamma > hi):
                raise ValueError(f"gamma violates the declared bounds [{lo}, {hi}]")
        for name in ("gamma", "potential", "dirichlet"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite values")

    @property
    def has_absorption(self) -> bool:
        return bool(np.any(self.potential > 0))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.mesh.nodes, self.mesh.triangles, self.gamma, self.potential, self.dirichlet):
            h.update(np.ascontiguousarray(arr).tobytes())
        if self.source is not None:
            h.update(self.source.tobytes())
        h.update(np.array([self.p, self.m]).tobytes())
        return h.hexdigest()

    def with_dirichlet(self, g) -> "EllipticProblem":
        return EllipticProblem(self.mesh, self.gamma, self.potential, self.p, self.m, g, self.source, self.mu)


@dataclass(frozen=True)
class SolverSettings:
    grad_tol: float = 1e-10
    max_newton: int = 60
    delta_factors: tuple = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
    delta_floor: float = 1e-12
    stage_tol: float = 1e-4
    armijo_slope: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 60

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        f = np.asarray(self.delta_factors, dtype=float)
        if f.size == 0 or np.any(f <= 0) or np.any(np.diff(f) >= 0):
            raise ValueError("delta_factors must be positive and strictly decreasing")

    def delta_sequence(self, scale: float) -> np.ndarray:
        seq = np.maximum(np.asarray(self.delta_factors) * scale, self.delta_floor)
        keep = np.concatenate([[True], np.diff(seq) < 0])
        return seq[keep]


@dataclass(frozen=True, eq=False)
class EllipticSolution:
    w: np.ndarray
    final_energy: float
    iterations: int
    achieved_grad_norm: float
    delta: float
    problem_id: str
    history: list = field(default_factory=list, repr=False)


def _positive_part(v):
    return np.maximum(v, 0.0)


def _flux_scale(g2, p, delta):
    """(|G|^2 + delta^2)^((p-2)/2), with 0 where that is 0 * inf."""
    s = g2 + delta * delta
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(s > 0, s ** (0.5 * (p - 2.0)), 0.0)
    return c, s


def energy(problem: EllipticProblem, v: np.ndarray, delta: float = 0.0) -> float:
    return _energy(problem, v, delta, shifted=False)


def _energy(problem, v, delta, shifted=True):
    """Discrete energy; ``shifted`` drops the constant area * gbar * delta^p / p.

    The shift leaves minimizer and gradient unchanged but keeps energy
    differences representable when |grad v| is far below delta.
    """
    mesh = problem.mesh
    eg = element_gradients(mesh, v)
    gbar = vertex_average(mesh, problem.gamma)
    g2 = np.einsum("tk,tk->t", eg.grad, eg.grad)
    p = problem.p
    if shifted and delta > 0:
        dens = delta**p * np.expm1(0.5 * p * np.log1p(g2 / (delta * delta)))
    else:
        dens = (g2 + delta * delta) ** (0.5 * p)
    e = np.sum(eg.area * gbar / p * dens)
    m1 = problem.m + 1.0
    e += np.sum(mesh.lumped_mass * problem.potential * _positive_part(v) ** m1) / m1
    if problem.source is not None:
        e -= np.sum(mesh.lumped_mass * problem.source * v)
    return float(e)


def _full_residual(problem, v, delta):
    """Energy gradient at every node, plus the termwise-absolute magnitude used for scaling."""
    mesh = problem.mesh
    eg = element_gradients(mesh, v)
    gbar = vertex_average(mesh, problem.gamma)
    c, _ = _flux_scale(np.einsum("tk,tk->t", eg.grad, eg.grad), problem.p, delta)
    flux = (eg.area * gbar * c)[:, None] * eg.grad
    contrib = np.einsum("tk,tik->ti", flux, mesh.basis_gradients)
    r = np.zeros(mesh.n_nodes)
    mag = np.zeros(mesh.n_nodes)
    np.add.at(r, mesh.triangles.ravel(), contrib.ravel())
    np.add.at(mag, mesh.triangles.ravel(), np.abs(contrib).ravel())
    zeroth = mesh.lumped_mass * problem.potential * _positive_part(v) ** problem.m
    r += zeroth
    mag += np.abs(zeroth)
    if problem.source is not None:
        src = mesh.lumped_mass * problem.source
        r -= src
        mag += np.abs(src)
    return r, mag


def energy_gradient(problem: EllipticProblem, v: np.ndarray, delta: float = 0.0) -> np.ndarray:
    """Derivative of :func:`energy` along each interior hat function; zero on the boundary."""
    r, _ = _full_residual(problem, v, delta)
    r[problem.mesh.boundary_nodes] = 0.0
    return r


def energy_hessian(problem: EllipticProblem, v: np.ndarray, delta: float, h_floor: float = 0.0):
    mesh = problem.mesh
    eg = element_gradients(mesh, v)
    gbar = vertex_average(mesh, problem.gamma)
    g2 = np.einsum("tk,tk->t", eg.grad, eg.grad)
    c, s = _flux_scale(g2, problem.p, delta)
    with np.errstate(divide="ignore", invalid="ignore"):
        outer = np.where(s[:, None, None] > 0, eg.grad[:, :, None] * eg.grad[:, None, :] / s[:, None, None], 0.0)
    H = (gbar * c)[:, None, None] * (np.eye(2) + (problem.p - 2.0) * outer)
    K = assemble_stiffness(mesh, H)
    m = problem.m
    vp = _positive_part(v)
    if m < 1.0:
        # true curvature is zero where v <= 0 and blows up as v -> 0+; clamp the latter
        d2 = np.zeros_like(vp)
        pos = v > 0
        d2[pos] = m * np.maximum(vp[pos], h_floor) ** (m - 1.0)
    elif m == 1.0:
        d2 = (v > 0).astype(float)
    else:
        d2 = m * vp ** (m - 1.0)
    return K + sp.diags(mesh.lumped_mass * problem.potential * d2)


def flux_field(problem: EllipticProblem, w: np.ndarray, delta: float = 0.0) -> np.ndarray:
    """Per-triangle flux gbar_T (|grad w|^2 + delta^2)^((p-2)/2) grad w."""
    eg = element_gradients(problem.mesh, w)
    gbar = vertex_average(problem.mesh, problem.gamma)
    c, _ = _flux_scale(np.einsum("tk,tk->t", eg.grad, eg.grad), problem.p, delta)
    return (gbar * c)[:, None] * eg.grad


def initial_guess(problem: EllipticProblem) -> np.ndarray:
    return harmonic_extension(problem.mesh, problem.dirichlet)


def _relative_norm(r, mag, idx):
    rn = float(np.max(np.abs(r[idx]))) if idx.size else 0.0
    ref = float(np.max(mag[idx])) if idx.size else 0.0
    if ref == 0.0:
        return 0.0 if rn == 0.0 else np.inf
    return rn / ref


def _residual_step(problem, v, d, delta, rel, inner, settings):
    t = 1.0
    for _ in range(settings.max_backtracks):
        trial = v.copy()
        trial[inner] += t * d
        r, mag = _full_residual(problem, trial, delta)
        if _relative_norm(r, mag, inner) < 0.9 * rel:
            return trial
        t *= settings.backtrack
    return None


def _newton_stage(problem, v, delta, tol, settings, h_floor, history):
    inner = problem.mesh.interior_nodes
    e = _energy(problem, v, delta)
    for it in range(settings.max_newton + 1):
        r, mag = _full_residual(problem, v, delta)
        rel = _relative_norm(r, mag, inner)
        history.append({"delta": delta, "iter": it, "energy": e, "rel_grad": rel})
        if rel <= tol:
            return v, e, it, rel, True
        if it == settings.max_newton:
            break
        g = r[inner]
        H = energy_hessian(problem, v, delta, h_floor)[inner][:, inner].tocsc()
        d = -spsolve(H, g)
        slope = float(g @ d)
        if not np.all(np.isfinite(d)) or slope >= 0:
            d = -g
            slope = -float(g @ g)
        t = 1.0
        slack = 64 * np.finfo(float).eps * max(abs(e), 1e-300)
        for _ in range(settings.max_backtracks):
            trial = v.copy()
            trial[inner] += t * d
            e_trial = _energy(problem, trial, delta)
            if e_trial <= e + settings.armijo_slope * t * slope + slack:
                break
            t *= settings.backtrack
        else:
            trial = None
        if trial is None or e - e_trial <= slack:
            # energy decrease lost in round-off: fall back to the residual as merit
            trial = _residual_step(problem, v, d, delta, rel, inner, settings)
            if trial is None:
                history.append({"delta": delta, "iter": it, "line_search": "failed"})
                return v, e, it, rel, False
            e_trial = _energy(problem, trial, delta)
        v, e = trial, e_trial
    return v, e, settings.max_newton, rel, False


def solve(problem: EllipticProblem, settings: SolverSettings | None = None, initial=None) -> EllipticSolution:
    """Minimize the discrete energy; raises :class:`SolverError` on failure.

    ``final_energy`` is the unregularized (delta = 0) energy of the result.
    """
    settings = settings or SolverSettings()
    mesh = problem.mesh
    if initial is None:
        v = initial_guess(problem)
    else:
        v = np.array(initial, dtype=float)
        if v.shape != (mesh.n_nodes,):
            raise ValueError("initial guess has the wrong shape")
        v[mesh.boundary_nodes] = problem.dirichlet
    scale = float(np.max(element_gradients(mesh, v).norm, initial=0.0))
    if scale == 0.0:
        scale = float(np.max(np.abs(problem.dirichlet), initial=0.0)) or 1.0
    deltas = settings.delta_sequence(scale)
    gmax = float(np.max(np.abs(problem.dirichlet), initial=0.0))
    h_floor = 1e-8 * gmax if gmax > 0 else 1e-8

    history, total = [], 0
    for k, delta in enumerate(deltas):
        last = k == len(deltas) - 1
        tol = settings.grad_tol if last else max(settings.stage_tol, settings.grad_tol)
        v, e, its, rel, ok = _newton_stage(problem, v, float(delta), tol, settings, h_floor, history)
        total += its
        if not ok:
            raise SolverError(
                f"Newton failed at delta={delta:.3e} (stage {k + 1}/{len(deltas)}), "
                f"relative gradient {rel:.3e} > {tol:.1e}",
                history,
            )
    log.debug("solved in %d Newton steps, rel grad %.2e", total, rel)
    v.setflags(write=False)
    return EllipticSolution(v, energy(problem, v), total, rel, float(deltas[-1]), problem.fingerprint(), history)
