"""Doubly nonlinear parabolic problems eps d_t(u^m) = div(gamma |grad u|^(p-2) grad u).

For m > p - 1 and lateral data ``t^alpha g`` with alpha = 1/(m - p + 1),
the solution separates as ``t^alpha w`` where ``w`` solves the elliptic
problem with absorption ``V = alpha m eps``.  General lateral data are
handled by implicit Euler in the variable u^m; every step is a convex
minimization solved with the elliptic machinery.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .discretization import TriangleMesh, element_gradients
from .dtn import dtn_pair, extend, pairing_terms
from .elliptic import (
    EllipticProblem,
    EllipticSolution,
    SolverError,
    SolverSettings,
    energy_gradient,
    flux_field,
    solve,
)


def alpha(m: float, p: float) -> float:
    if not m > p - 1:
        raise ValueError(f"separated solutions need m > p - 1 (got m={m}, p={p})")
    return 1.0 / (m - p + 1.0)


def potential_from_epsilon(epsilon, m: float, p: float) -> np.ndarray:
    return m * alpha(m, p) * np.asarray(epsilon, dtype=float)


def separated_lateral(g, m: float, p: float) -> Callable[[float], np.ndarray]:
    a = alpha(m, p)
    g = np.asarray(g, dtype=float).copy()
    return lambda t: t**a * g


@dataclass(frozen=True, eq=False)
class ParabolicProblem:
    mesh: TriangleMesh
    epsilon: np.ndarray
    gamma: np.ndarray
    p: float
    m: float
    lateral: Callable[[float], np.ndarray]
    T: float = 1.0
    mu: float | None = None

    def __post_init__(self):
        n = self.mesh.n_nodes
        for name in ("epsilon", "gamma"):
            val = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,)).copy()
            if not np.all(val > 0):
                raise ValueError(f"{name} must be strictly positive")
            if self.mu is not None and (np.any(val < 1 / self.mu) or np.any(val > self.mu)):
                raise ValueError(f"{name} violates the declared bounds [1/mu, mu]")
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        if not self.p > 1 or not self.m > 0:
            raise ValueError("need p > 1 and m > 0")
        if not self.T > 0:
            raise ValueError("T must be positive")

    def boundary_values(self, t: float) -> np.ndarray:
        g = np.broadcast_to(np.asarray(self.lateral(t), dtype=float), self.mesh.boundary_nodes.shape)
        return g.copy()


@dataclass(frozen=True)
class TimeGrid:
    steps: int
    T: float = 1.0

    def __post_init__(self):
        if self.steps < 1 or int(self.steps) != self.steps:
            raise ValueError("steps must be a positive integer")

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.steps + 1)


@dataclass(frozen=True, eq=False)
class SeparatedSolution:
    """u(t, x) = t^alpha w(x) built from the elliptic solve."""

    problem: ParabolicProblem
    elliptic: EllipticProblem
    solution: EllipticSolution
    alpha: float

    @property
    def w(self) -> np.ndarray:
        return self.solution.w

    def at(self, t: float) -> np.ndarray:
        return t**self.alpha * self.w

    def flux_at(self, t: float) -> np.ndarray:
        """Per-triangle flux of u(t), computed from the nodal field u(t) itself."""
        return flux_field(self.elliptic, self.at(t), 0.0)

    def time_factor(self, t: float) -> float:
        return t ** (self.alpha * (self.problem.p - 1.0))


def separated_solution(problem: ParabolicProblem, g, settings: SolverSettings | None = None) -> SeparatedSolution:
    a = alpha(problem.m, problem.p)
    g = np.asarray(g, dtype=float)
    if not np.all(g > 0):
        raise ValueError("separated data must be strictly positive")
    V = potential_from_epsilon(problem.epsilon, problem.m, problem.p)
    ell = EllipticProblem(problem.mesh, problem.gamma, V, problem.p, problem.m, g, mu=problem.mu)
    return SeparatedSolution(problem, ell, solve(ell, settings), a)


def _step_problem(problem, dt, u_prev, g):
    eps = problem.epsilon
    return EllipticProblem(
        problem.mesh, problem.gamma, eps / dt, problem.p, problem.m, g,
        source=eps * np.maximum(u_prev, 0.0) ** problem.m / dt,
    )


def step_implicit(
    problem: ParabolicProblem,
    grid: TimeGrid,
    settings: SolverSettings | None = None,
    initial: np.ndarray | None = None,
) -> list:
    """Snapshots u_0, ..., u_N of implicit Euler in u^m.

    Step n minimizes int gamma |grad v|^p / p + (1/dt) int eps (v_+^(m+1)/(m+1) - u_{n-1}^m v)
    subject to the lateral data at t_n.  ``initial`` overrides the zero
    initial state (used for dissipation checks).
    """
    mesh = problem.mesh
    u = np.zeros(mesh.n_nodes) if initial is None else np.array(initial, dtype=float)
    if initial is None:
        u[mesh.boundary_nodes] = problem.boundary_values(0.0)
    snaps = [u.copy()]
    lateral = [problem.boundary_values(t) for t in grid.times]
    # values below eps^2 of the run's scale are flushed to zero: with zero data
    # the state can decay like u -> u^2 per step and would otherwise underflow
    scale = max(float(np.max(np.abs(u))), max(float(np.max(np.abs(g), initial=0.0)) for g in lateral))
    negligible = np.finfo(float).eps ** 2 * scale
    guess = None
    for k, t in enumerate(grid.times[1:], start=1):
        g = lateral[k]
        if np.any(g < 0):
            raise ValueError(f"lateral data negative at step {k}")
        u = np.where(np.abs(u) < negligible, 0.0, u)
        if guess is not None:
            guess = np.where(np.abs(guess) < negligible, 0.0, guess)
        sp = _step_problem(problem, grid.dt, u, g)
        try:
            sol = solve(sp, settings, initial=guess)
        except SolverError as exc:
            raise SolverError(f"time step {k} (t={t:.6g}): {exc}", exc.diagnostics) from exc
        u = np.array(sol.w)
        guess = u
        snaps.append(u.copy())
    return snaps


def implicit_euler_residual(problem: ParabolicProblem, grid: TimeGrid, snapshots) -> np.ndarray:
    """Max-norm of the interior step residual for a given snapshot sequence, per step."""
    mesh = problem.mesh
    inner = mesh.interior_nodes
    out = []
    for k in range(1, len(snapshots)):
        u_prev, u = snapshots[k - 1], snapshots[k]
        sp = _step_problem(problem, grid.dt, u_prev, mesh.trace(u))
        r = energy_gradient(sp, u, 0.0)
        out.append(float(np.max(np.abs(r[inner] / mesh.lumped_mass[inner]))))
    return np.array(out)


def comparison_defect(run1, run2, epsilon, m: float, mesh: TriangleMesh) -> np.ndarray:
    """Lumped int eps (u1^m - u2^m)_+ at every snapshot."""
    if len(run1) != len(run2):
        raise ValueError("runs have different numbers of snapshots")
    eps = np.broadcast_to(np.asarray(epsilon, dtype=float), (mesh.n_nodes,))
    out = []
    for a, b in zip(run1, run2):
        if a.shape != (mesh.n_nodes,) or b.shape != (mesh.n_nodes,):
            raise ValueError("snapshot does not match the mesh")
        diff = np.maximum(a, 0.0) ** m - np.maximum(b, 0.0) ** m
        out.append(float(mesh.lumped_mass @ (eps * np.maximum(diff, 0.0))))
    return np.array(out)


@dataclass
class LateralRecord:
    times: np.ndarray
    pairings: np.ndarray           # (n_times, n_tests), from the space-time field
    factorized: np.ndarray         # t^(alpha (p-1)) * elliptic pairing
    elliptic_pairings: np.ndarray  # (n_tests,)
    exponent: float

    @property
    def factorization_error(self) -> float:
        scale = max(float(np.max(np.abs(self.factorized))), 1e-300)
        return float(np.max(np.abs(self.pairings - self.factorized)) / scale)


def lateral_cauchy_record(
    problem: ParabolicProblem,
    g,
    tests,
    times,
    settings: SolverSettings | None = None,
    extension: str = "zero_interior",
) -> LateralRecord:
    """Weak lateral flux pairings of the separated solution at the requested times.

    At time t the pairing with a test trace h is
    ``int gamma |grad u|^(p-2) grad u . grad h~ + int eps d_t(u^m) h~``
    evaluated on u = t^alpha w: the flux from the nodal field u(t), the time
    derivative in closed form.
    """
    sep = separated_solution(problem, g, settings)
    mesh = problem.mesh
    ell = sep.elliptic
    a, m = sep.alpha, problem.m
    times = np.asarray(times, dtype=float)
    exts = [extend(mesh, h, extension) for h in tests]
    ell_pairs = np.array([dtn_pair(ell, sep.solution, h, extension) for h in tests])

    rec = np.zeros((times.size, len(exts)))
    for i, t in enumerate(times):
        if t == 0.0:
            continue
        flux = sep.flux_at(t)
        dt_um = a * m * t ** (a * m - 1.0) * np.maximum(sep.w, 0.0) ** m
        for j, h in enumerate(exts):
            gh = element_gradients(mesh, h).grad
            rec[i, j] = np.sum(mesh.areas * np.einsum("tk,tk->t", flux, gh)) + mesh.lumped_mass @ (
                problem.epsilon * dt_um * h
            )
    expo = a * (problem.p - 1.0)
    fact = np.outer(times**expo, ell_pairs)
    return LateralRecord(times, rec, fact, ell_pairs, expo)


def export_snapshots(directory, problem: ParabolicProblem, grid: TimeGrid, snapshots, extra=None) -> Path:
    """Write snapshot_XXXX.csv (node, value) files and a manifest.json."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = []
    for k, u in enumerate(snapshots):
        name = f"snapshot_{k:04d}.csv"
        with open(d / name, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["node", "value"])
            for i, val in enumerate(u):
                wr.writerow([i, repr(float(val))])
        names.append(name)
    manifest = {
        "times": [float(t) for t in grid.times],
        "files": names,
        "parameters": {"p": problem.p, "m": problem.m, "T": grid.T, "steps": grid.steps},
    }
    if extra:
        manifest.update(extra)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d
