"""Linearization of the nonlinear problem at a noncritical solution.

The derivative of ``w`` along boundary data ``w0 + tau f`` solves

    -div(A[w0] grad wdot) + m V w0^(m-1) wdot = 0,   wdot = f on the boundary,

and the tau-derivative of the DtN pairing is the bilinear form of that
equation evaluated on ``wdot`` and an extension of the test trace.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .asymptotics import NoncriticalityError, anisotropy_matrix, _check_noncritical
from .discretization import assemble_stiffness, element_gradients, solve_dirichlet, vertex_average
from .dtn import StaleSolutionError
from .elliptic import EllipticProblem, EllipticSolution


@dataclass(frozen=True, eq=False)
class LinearizedProblem:
    base: EllipticProblem
    w0: np.ndarray
    A0: np.ndarray
    zeroth: np.ndarray

    @property
    def mesh(self):
        return self.base.mesh

    def matrix(self) -> sp.csr_matrix:
        return (assemble_stiffness(self.mesh, self.A0) + sp.diags(self.mesh.lumped_mass * self.zeroth)).tocsr()


def linearize_at(problem: EllipticProblem, w0: EllipticSolution | np.ndarray) -> LinearizedProblem:
    if isinstance(w0, EllipticSolution):
        if w0.problem_id != problem.fingerprint():
            raise StaleSolutionError("solution does not belong to this problem")
        w = np.asarray(w0.w, dtype=float)
    else:
        w = np.asarray(w0, dtype=float)
    A0 = anisotropy_matrix(problem.mesh, problem.gamma, w, problem.p)
    m, V = problem.m, problem.potential
    active = V > 0
    if m < 1.0 and np.any(w[active] <= 0):
        raise ValueError("w0 must be positive where V > 0 when m < 1 (w0^(m-1) is singular)")
    zeroth = np.zeros(problem.mesh.n_nodes)
    zeroth[active] = m * V[active] * np.maximum(w[active], 0.0) ** (m - 1.0)
    return LinearizedProblem(problem, w, A0, zeroth)


def solve_linearized(lin: LinearizedProblem, f) -> np.ndarray:
    return solve_dirichlet(lin.mesh, lin.matrix(), np.asarray(f, dtype=float))


def linearized_form(lin: LinearizedProblem, a: np.ndarray, b: np.ndarray) -> float:
    """int grad a . A[w0] grad b + m V w0^(m-1) a b, for nodal ``a`` and ``b``."""
    mesh = lin.mesh
    ga = element_gradients(mesh, a).grad
    gb = element_gradients(mesh, b).grad
    flux = np.sum(mesh.areas * np.einsum("tk,tkl,tl->t", ga, lin.A0, gb))
    return float(flux + np.sum(mesh.lumped_mass * lin.zeroth * a * b))


def linearized_dtn(lin: LinearizedProblem, f, omega) -> float:
    """tau-coefficient of the pairing; ``omega`` is extended by zero inside."""
    wdot = solve_linearized(lin, f)
    return linearized_form(lin, lin.mesh.zero_extension(np.asarray(omega, dtype=float)), wdot)


def linearized_dtn_matrix(lin: LinearizedProblem, traces) -> np.ndarray:
    mesh = lin.mesh
    sols = [solve_linearized(lin, f) for f in traces]
    exts = [mesh.zero_extension(np.asarray(h, dtype=float)) for h in traces]
    return np.array([[linearized_form(lin, e, s) for s in sols] for e in exts])


def anisotropy_derivative(mesh, gamma, v0, vdot, p: float) -> np.ndarray:
    """Directional derivative of A[v] at v0 along vdot, per triangle."""
    G = element_gradients(mesh, v0).grad
    D = element_gradients(mesh, vdot).grad
    g2 = np.einsum("tk,tk->t", G, G)
    _check_noncritical(np.sqrt(g2))
    gbar = vertex_average(mesh, np.broadcast_to(np.asarray(gamma, dtype=float), (mesh.n_nodes,)))
    gd = np.einsum("tk,tk->t", G, D)
    GG = G[:, :, None] * G[:, None, :]
    bracket = (
        gd[:, None, None] * np.eye(2)
        + ((p - 4.0) * gd / g2)[:, None, None] * GG
        + G[:, :, None] * D[:, None, :]
        + D[:, :, None] * G[:, None, :]
    )
    return ((p - 2.0) * gbar * g2 ** (0.5 * (p - 4.0)))[:, None, None] * bracket


def metric_2d(mesh, gamma, w0, p: float):
    """Return (g[w0], det A[w0]) per triangle.

    g[w0] = sqrt(p-1) (I + (2-p)/(p-1) n n^T) with n the unit gradient of w0,
    a unimodular metric conformal to A[w0]^(-1).
    """
    G = element_gradients(mesh, w0).grad
    gn = np.sqrt(np.einsum("tk,tk->t", G, G))
    _check_noncritical(gn)
    gbar = vertex_average(mesh, np.broadcast_to(np.asarray(gamma, dtype=float), (mesh.n_nodes,)))
    n = G / gn[:, None]
    g = np.sqrt(p - 1.0) * (np.eye(2) + ((2.0 - p) / (p - 1.0)) * n[:, :, None] * n[:, None, :])
    detA = (p - 1.0) * gbar**2 * gn ** (2.0 * (p - 2.0))
    return g, detA


__all__ = [
    "LinearizedProblem",
    "NoncriticalityError",
    "anisotropy_derivative",
    "linearize_at",
    "linearized_dtn",
    "linearized_dtn_matrix",
    "linearized_form",
    "metric_2d",
    "solve_linearized",
]
