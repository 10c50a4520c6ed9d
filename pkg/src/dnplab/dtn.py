"""Weak-form nonlinear Dirichlet-to-Neumann pairings.

The pairing of the boundary flux of ``w`` with a test trace ``h`` is computed
volumetrically,

    <Lambda(g), h> = sum_T |T| flux_T . grad(h~)_T + sum_i M_i V_i w_i^m h~_i,

for a nodal extension ``h~`` of ``h``.  At a discrete minimizer the interior
residual vanishes, so the value does not depend on the extension.
"""
from __future__ import annotations

import numpy as np

from .discretization import element_gradients, harmonic_extension
from .elliptic import EllipticProblem, EllipticSolution, flux_field

EXTENSIONS = ("zero_interior", "harmonic")


class StaleSolutionError(ValueError):
    """The solution was computed for a different problem."""


def extend(mesh, h, extension="zero_interior") -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.shape != mesh.boundary_nodes.shape:
        raise ValueError(f"trace has shape {h.shape}, mesh has {len(mesh.boundary_nodes)} boundary nodes")
    if extension == "zero_interior":
        return mesh.zero_extension(h)
    if extension == "harmonic":
        return harmonic_extension(mesh, h)
    raise ValueError(f"unknown extension {extension!r}; expected one of {EXTENSIONS}")


def pairing_terms(problem: EllipticProblem, w: np.ndarray, h_ext: np.ndarray, delta: float = 0.0):
    """Return (flux term, absorption term, absolute magnitude) of the weak pairing."""
    mesh = problem.mesh
    flux = flux_field(problem, w, delta)
    gh = element_gradients(mesh, h_ext).grad
    per_tri = mesh.areas * np.einsum("tk,tk->t", flux, gh)
    zeroth = mesh.lumped_mass * problem.potential * np.maximum(w, 0.0) ** problem.m * h_ext
    mag = float(np.sum(np.abs(per_tri)) + np.sum(np.abs(zeroth)))
    return float(np.sum(per_tri)), float(np.sum(zeroth)), mag


def _check_fresh(problem, solution):
    if solution.problem_id != problem.fingerprint():
        raise StaleSolutionError("solution does not belong to this problem (data or coefficients changed)")


def dtn_pair(problem: EllipticProblem, w: EllipticSolution, h, extension: str = "zero_interior") -> float:
    _check_fresh(problem, w)
    h_ext = extend(problem.mesh, h, extension)
    a, b, _ = pairing_terms(problem, w.w, h_ext, w.delta)
    return a + b


def dtn_pair_magnitude(problem: EllipticProblem, w: EllipticSolution, h, extension: str = "zero_interior") -> float:
    """Sum of absolute contributions to the pairing; the natural scale for tolerances."""
    _check_fresh(problem, w)
    return pairing_terms(problem, w.w, extend(problem.mesh, h, extension), w.delta)[2]


def dtn_matrix(problem: EllipticProblem, w: EllipticSolution, tests, extension: str = "zero_interior") -> list:
    return [dtn_pair(problem, w, h, extension) for h in tests]


def boundary_hat_basis(mesh) -> list:
    """Traces of the hat functions of the boundary nodes."""
    nb = len(mesh.boundary_nodes)
    return list(np.eye(nb))
