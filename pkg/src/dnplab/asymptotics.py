"""Small- and large-data expansions of the nonlinear DtN map.

For boundary data ``lam * v`` (m > p - 1) or ``v / lam`` (m < p - 1), with
``v`` a noncritical p-harmonic function, the pairing against a test ``omega``
behaves like

    lam^(+-(p-1)) * L  +  lam^(+-m) * C  +  o(lam^(+-m)),

where ``L = int gamma |grad v|^(p-2) grad v . grad omega`` and
``C = int grad omega . A[v] grad R + V omega v^m`` with ``R`` solving the
linear anisotropic correction problem ``div(A[v] grad R) = V v^m``, R = 0 on
the boundary.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .discretization import (
    TriangleMesh,
    assemble_stiffness,
    element_gradients,
    solve_dirichlet,
    vertex_average,
)
from .dtn import dtn_pair
from .elliptic import EllipticProblem, SolverError, SolverSettings, solve

SMALL_DATA = "small_data"
LARGE_DATA = "large_data"
DEFAULT_LAMBDAS = tuple(2.0 ** -k for k in range(3, 10))


class NoncriticalityError(ValueError):
    """The base field has (numerically) vanishing gradient on some triangle."""


def _check_noncritical(gnorm, rel=1e-12):
    scale = float(np.max(gnorm, initial=0.0))
    bad = np.flatnonzero(gnorm <= rel * scale) if scale > 0 else np.arange(gnorm.size)
    if bad.size:
        raise NoncriticalityError(f"|grad v| vanishes on {bad.size} triangle(s), first index {bad[0]}")


def anisotropy_matrix(mesh: TriangleMesh, gamma, v, p: float, delta: float = 0.0) -> np.ndarray:
    """A[v] = gamma |grad v|^(p-2) (I + (p-2) grad v grad v^T / |grad v|^2) per triangle, shape (T, 2, 2)."""
    G = element_gradients(mesh, v).grad
    g2 = np.einsum("tk,tk->t", G, G)
    _check_noncritical(np.sqrt(g2))
    s = g2 + delta * delta
    gbar = vertex_average(mesh, np.broadcast_to(np.asarray(gamma, dtype=float), (mesh.n_nodes,)))
    outer = G[:, :, None] * G[:, None, :] / s[:, None, None]
    return (gbar * s ** (0.5 * (p - 2.0)))[:, None, None] * (np.eye(2) + (p - 2.0) * outer)


def solve_correction(mesh: TriangleMesh, gamma, potential, v, p: float, m: float) -> np.ndarray:
    """P1 solution R of div(A[v] grad R) = V v^m with R = 0 on the boundary."""
    A = anisotropy_matrix(mesh, gamma, v, p)
    V = np.broadcast_to(np.asarray(potential, dtype=float), (mesh.n_nodes,))
    if np.any(V < 0):
        raise ValueError("potential must be nonnegative")
    K = assemble_stiffness(mesh, A)
    rhs = -mesh.lumped_mass * V * np.maximum(np.asarray(v, dtype=float), 0.0) ** m
    return solve_dirichlet(mesh, K, np.zeros(len(mesh.boundary_nodes)), rhs)


def leading_integral(mesh, gamma, v, omega, p: float) -> float:
    """int gamma |grad v|^(p-2) grad v . grad omega with nodal ``v`` and ``omega``."""
    G = element_gradients(mesh, v).grad
    Go = element_gradients(mesh, omega).grad
    gbar = vertex_average(mesh, np.broadcast_to(np.asarray(gamma, dtype=float), (mesh.n_nodes,)))
    gn = np.sqrt(np.einsum("tk,tk->t", G, G))
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(gn > 0, gn ** (p - 2.0), 0.0)
    return float(np.sum(mesh.areas * gbar * c * np.einsum("tk,tk->t", G, Go)))


def correction_integral(mesh, gamma, potential, v, R, omega, p: float, m: float) -> float:
    """int grad omega . A[v] grad R + V omega v^m."""
    A = anisotropy_matrix(mesh, gamma, v, p)
    GR = element_gradients(mesh, R).grad
    Go = element_gradients(mesh, omega).grad
    flux = np.sum(mesh.areas * np.einsum("tk,tkl,tl->t", Go, A, GR))
    V = np.broadcast_to(np.asarray(potential, dtype=float), (mesh.n_nodes,))
    zeroth = np.sum(mesh.lumped_mass * V * np.asarray(omega) * np.maximum(v, 0.0) ** m)
    return float(flux + zeroth)


def p_harmonic_base(mesh: TriangleMesh, gamma, v, p: float, settings: SolverSettings | None = None) -> np.ndarray:
    """Discrete gamma-weighted p-harmonic function with the trace of ``v``."""
    prob = EllipticProblem(mesh, gamma, 0.0, p, 1.0, mesh.trace(np.asarray(v, dtype=float)))
    return np.array(solve(prob, settings or SolverSettings(grad_tol=1e-13)).w)


def regime_for(m: float, p: float) -> str:
    if m > p - 1:
        return SMALL_DATA
    if m < p - 1:
        return LARGE_DATA
    raise ValueError("m = p - 1 is the borderline case; the expansions do not separate the terms")


@dataclass
class ScalingSweep:
    mesh: TriangleMesh
    gamma: np.ndarray
    potential: np.ndarray
    p: float
    m: float
    v: np.ndarray
    omega: np.ndarray
    lambdas: np.ndarray
    regime: str
    pairings: np.ndarray
    solutions: list = field(repr=False)
    failures: dict = field(default_factory=dict)

    @property
    def sign(self) -> int:
        return 1 if self.regime == SMALL_DATA else -1

    def data_factor(self, lam):
        return lam if self.regime == SMALL_DATA else 1.0 / lam


def scaling_sweep(
    mesh: TriangleMesh,
    gamma,
    potential,
    p: float,
    m: float,
    v,
    omega,
    lambdas=DEFAULT_LAMBDAS,
    regime: str | None = None,
    settings: SolverSettings | None = None,
) -> ScalingSweep:
    """Solve with data ``lam * v`` (small data) or ``v / lam`` (large data) and pair with ``omega``.

    Only the traces of ``v`` and ``omega`` matter: the sweep stores as ``v``
    the discrete p-harmonic function with the trace of ``v``.  Solver
    failures are recorded per lambda and leave a NaN pairing.
    """
    expected = regime_for(m, p)
    if regime is None:
        regime = expected
    elif regime != expected:
        raise ValueError(f"regime {regime!r} is inconsistent with m={m}, p={p} (expected {expected!r})")
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(lambdas <= 0) or np.any(lambdas >= 1):
        raise ValueError("lambdas must lie in (0, 1)")
    if np.any(np.diff(lambdas) >= 0):
        raise ValueError("lambdas must be strictly decreasing")
    settings = settings or SolverSettings(grad_tol=1e-13)
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (mesh.n_nodes,)).copy()
    v = p_harmonic_base(mesh, gamma, v, p, settings)
    omega = np.asarray(omega, dtype=float)
    potential = np.broadcast_to(np.asarray(potential, dtype=float), (mesh.n_nodes,)).copy()
    gv, h = mesh.trace(v), mesh.trace(omega)

    pairings = np.full(lambdas.size, np.nan)
    solutions, failures = [], {}
    for k, lam in enumerate(lambdas):
        factor = lam if regime == SMALL_DATA else 1.0 / lam
        prob = EllipticProblem(mesh, gamma, potential, p, m, factor * gv)
        try:
            sol = solve(prob, settings)
        except SolverError as exc:
            failures[float(lam)] = str(exc)
            solutions.append(None)
            continue
        pairings[k] = dtn_pair(prob, sol, h)
        solutions.append(sol)
    return ScalingSweep(mesh, gamma, potential, p, m, v, omega, lambdas, regime, pairings, solutions, failures)


@dataclass
class ExpansionFit:
    leading_coeff: float
    leading_exponent_fitted: float
    leading_exponent_stderr: float
    correction_coeff: float
    correction_exponent_fitted: float
    correction_exponent_stderr: float
    residual_norm: float
    analytic_leading: float
    direct_correction: float
    remainders: np.ndarray
    used: np.ndarray
    detected: bool
    note: str = ""


def _loglog_fit(lam, y):
    res = stats.linregress(np.log(lam), np.log(np.abs(y)))
    pred = res.intercept + res.slope * np.log(lam)
    resid = float(np.linalg.norm(np.log(np.abs(y)) - pred))
    return res.slope, res.stderr, res.intercept, resid


def fit_expansion(sweep: ScalingSweep, analytic_leading: float, min_points: int = 4) -> ExpansionFit:
    """Fit leading and correction exponents by log-log least squares.

    Remainders below ``1e3 * eps * |pairing|`` are treated as noise and
    dropped; fewer than ``min_points`` surviving values means no correction
    term is detectable.
    """
    lam = sweep.lambdas
    y = sweep.pairings
    ok = np.isfinite(y) & (y != 0)
    if ok.sum() < min_points:
        raise ValueError(f"need at least {min_points} successful pairings, have {int(ok.sum())}")
    sgn = sweep.sign
    lead_slope, lead_se, lead_icpt, _ = _loglog_fit(lam[ok], y[ok])

    remainder = y - analytic_leading * lam ** (sgn * (sweep.p - 1.0))
    floor = 1e3 * np.finfo(float).eps * np.abs(y)
    used = ok & (np.abs(remainder) > floor)

    R = solve_correction(sweep.mesh, sweep.gamma, sweep.potential, sweep.v, sweep.p, sweep.m)
    direct = correction_integral(sweep.mesh, sweep.gamma, sweep.potential, sweep.v, R, sweep.omega, sweep.p, sweep.m)

    common = dict(
        leading_coeff=float(np.sign(y[ok][0]) * math.exp(lead_icpt)),
        leading_exponent_fitted=float(lead_slope),
        leading_exponent_stderr=float(lead_se),
        analytic_leading=float(analytic_leading),
        direct_correction=direct,
        remainders=remainder,
        used=used,
    )
    if used.sum() < min_points:
        return ExpansionFit(
            correction_coeff=0.0,
            correction_exponent_fitted=math.nan,
            correction_exponent_stderr=math.nan,
            residual_norm=math.nan,
            detected=False,
            note="no correction detectable",
            **common,
        )
    slope, se, icpt, resid = _loglog_fit(lam[used], remainder[used])
    signs = np.sign(remainder[used])
    coeff = float(signs[-1] * math.exp(icpt))
    note = "" if np.all(signs == signs[0]) else "remainder changes sign across the sweep"
    return ExpansionFit(
        correction_coeff=coeff,
        correction_exponent_fitted=float(slope),
        correction_exponent_stderr=float(se),
        residual_norm=resid,
        detected=True,
        note=note,
        **common,
    )


@dataclass
class CorrectionConvergence:
    lambdas: np.ndarray
    value_errors: np.ndarray
    gradient_errors: np.ndarray
    noise_floor: np.ndarray
    R: np.ndarray

    @property
    def floor(self) -> float:
        """Smallest error reached along the sweep."""
        return float(np.nanmin(self.value_errors))

    @property
    def floor_index(self) -> int:
        """First lambda whose value error is at or below the round-off floor (len(lambdas) if none)."""
        hit = np.flatnonzero(~(self.value_errors > self.noise_floor))
        return int(hit[0]) if hit.size else self.lambdas.size

    def monotone_until_floor(self) -> bool:
        """Value and gradient errors strictly decrease along the grid up to the floor."""
        k = self.floor_index
        ev, eg = self.value_errors[:k], self.gradient_errors[:k]
        return bool(np.all(np.diff(ev) < 0) and np.all(np.diff(eg) < 0))


def correction_convergence(sweep: ScalingSweep, R: np.ndarray | None = None) -> CorrectionConvergence:
    """Max-norm distances of R_lam from R in values and element gradients.

    Small data: R_lam = (w_lam / lam - v) / lam^(m - p + 1).
    Large data: R_lam = (lam w_lam - v) / lam^(p - 1 - m).
    """
    mesh = sweep.mesh
    if R is None:
        R = solve_correction(mesh, sweep.gamma, sweep.potential, sweep.v, sweep.p, sweep.m)
    gR = element_gradients(mesh, R).grad
    expo = abs(sweep.m - sweep.p + 1.0)
    n = sweep.lambdas.size
    ev, eg, fl = np.full(n, np.nan), np.full(n, np.nan), np.full(n, np.nan)
    vmax = float(np.max(np.abs(sweep.v)))
    for k, (lam, sol) in enumerate(zip(sweep.lambdas, sweep.solutions)):
        if sol is None:
            continue
        scaled = sol.w / lam if sweep.regime == SMALL_DATA else lam * sol.w
        R_lam = (scaled - sweep.v) / lam**expo
        ev[k] = np.max(np.abs(R_lam - R))
        eg[k] = np.max(np.linalg.norm(element_gradients(mesh, R_lam).grad - gR, axis=1))
        fl[k] = 1e3 * np.finfo(float).eps * vmax / lam**expo
    return CorrectionConvergence(sweep.lambdas, ev, eg, fl, R)


def export_sweep_csv(path, sweep: ScalingSweep, fit: ExpansionFit, conv: CorrectionConvergence) -> None:
    """Columns: lambda, pairing, remainder, R_error_val, R_error_grad."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["lambda", "pairing", "remainder", "R_error_val", "R_error_grad"])
        for row in zip(sweep.lambdas, sweep.pairings, fit.remainders, conv.value_errors, conv.gradient_errors):
            wr.writerow([repr(float(x)) for x in row])
