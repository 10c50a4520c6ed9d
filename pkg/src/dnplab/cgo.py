"""Complex geometrical optics vectors for the stretched operator div(gamma (I + (p-2) e_n e_n^T) grad).

With ``M = I + (p-2) e_n e_n^T`` the plane wave ``gamma^(-1/2) exp(zeta . x)``
solves the constant-coefficient equation exactly when ``zeta . M zeta = 0``
(bilinear, no conjugation).  Vectors of the form
``zeta_pm = +-s mu + i (xi +- t eta)`` meet this condition when ``mu`` is
M-orthogonal to ``xi``, ``eta`` is orthogonal to ``xi, mu, e_n`` and ``s`` is
tied to ``t`` as in :func:`s_from_t`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class CGOFrame:
    n: int
    p: float
    xi: np.ndarray
    eta: np.ndarray
    mu: np.ndarray
    t: float
    s: float
    zeta_plus: np.ndarray
    zeta_minus: np.ndarray

    @property
    def metric(self) -> np.ndarray:
        return stretch_matrix(self.n, self.p)

    def null_form(self, zeta=None) -> complex:
        z = self.zeta_plus if zeta is None else np.asarray(zeta)
        return complex(z @ self.metric @ z)

    def invariant_residuals(self) -> dict:
        """Relative violations of every defining relation (all ~0 for a valid frame)."""
        e = basis_vector(self.n, self.n - 1)
        xi, mu, eta, p = self.xi, self.mu, self.eta, self.p
        xn = float(np.linalg.norm(xi))
        plane = np.column_stack([xi, mu, e])
        sv = np.linalg.svd(plane, compute_uv=False)
        lhs = self.s**2 * (1 + (p - 2) * (mu @ e) ** 2)
        rhs = self.t**2 + xi @ xi + (p - 2) * (xi @ e) ** 2
        out = {
            "eta_perp_xi": float(abs(eta @ xi) / xn),
            "eta_perp_mu": float(abs(eta @ mu)),
            "eta_perp_en": float(abs(eta @ e)),
            "eta_unit": float(abs(eta @ eta - 1.0)),
            "mu_unit": float(abs(mu @ mu - 1.0)),
            "coplanar": float(sv[2] / sv[0]),
            "angle_condition": float(abs(mu @ xi + (p - 2) * (mu @ e) * (xi @ e)) / xn),
            "s_condition": float(abs(lhs - rhs) / rhs),
        }
        for name, z, sgn in (("plus", self.zeta_plus, 1), ("minus", self.zeta_minus, -1)):
            expected = sgn * self.s * mu + 1j * (xi + sgn * self.t * eta)
            out[f"zeta_{name}_formula"] = float(np.max(np.abs(z - expected)) / np.linalg.norm(expected))
            out[f"null_{name}"] = abs(self.null_form(z)) / float(np.vdot(z, z).real)
        return out


def basis_vector(n, k) -> np.ndarray:
    e = np.zeros(n)
    e[k] = 1.0
    return e


def stretch_matrix(n: int, p: float) -> np.ndarray:
    M = np.eye(n)
    M[-1, -1] += p - 2.0
    return M


def s_from_t(t, xi, mu, p):
    """s = [1 + (p-2)(mu.e_n)^2]^(-1/2) [t^2 + |xi|^2 + (p-2)(xi.e_n)^2]^(1/2)."""
    xi_n, mu_n = xi[-1], mu[-1]
    return float(np.sqrt((t * t + xi @ xi + (p - 2.0) * xi_n**2) / (1.0 + (p - 2.0) * mu_n**2)))


def build_frame(n: int, p: float, xi, t: float) -> CGOFrame:
    """Deterministic frame for direction ``xi`` and large parameter ``t``.

    ``mu`` lies in span{xi, e_n} with ``mu . e_n >= 0`` (``mu . xi >= 0`` when
    that is zero).  ``eta`` is ``e_n x xi`` normalized when n = 3, otherwise
    the first standard basis vector surviving Gram-Schmidt against
    {xi, mu, e_n}.
    """
    if n < 3:
        raise ValueError("frames need dimension n >= 3")
    if not p > 1:
        raise ValueError("p must exceed 1")
    if not t > 0:
        raise ValueError("t must be positive")
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (n,):
        raise ValueError(f"xi must have shape ({n},)")
    e = basis_vector(n, n - 1)
    xi_e = float(xi[-1])
    perp = xi - xi_e * e
    perp_norm = float(np.linalg.norm(perp))
    if perp_norm <= 1e-12 * max(float(np.linalg.norm(xi)), 1e-300):
        raise ValueError("xi must not be parallel to e_n")
    u = perp / perp_norm
    # mu = a u + b e_n, M-orthogonal to xi: a |perp| + (p - 1) b xi_e = 0
    a, b = -(p - 1.0) * xi_e, perp_norm
    mu = (a * u + b * e) / np.hypot(a, b)
    if mu @ e < 0 or (mu @ e == 0 and mu @ xi < 0):
        mu = -mu

    if n == 3:
        eta = np.cross(e, xi)
        eta /= np.linalg.norm(eta)
    else:
        Q, _ = np.linalg.qr(np.column_stack([u, e]))
        eta = None
        for k in range(n):
            c = basis_vector(n, k)
            r = c - Q @ (Q.T @ c)
            if np.linalg.norm(r) > 0.5:
                eta = r / np.linalg.norm(r)
                break
        assert eta is not None

    s = s_from_t(t, xi, mu, p)
    zp = s * mu + 1j * (xi + t * eta)
    zm = -s * mu + 1j * (xi - t * eta)
    return CGOFrame(n, float(p), xi.copy(), eta, mu, float(t), s, zp, zm)


def plane_wave(gamma_const: float, zeta, x) -> np.ndarray:
    """gamma^(-1/2) exp(zeta . x) at rows of ``x``."""
    return np.exp(np.asarray(x) @ np.asarray(zeta)) / np.sqrt(gamma_const)


def plane_wave_residual(gamma_const: float, p: float, frame: CGOFrame, sample_points, zeta=None) -> float:
    """max |div(A grad omega)| over samples, A = gamma (I + (p-2) e_n e_n^T), omega the plane wave.

    For constant coefficients the divergence equals
    ``gamma (zeta . M zeta) omega`` exactly.
    """
    z = frame.zeta_plus if zeta is None else np.asarray(zeta)
    symbol = z @ stretch_matrix(frame.n, p) @ z
    vals = gamma_const * symbol * plane_wave(gamma_const, z, sample_points)
    return float(np.max(np.abs(vals)))
