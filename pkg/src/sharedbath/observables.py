"""Covariance assembly, logarithmic negativity and energy diagnostics.

Covariances are over ``(q_A, p_A, q_B, p_B)`` in the convention where the
vacuum has variance 1/2, so that the partially transposed symplectic
eigenvalue ``nu_minus`` equals 1 at the separability border.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import (P_A, P_B, PAQB, PBQA, PP_A, PP_AB, PP_B, PQ_A, PQ_B,
                       Q_A, Q_B, QQ_A, QQ_AB, QQ_B)

__all__ = [
    "EntanglementReport", "UnphysicalCovariance", "SIGMA_INDEX",
    "sigma_from_cumulants", "assemble_covariance", "covariance_from_moments",
    "log_negativity", "neg_log_nu", "neg_log_nu_gradient", "mode_energies",
    "normal_mode_variances", "symplectic_eigenvalues", "first_nonfinite",
]

MEANS = [Q_A, P_A, Q_B, P_B]

# SIGMA_INDEX[i, j] is the cumulant slot holding sigma_ij
SIGMA_INDEX = np.array([
    [QQ_A, PQ_A, QQ_AB, PBQA],
    [PQ_A, PP_A, PAQB, PP_AB],
    [QQ_AB, PAQB, QQ_B, PQ_B],
    [PBQA, PP_AB, PQ_B, PP_B],
])

MU_ROUNDOFF = 1e-12
MU_UNPHYSICAL = 1e-9
# relative to s^2; below this mu is round-off of an exact degeneracy
MU_DEGENERATE = 1e-12


class UnphysicalCovariance(ValueError):
    """Covariance outside the domain of the negativity formula."""


@dataclass(frozen=True)
class EntanglementReport:
    nu_minus: float
    neg_log: float
    E_N: float


def sigma_from_cumulants(x) -> np.ndarray:
    """Second-cumulant block(s) of cumulant vector(s) as 4x4 matrices."""
    x = np.asarray(x, dtype=float)
    return x[..., SIGMA_INDEX]


def _check_ensemble(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None]
    if x.shape[0] == 0:
        raise ValueError("empty ensemble")
    return x


def covariance_from_moments(mean_x, mean_mm) -> np.ndarray:
    """Covariance from ensemble moments.

    ``mean_x`` is the ensemble mean of the cumulant vectors (..., 14) and
    ``mean_mm`` the ensemble mean of ``m m^T`` of the first cumulants
    (..., 4, 4).
    """
    mean_x = np.asarray(mean_x, dtype=float)
    m = mean_x[..., MEANS]
    cov_m = mean_mm - m[..., :, None] * m[..., None, :]
    return sigma_from_cumulants(mean_x) + cov_m


def assemble_covariance(ensemble) -> np.ndarray:
    """Physical covariance of the realization-averaged state.

    The average of the per-realization second cumulants plus the
    (1/N-normalized) covariance of the first cumulants across realizations.
    """
    x = _check_ensemble(ensemble)
    m = x[:, MEANS]
    dm = m - m.mean(axis=0)
    cov_m = dm.T @ dm / x.shape[0]
    sigma = sigma_from_cumulants(x.mean(axis=0)) + cov_m
    return 0.5 * (sigma + sigma.T)


def _invariants(sigma):
    alpha = sigma[..., :2, :2]
    beta = sigma[..., 2:, 2:]
    delta = sigma[..., :2, 2:]
    da = np.linalg.det(alpha)
    db = np.linalg.det(beta)
    dd = np.linalg.det(delta)
    ds = np.linalg.det(sigma)
    s = da + db - 2.0 * dd
    mu = s * s - 4.0 * ds
    return s, mu, (alpha, beta, delta)


def first_nonfinite(sigma):
    """Index of the first covariance in a stack whose invariants overflow."""
    with np.errstate(over="ignore", invalid="ignore"):
        s, mu, _ = _invariants(np.asarray(sigma, dtype=float))
    bad = ~(np.isfinite(s) & np.isfinite(mu))
    return int(np.argmax(bad)) if bad.any() else None


def _nu_minus(sigma):
    with np.errstate(over="ignore", invalid="ignore"):
        s, mu, _ = _invariants(sigma)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(mu))):
        raise UnphysicalCovariance("covariance invariants overflow")
    # thresholds are absolute for O(1) covariances, relative beyond
    scale = np.maximum(1.0, s * s)
    if np.any(mu < -MU_UNPHYSICAL * scale):
        raise UnphysicalCovariance(f"mu = {np.min(mu):.3e} < 0")
    mu = np.where(mu < 0, 0.0, mu)
    rad = s - np.sqrt(mu)
    if np.any(rad < -MU_ROUNDOFF * np.maximum(1.0, np.abs(s))):
        raise UnphysicalCovariance(f"negative radicand {np.min(rad):.3e}")
    rad = np.where(rad < 0, 0.0, rad)
    return np.sqrt(2.0) * np.sqrt(rad)


def neg_log_nu(sigma) -> np.ndarray:
    """``-ln nu_minus``; works on stacks of covariances (..., 4, 4)."""
    with np.errstate(divide="ignore"):
        return -np.log(_nu_minus(np.asarray(sigma, dtype=float)))


def log_negativity(sigma) -> EntanglementReport:
    """nu_minus, -ln nu_minus and E_N = max(0, -ln nu_minus) of one state."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (4, 4):
        raise ValueError(f"expected a 4x4 covariance, got {sigma.shape}")
    nu = float(_nu_minus(sigma))
    with np.errstate(divide="ignore"):
        neg = float(-np.log(nu))
    return EntanglementReport(nu, neg, max(0.0, neg))


def _cofactor(mat):
    # d det(A) / dA = adj(A)^T for any (not necessarily invertible) 2x2 or 4x4
    if mat.shape[-1] == 2:
        return np.array([[mat[1, 1], -mat[1, 0]], [-mat[0, 1], mat[0, 0]]])
    det = np.linalg.det(mat)
    if abs(det) > 1e-300:
        return det * np.linalg.inv(mat).T
    cof = np.empty_like(mat)
    for i in range(4):
        for j in range(4):
            minor = np.delete(np.delete(mat, i, 0), j, 1)
            cof[i, j] = (-1) ** (i + j) * np.linalg.det(minor)
    return cof


def neg_log_nu_gradient(sigma) -> np.ndarray:
    """Gradient of ``-ln nu_minus`` with respect to the 16 entries of sigma.

    Entries are treated as independent variables (no symmetrization), so a
    symmetric perturbation ``dS`` changes the value by ``sum(G * dS)``.
    Raises :class:`UnphysicalCovariance` where the function is not
    differentiable (``mu <= 0`` or ``nu_minus = 0``).
    """
    sigma = np.asarray(sigma, dtype=float)
    s, mu, (alpha, beta, delta) = _invariants(sigma)
    if mu <= MU_DEGENERATE * s * s:
        raise UnphysicalCovariance(
            f"mu = {mu:.3e}: degenerate symplectic spectrum, -ln nu is not "
            "differentiable here"
        )
    rad = s - np.sqrt(mu)
    if rad <= 0:
        raise UnphysicalCovariance("nu_minus = 0")
    ds = np.zeros((4, 4))
    ds[:2, :2] = _cofactor(alpha)
    ds[2:, 2:] = _cofactor(beta)
    ds[:2, 2:] = -2.0 * _cofactor(delta)
    dmu = 2.0 * s * ds - 4.0 * _cofactor(sigma)
    drad = ds - dmu / (2.0 * np.sqrt(mu))
    # -ln nu = -0.5 ln 2 - 0.5 ln rad
    g = -0.5 * drad / rad
    return g


def symplectic_eigenvalues(sigma) -> np.ndarray:
    """Symplectic spectrum of sigma (vacuum = 1/2), ascending."""
    sigma = np.asarray(sigma, dtype=float)
    omega = np.kron(np.eye(2), np.array([[0.0, 1.0], [-1.0, 0.0]]))
    ev = np.abs(np.linalg.eigvals(1j * omega @ sigma))
    return np.sort(ev)[::2]


def mode_energies(ensemble) -> dict:
    """Full second moments ``<q^2>``, ``<p^2>`` of each mode.

    Sums the averaged central cumulant and the average of the squared
    first cumulant, i.e. the non-central moment of the averaged state.
    """
    x = _check_ensemble(ensemble)
    return {
        "q2_A": float(np.mean(x[:, QQ_A] + x[:, Q_A] ** 2)),
        "p2_A": float(np.mean(x[:, PP_A] + x[:, P_A] ** 2)),
        "q2_B": float(np.mean(x[:, QQ_B] + x[:, Q_B] ** 2)),
        "p2_B": float(np.mean(x[:, PP_B] + x[:, P_B] ** 2)),
    }


_ROT = np.array([
    [1.0, 0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0, 1.0],
    [1.0, 0.0, -1.0, 0.0],
    [0.0, 1.0, 0.0, -1.0],
]) / np.sqrt(2.0)


def normal_mode_variances(sigma) -> dict:
    """Quadrature variances of q_pm = (q_A pm q_B)/sqrt2 and p_pm."""
    sigma = np.asarray(sigma, dtype=float)
    rot = _ROT @ sigma @ _ROT.T
    d = np.diagonal(rot, axis1=-2, axis2=-1)
    if d.ndim == 1:
        d = [float(v) for v in d]
        return {"q_plus": d[0], "p_plus": d[1], "q_minus": d[2], "p_minus": d[3]}
    return {"q_plus": d[..., 0], "p_plus": d[..., 1],
            "q_minus": d[..., 2], "p_minus": d[..., 3]}
