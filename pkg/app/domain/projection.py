"""Projection onto the centred Euclidean ball {||y|| <= radius} in a weighted norm.

    project(x) = argmin_{||y|| <= radius} (x - y)^T A (x - y)

For ||x|| > radius the KKT condition (A + mu I) y = A x with ||y|| = radius is
reduced, in the eigenbasis A = Q diag(a) Q^T, to the scalar secular equation

    1/||y(mu)|| - 1/radius = 0,    y_i(mu) = a_i c_i / (a_i + mu),  c = Q^T x,

solved by Newton's method safeguarded with bisection. All functions accept a
leading batch dimension on x (..., m) and A (..., m, m).
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..errors import ConfigError, MatrixConditioningError

MULTIPLIER_RTOL = 1e-12
FEASIBILITY_RTOL = 1e-12
SYMMETRY_RTOL = 1e-10
_MAX_SECULAR_ITER = 200


@dataclass(frozen=True, eq=False)
class WeightedNorm:
    """||z||_A = sqrt(z^T A z) together with the feasible radius (2D)."""

    A: np.ndarray
    radius: float

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
            raise ConfigError(f"weight matrix must be square, got shape {A.shape}")
        if not self.radius > 0:
            raise ConfigError(f"projection radius must be positive, got {self.radius}")
        object.__setattr__(self, "A", A)

    def norm(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.sqrt(np.einsum("...i,...ij,...j->...", z, self.A, z))


def _eigh_spd(M: np.ndarray, what: str) -> Tuple[np.ndarray, np.ndarray]:
    scale = np.max(np.abs(M), axis=(-2, -1), keepdims=True)
    asym = np.max(np.abs(M - np.swapaxes(M, -1, -2)), axis=(-2, -1), keepdims=True)
    if np.any(asym > SYMMETRY_RTOL * np.maximum(scale, 1e-300)):
        raise MatrixConditioningError(f"{what} is not symmetric")
    w, Q = np.linalg.eigh(M)
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise MatrixConditioningError(
            f"{what} is not positive definite (smallest eigenvalue {np.min(w):.3e})"
        )
    return w, Q


def solve_multiplier(a: np.ndarray, c: np.ndarray, radius: float) -> np.ndarray:
    """mu >= 0 with ||a c / (a + mu)|| = radius, for rows where ||c|| > radius."""
    ac2 = (a * c) ** 2
    lo = np.zeros(a.shape[:-1])
    hi = np.max(a, axis=-1) * np.sqrt(np.sum(c * c, axis=-1)) / radius
    mu = lo.copy()
    inv_radius = 1.0 / radius
    for _ in range(_MAX_SECULAR_ITER):
        denom = a + mu[..., None]
        norm2 = np.sum(ac2 / denom**2, axis=-1)
        norm = np.sqrt(norm2)
        h = 1.0 / norm - inv_radius
        lo = np.where(h < 0, mu, lo)
        hi = np.where(h > 0, mu, hi)
        dh = np.sum(ac2 / denom**3, axis=-1) / (norm2 * norm)
        step = np.where(dh > 0, h / np.where(dh > 0, dh, 1.0), 0.0)
        newton = mu - step
        inside = (newton > lo) & (newton < hi) & (dh > 0)
        new_mu = np.where(inside, newton, 0.5 * (lo + hi))
        done = np.abs(new_mu - mu) <= MULTIPLIER_RTOL * np.maximum(new_mu, 1e-300)
        mu = new_mu
        if np.all(done | (np.abs(h) <= MULTIPLIER_RTOL * inv_radius)):
            break
    return mu


def _project_eig(x: np.ndarray, a: np.ndarray, Q: np.ndarray, radius: float) -> np.ndarray:
    c = np.einsum("...ji,...j->...i", Q, x)
    mu = solve_multiplier(a, c, radius)
    y = np.einsum("...ij,...j->...i", Q, a * c / (a + mu[..., None]))
    norm = np.linalg.norm(y, axis=-1)
    shrink = np.where(norm > radius, radius / np.where(norm > 0, norm, 1.0), 1.0)
    return y * shrink[..., None]


def _outside(x: np.ndarray, radius: float) -> np.ndarray:
    return np.linalg.norm(x, axis=-1) > radius


def project(x: np.ndarray, norm: WeightedNorm) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = x.copy()
    mask = _outside(x, norm.radius)
    if not np.any(mask):
        return out
    A = np.broadcast_to(norm.A, x.shape + x.shape[-1:])
    a, Q = _eigh_spd(A[mask], "projection weight matrix")
    out[mask] = _project_eig(x[mask], a, Q, norm.radius)
    return out


def project_with_gain(x: np.ndarray, P: np.ndarray, radius: float) -> np.ndarray:
    """Projection in the norm weighted by P^{-1}, without forming the inverse."""
    x = np.asarray(x, dtype=float)
    out = x.copy()
    mask = _outside(x, radius)
    if not np.any(mask):
        return out
    P = np.broadcast_to(P, x.shape + x.shape[-1:])
    w, Q = _eigh_spd(P[mask], "gain matrix")
    out[mask] = _project_eig(x[mask], 1.0 / w, Q, radius)
    return out


def project_euclidean(x: np.ndarray, radius: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.where(norm > radius, x * (radius / np.where(norm > 0, norm, 1.0)), x)


def multiplier_for(x: np.ndarray, norm: WeightedNorm) -> np.ndarray:
    """The KKT multiplier used by project (0 when x is already feasible)."""
    x = np.asarray(x, dtype=float)
    mu = np.zeros(x.shape[:-1])
    mask = _outside(x, norm.radius)
    if np.any(mask):
        A = np.broadcast_to(norm.A, x.shape + x.shape[-1:])
        a, Q = _eigh_spd(A[mask], "projection weight matrix")
        c = np.einsum("...ji,...j->...i", Q, x[mask])
        mu[mask] = solve_multiplier(a, c, norm.radius)
    return mu[()] if mu.ndim == 0 else mu
