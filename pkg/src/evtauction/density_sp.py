"""Limit densities for second-price auctions.

The sorted limit sample Z_(1) <= ... <= Z_(n) of H_xi(E1 + E2) draws is
written as Z_(i) = m + R w_i with w = (0, z_1, ..., z_N, 1). Integrating out
the location (and, for the marginal, the scale) gives one-dimensional
integrals that are evaluated by the compiled kernels in ``_kernels``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .evt_core import augment, check_xi, revenue_mean, winner_gap_mean

# trapezoid step in the sinh-mapped variable
STEP = 0.1
ORDER_SP = 2.0


@dataclass(frozen=True)
class DensityEvaluation:
    value: float
    log_value: float
    xi: float
    point: tuple


def _point(z) -> np.ndarray:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.ndim != 1:
        raise ValueError("expected a single simplex point")
    return z


def in_simplex(z) -> bool:
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        return True
    return bool(z[0] >= 0 and z[-1] <= 1 and np.all(np.diff(z) >= 0))


def log_density_znorm(z, xi: float, step: float = STEP) -> float:
    z = _point(z)
    xi = check_xi(xi)
    if not in_simplex(z):
        return -np.inf
    return float(K.log_marginal_point(augment(z), xi, ORDER_SP, 0, step))


def density_znorm(z, xi: float, step: float = STEP) -> DensityEvaluation:
    """Joint density of the N = n - 2 sorted, self-normalized limit prices."""
    lv = log_density_znorm(z, xi, step)
    return DensityEvaluation(float(np.exp(lv)), lv, float(xi), tuple(_point(z)))


def kappa_density(z, xi: float, step: float = STEP) -> float:
    """kappa_xi(z) * f(z), with kappa the conditional mean range E[R | Z~ = z]."""
    z = _point(z)
    xi = check_xi(xi)
    if not in_simplex(z):
        return 0.0
    return float(np.exp(K.log_marginal_point(augment(z), xi, ORDER_SP, 1, step)))


def joint_density_ymu(y: float, z, xi: float, step: float = STEP) -> float:
    """Joint density of Y_mu = Gamma(1 - xi) / range and the normalized point."""
    if y <= 0:
        raise ValueError("joint_density_ymu requires y > 0")
    z = _point(z)
    xi = check_xi(xi)
    if not in_simplex(z):
        return 0.0
    c = winner_gap_mean(xi)
    return float(np.exp(K.log_ymu_point(float(y), augment(z), xi, ORDER_SP, c, step)))


def joint_density_ypi(y: float, z, xi: float, step: float = STEP) -> float:
    """Joint density of Y_pi = (pi(xi) - Z_(1)) / range and the normalized point."""
    z = _point(z)
    xi = check_xi(xi)
    if not in_simplex(z):
        return 0.0
    pi_ = revenue_mean(xi)
    return float(np.exp(K.log_ypi_point(float(y), augment(z), xi, ORDER_SP, pi_, step)))


# batch versions on a grid of tail indices; rows of Z are simplex points


def log_density_batch(Z, xis, j: int = 0, step: float = STEP) -> np.ndarray:
    """(B, M) matrix of log f (j = 0) or log kappa f (j = 1)."""
    W = augment(np.atleast_2d(np.asarray(Z, dtype=float)))
    xis = np.asarray(xis, dtype=float)
    return K.log_marginal_batch(W, xis, ORDER_SP, j, step)


def log_ymu_batch(ys, Z, xis, step: float = STEP) -> np.ndarray:
    W = augment(np.atleast_2d(np.asarray(Z, dtype=float)))
    xis = np.asarray(xis, dtype=float)
    cvals = np.array([winner_gap_mean(x) for x in xis])
    ys = np.broadcast_to(np.asarray(ys, dtype=float), (W.shape[0],)).copy()
    return K.log_ymu_batch(W, ys, xis, cvals, ORDER_SP, step)


def log_ypi_batch(ys, Z, xis, step: float = STEP) -> np.ndarray:
    W = augment(np.atleast_2d(np.asarray(Z, dtype=float)))
    xis = np.asarray(xis, dtype=float)
    pivals = np.array([revenue_mean(x) for x in xis])
    ys = np.broadcast_to(np.asarray(ys, dtype=float), (W.shape[0],)).copy()
    return K.log_ypi_batch(W, ys, xis, pivals, ORDER_SP, step)
