"""First-price limit law.

A first-price transaction price behaves in the limit like X = e_xi(E1), with
E1 standard exponential. Neither e_xi nor its inverse has a closed form, so
the densities use the log-linear fit

    log(exp(x) Gamma(1 - xi, x)) ~ r2 - r1 log x,

under which X ~ C * H_{r1}(E1) + D is affine in a first-order limit variate
with shape r1. Self-normalized X-samples then follow the k = 1 version of the
second-price formulas, which is how everything below is evaluated.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from . import _kernels as K
from .density_sp import STEP, _point, in_simplex
from .evt_core import (
    XI_ZERO, DomainError, as_generator, augment, check_xi, h_transform, revenue_mean,
)

ORDER_FP = 1.0
R_GRID_POINTS = 50_000
R_GRID_TAIL = 1e-6
C_MU_DRAWS = 10_000_000
# beyond this x, exp(x) Gamma(a, x) comes from its asymptotic series
_ASYMPTOTIC_X = 50.0


@dataclass(frozen=True)
class RCoefficients:
    r1: float
    r2: float
    r3: float
    xi: float
    fit_rmse: float

    @property
    def scale(self) -> float:
        """C in X ~ C * H_{r1}(E1) + D."""
        if abs(self.xi) < XI_ZERO:
            return 1.0 - self.r1
        return float(np.exp(self.r2) * self.r1 / self.xi)

    @property
    def shift(self) -> float:
        """D in X ~ C * H_{r1}(E1) + D."""
        if abs(self.xi) < XI_ZERO:
            return -self.r2
        return float(np.expm1(self.r2) / self.xi)

    @property
    def shape(self) -> float:
        """Tail index of the approximating first-order law."""
        return 0.0 if abs(self.xi) < XI_ZERO else self.r1


def _scaled_uigamma(a: float, x: np.ndarray) -> np.ndarray:
    """exp(x) * Gamma(a, x) for a > 0 and x > 0."""
    out = np.empty_like(x)
    small = x <= _ASYMPTOTIC_X
    xs = x[small]
    out[small] = np.exp(xs + special.gammaln(a)) * special.gammaincc(a, xs)
    xl = x[~small]
    if xl.size:
        term = np.ones_like(xl)
        acc = np.ones_like(xl)
        for k in range(1, 25):
            term = term * (a - k) / xl
            acc += term
        out[~small] = xl ** (a - 1.0) * acc
    return out


def _scaled_e1(x: np.ndarray) -> np.ndarray:
    """exp(x) * E1(x)."""
    out = np.empty_like(x)
    small = x <= _ASYMPTOTIC_X
    out[small] = np.exp(x[small]) * special.exp1(x[small])
    xl = x[~small]
    if xl.size:
        term = np.ones_like(xl)
        acc = np.ones_like(xl)
        for k in range(1, 25):
            term = term * (-k) / xl
            acc += term
        out[~small] = acc / xl
    return out


def e_transform(x, xi: float):
    """e_xi(x) = [exp(x) Gamma(1 - xi, x) - 1] / xi, or -log x - exp(x) E1(x) at xi = 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("e_transform requires x > 0")
    xi = float(xi)
    flat = np.atleast_1d(x).ravel()
    if abs(xi) < XI_ZERO:
        out = -np.log(flat) - _scaled_e1(flat)
    else:
        out = (_scaled_uigamma(1.0 - xi, flat) - 1.0) / xi
    out = out.reshape(x.shape)
    return out if out.ndim else float(out)


def regression_grid() -> np.ndarray:
    lo = -np.log1p(-R_GRID_TAIL)
    hi = -np.log(R_GRID_TAIL)
    return np.linspace(lo, hi, R_GRID_POINTS)


@lru_cache(maxsize=1024)
def _fit(xi: float) -> RCoefficients:
    x = regression_grid()
    lx = np.log(x)
    X = np.column_stack([np.ones_like(lx), lx])
    if abs(xi) < XI_ZERO:
        # linear fit of e_0(x) = (r1 - 1) log x - r2
        yv = e_transform(x, 0.0)
        coef, *_ = np.linalg.lstsq(X, yv, rcond=None)
        r1, r2 = 1.0 + coef[1], -coef[0]
    else:
        yv = np.log(_scaled_uigamma(1.0 - xi, x))
        coef, *_ = np.linalg.lstsq(X, yv, rcond=None)
        r1, r2 = -coef[1], coef[0]
    resid = yv - X @ coef
    rmse = float(np.sqrt(np.mean(resid**2)))
    with np.errstate(over="ignore", divide="ignore"):
        r3 = float(np.exp(r2 / r1))
    return RCoefficients(float(r1), float(r2), r3, xi, rmse)


def fit_r_coefficients(xi: float) -> RCoefficients:
    return _fit(check_xi(xi))


def e_inverse_approx(x, xi: float):
    """Closed-form inverse of the fitted e_xi."""
    c = fit_r_coefficients(xi)
    x = np.asarray(x, dtype=float)
    if abs(c.xi) < XI_ZERO:
        out = np.exp((x + c.r2) / (c.r1 - 1.0))
    else:
        base = 1.0 + c.xi * x
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(base > 0, c.r3 * np.abs(base) ** (-1.0 / c.r1), np.nan)
    return out if out.ndim else float(out)


def sample_fp_limit_prices(xi: float, n: int, rng=None, size=None) -> np.ndarray:
    """n draws of X = e_xi(E1); ``size`` adds leading dimensions."""
    xi = check_xi(xi)
    gen = as_generator(rng)
    shape = (n,) if size is None else tuple(np.atleast_1d(size)) + (n,)
    e = np.maximum(gen.standard_exponential(shape), np.finfo(float).tiny)
    return e_transform(e, xi)


def c_mu_monte_carlo(xi: float, draws: int = C_MU_DRAWS, rng=None, chunk: int = 1_000_000):
    """Monte Carlo estimate of E[Z1 - X] = E[exp(E) Gamma(-xi, E)] and its standard error.

    The winner's surplus in the first-price limit, to be compared with
    Gamma(1 - xi), its second-price counterpart.
    """
    xi = check_xi(xi)
    gen = as_generator(rng)
    total = 0.0
    total2 = 0.0
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        e = np.maximum(gen.standard_exponential(m), np.finfo(float).tiny)
        g = h_transform(e, xi) - e_transform(e, xi)
        total += float(g.sum())
        total2 += float((g * g).sum())
        done += m
    mean = total / draws
    var = max(total2 / draws - mean * mean, 0.0)
    return mean, float(np.sqrt(var / draws))


# densities of the normalized first-price sample


def _params(xi: float):
    c = fit_r_coefficients(xi)
    return c.shape, c.scale, c.shift


def log_density_xnorm(x, xi: float, step: float = STEP) -> float:
    x = _point(x)
    if not in_simplex(x):
        return -np.inf
    r, _, _ = _params(xi)
    return float(K.log_marginal_point(augment(x), r, ORDER_FP, 0, step))


def density_xnorm(x, xi: float, step: float = STEP) -> float:
    """Approximate density of the N = n - 2 normalized first-price prices."""
    return float(np.exp(log_density_xnorm(x, xi, step)))


def kappa_density_fp(x, xi: float, step: float = STEP) -> float:
    x = _point(x)
    if not in_simplex(x):
        return 0.0
    r, C, _ = _params(xi)
    return float(C * np.exp(K.log_marginal_point(augment(x), r, ORDER_FP, 1, step)))


def joint_density_ymu_fp(y: float, x, xi: float, c_mu: float | None = None,
                         step: float = STEP) -> float:
    """Joint density of c_mu / range and the normalized point.

    ``c_mu`` defaults to Gamma(1 - xi); pass a cached Monte Carlo value to
    use that instead.
    """
    if y <= 0:
        raise ValueError("joint_density_ymu_fp requires y > 0")
    x = _point(x)
    if not in_simplex(x):
        return 0.0
    r, C, _ = _params(xi)
    c = float(special.gamma(1.0 - xi)) if c_mu is None else float(c_mu)
    return float(np.exp(K.log_ymu_point(float(y), augment(x), r, ORDER_FP, c / C, step)))


def joint_density_ypi_fp(y: float, x, xi: float, step: float = STEP) -> float:
    """Joint density of (pi - X_(1)) / range and the normalized point."""
    x = _point(x)
    if not in_simplex(x):
        return 0.0
    r, C, D = _params(xi)
    pi_ = (revenue_mean(xi) - D) / C
    return float(np.exp(K.log_ypi_point(float(y), augment(x), r, ORDER_FP, pi_, step)))


def _grid_params(xis):
    pars = np.array([_params(float(x)) for x in np.asarray(xis, dtype=float)])
    return pars[:, 0].copy(), pars[:, 1].copy(), pars[:, 2].copy()


def log_density_batch(X, xis, j: int = 0, step: float = STEP) -> np.ndarray:
    """(B, M) matrix of log f (j = 0) or log kappa f (j = 1) for first-price data."""
    W = augment(np.atleast_2d(np.asarray(X, dtype=float)))
    r, C, _ = _grid_params(xis)
    out = K.log_marginal_batch(W, r, ORDER_FP, j, step)
    if j:
        out += np.log(C)[None, :]
    return out


def log_ymu_batch(ys, X, xis, c_mu=None, step: float = STEP) -> np.ndarray:
    W = augment(np.atleast_2d(np.asarray(X, dtype=float)))
    xis = np.asarray(xis, dtype=float)
    r, C, _ = _grid_params(xis)
    c = special.gamma(1.0 - xis) if c_mu is None else np.asarray(c_mu, dtype=float)
    ys = np.broadcast_to(np.asarray(ys, dtype=float), (W.shape[0],)).copy()
    return K.log_ymu_batch(W, ys, r, c / C, ORDER_FP, step)


def log_ypi_batch(ys, X, xis, step: float = STEP) -> np.ndarray:
    W = augment(np.atleast_2d(np.asarray(X, dtype=float)))
    xis = np.asarray(xis, dtype=float)
    r, C, D = _grid_params(xis)
    pis = (np.array([revenue_mean(x) for x in xis]) - D) / C
    ys = np.broadcast_to(np.asarray(ys, dtype=float), (W.shape[0],)).copy()
    return K.log_ypi_batch(W, ys, r, pis, ORDER_FP, step)
