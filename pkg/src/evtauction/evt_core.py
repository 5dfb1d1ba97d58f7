"""Generalized extreme-value transforms, limit-law sampling and self-normalization.

Everything here is a pure function of its arguments. Random draws come from
an explicit :class:`RngStream`, so replications are reproducible and can be
split into independent substreams.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

XI_MIN = -1.0
XI_MAX = 0.5
# below this |xi| the xi = 0 formulas are used
XI_ZERO = 1e-6
# below this |xi| revenue_mean switches to a Taylor series
XI_SERIES = 1e-3
EULER_GAMMA = float(np.euler_gamma)


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of a formula."""


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Substreams are derived through :class:`numpy.random.SeedSequence` spawn
    keys, so distinct ``stream_id`` values give statistically independent
    generators and the same pair always gives the same draws.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))

    def substream(self, k: int) -> "RngStream":
        # stream ids are folded so nested substreams do not collide
        return RngStream(self.seed, self.stream_id * 1_000_003 + int(k) + 1)


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, a Generator, an int seed or None."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def check_xi(xi: float) -> float:
    xi = float(xi)
    if not (XI_MIN - 1e-12 <= xi <= XI_MAX + 1e-12):
        raise DomainError(f"tail index {xi} outside [{XI_MIN}, {XI_MAX}]")
    return xi


def h_transform(x, xi: float):
    """H_xi(x) = (x**(-xi) - 1) / xi, and -log(x) when xi = 0.

    Uses expm1 for small nonzero xi so the limit at xi = 0 is continuous.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("h_transform requires x > 0")
    lx = np.log(x)
    if abs(xi) < XI_ZERO:
        out = -lx
    else:
        out = np.expm1(-xi * lx) / xi
    return out if out.ndim else float(out)


def gev_cdf(x, xi: float):
    """CDF of the generalized extreme-value law G_xi."""
    x = np.asarray(x, dtype=float)
    if abs(xi) < XI_ZERO:
        out = np.exp(-np.exp(-x))
    else:
        base = xi * x
        inside = base > -1.0
        t = np.where(inside, np.exp(-np.log1p(np.where(inside, base, 0.0)) / xi), 0.0)
        below = 0.0 if xi > 0 else 1.0
        out = np.where(inside, np.exp(-t), below)
    return out if out.ndim else float(out)


def sample_limit_prices(xi: float, n: int, order: str = "second", rng=None, size=None):
    """Draw n limit variates H_xi(E1) (``order="first"``) or H_xi(E1 + E2).

    ``size`` adds leading replication dimensions, so ``size=B`` returns an
    array of shape (B, n).
    """
    if n < 1:
        raise DomainError("n must be at least 1")
    gen = as_generator(rng)
    shape = (n,) if size is None else tuple(np.atleast_1d(size)) + (n,)
    if order == "first":
        e = gen.standard_exponential(shape)
    elif order == "second":
        e = gen.standard_gamma(2.0, shape)
    else:
        raise ValueError(f"unknown order {order!r}")
    # Exp(1) and Gamma(2) draws are a.s. positive; guard against exact zeros
    e = np.maximum(e, np.finfo(float).tiny)
    return h_transform(e, xi)


def self_normalize(p) -> np.ndarray:
    """Sorted, location/scale-free interior prices of a sample of size n >= 3.

    Returns (P_(j+1) - P_(1)) / (P_(n) - P_(1)) for j = 1..n-2, or zeros when
    all prices coincide. A 2-D input is normalized row by row.
    """
    p = np.asarray(p, dtype=float)
    if p.shape[-1] < 3:
        raise DomainError("need at least 3 prices")
    if not np.all(np.isfinite(p)):
        raise DomainError("prices must be finite")
    s = np.sort(p, axis=-1, kind="stable")
    lo = s[..., :1]
    rng = s[..., -1:] - lo
    safe = np.where(rng > 0, rng, 1.0)
    z = (s[..., 1:-1] - lo) / safe
    z = np.where(rng > 0, z, 0.0)
    return np.clip(z, 0.0, 1.0)


def augment(z) -> np.ndarray:
    """Prepend 0 and append 1 to a simplex point (or rows of points)."""
    z = np.asarray(z, dtype=float)
    zeros = np.zeros(z.shape[:-1] + (1,))
    return np.concatenate([zeros, z, zeros + 1.0], axis=-1)


def upper_incomplete_gamma(a, x):
    """Non-normalized upper incomplete gamma Gamma(a, x) for x > 0.

    Positive ``a`` uses scipy's regularized gammaincc; ``a = 0`` uses E1;
    negative ``a`` steps down with Gamma(a, x) = (Gamma(a+1, x) - x**a e**-x) / a.
    """
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("upper_incomplete_gamma requires x > 0")
    a, x = np.broadcast_arrays(a, x)
    out = np.empty(a.shape)
    flat_a, flat_x, flat_o = a.ravel(), x.ravel(), out.reshape(-1)
    for i in range(flat_a.size):
        flat_o[i] = _uigamma_scalar(flat_a[i], flat_x[i])
    return out if out.ndim else float(out)


def _uigamma_scalar(a: float, x: float) -> float:
    if round(a) <= 0 and abs(a - round(a)) < 1e-12:
        # near a non-positive integer: snap, so gamma(a) cannot overflow and the recurrence never divides by zero
        a = float(round(a))
    if a > 0:
        return float(special.gammaincc(a, x) * special.gamma(a))
    steps = int(np.ceil(-a)) if a < 0 else 0
    top = a + steps
    if top == 0.0:
        val = float(special.exp1(x))
    else:
        val = float(special.gammaincc(top, x) * special.gamma(top))
    # walk down from a + steps to a
    for j in range(steps):
        b = top - 1 - j
        val = (val - x**b * np.exp(-x)) / b
    return val


def winner_gap_mean(xi: float) -> float:
    """E[Z1 - Z2] = Gamma(1 - xi) for the two largest limit variates."""
    if xi >= 1:
        raise DomainError("winner_gap_mean requires xi < 1")
    return float(special.gamma(1.0 - xi))


def revenue_mean(xi: float) -> float:
    """E[Z2] = (Gamma(2 - xi) - 1) / xi, and Euler's constant - 1 at xi = 0."""
    if xi >= 1:
        raise DomainError("revenue_mean requires xi < 1")
    if abs(xi) < XI_ZERO:
        return EULER_GAMMA - 1.0
    if abs(xi) < XI_SERIES:
        # log Gamma(2 - xi) as a cubic in xi, then expm1 to avoid cancellation
        psi0 = float(special.polygamma(0, 2.0))
        psi1 = float(special.polygamma(1, 2.0))
        psi2 = float(special.polygamma(2, 2.0))
        lg = -psi0 * xi + psi1 * xi**2 / 2.0 - psi2 * xi**3 / 6.0
        return float(np.expm1(lg) / xi)
    return float(np.expm1(special.gammaln(2.0 - xi)) / xi)
