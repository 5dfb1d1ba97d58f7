"""Deterministic quadrature rules.

Gauss-Legendre and Gauss-Laguerre nodes come from :mod:`numpy.polynomial`.
The density kernels use a peak-centred trapezoid rule on a smoothly mapped
variable (see :mod:`evtauction._kernels`); the rules here are the generic
building blocks and the reference route used to cross-check those kernels.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import laguerre, legendre

DEFAULT_FINITE_NODES = 200
DEFAULT_SEMI_INFINITE_NODES = 100


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    kind: str  # "finite" (on [-1, 1]) or "semi-infinite" (Laguerre, on [0, inf))

    def __post_init__(self):
        if self.nodes.shape != self.weights.shape:
            raise ValueError("nodes and weights must have equal length")
        if np.any(np.diff(self.nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    def __len__(self):
        return self.nodes.size


@lru_cache(maxsize=32)
def gauss_legendre(n: int = DEFAULT_FINITE_NODES) -> QuadratureRule:
    x, w = legendre.leggauss(int(n))
    return QuadratureRule(x, w, "finite")


@lru_cache(maxsize=32)
def gauss_laguerre(n: int = DEFAULT_SEMI_INFINITE_NODES) -> QuadratureRule:
    x, w = laguerre.laggauss(int(n))
    return QuadratureRule(x, w, "semi-infinite")


def integrate_finite(f, a: float, b: float, rule: QuadratureRule | None = None) -> float:
    """Gauss-Legendre estimate of the integral of f over [a, b].

    ``f`` must accept a numpy array of nodes.
    """
    if not a < b:
        raise ValueError("integrate_finite requires a < b")
    rule = rule or gauss_legendre()
    if rule.kind != "finite":
        raise ValueError("integrate_finite needs a finite-interval rule")
    half = 0.5 * (b - a)
    x = a + half * (rule.nodes + 1.0)
    return float(half * np.dot(rule.weights, f(x)))


def integrate_semi_infinite(f, rule: QuadratureRule | None = None, strategy: str = "laguerre",
                            scale: float = 1.0) -> float:
    """Integral of f over [0, inf).

    ``strategy="laguerre"`` factors e^{-s/scale} out of f and applies the
    Gauss-Laguerre rule. ``strategy="mapped"`` substitutes s = scale*t/(1-t)
    and applies Gauss-Legendre on t in (0, 1), which suits integrands whose
    decay is not exponential.
    """
    if strategy == "laguerre":
        rule = rule or gauss_laguerre()
        if rule.kind != "semi-infinite":
            raise ValueError("laguerre strategy needs a semi-infinite rule")
        s = scale * rule.nodes
        return float(scale * np.dot(rule.weights, f(s) * np.exp(rule.nodes)))
    if strategy == "mapped":
        rule = rule or gauss_legendre()
        t = 0.5 * (rule.nodes + 1.0)
        s = scale * t / (1.0 - t)
        jac = scale / (1.0 - t) ** 2
        return float(0.5 * np.dot(rule.weights, f(s) * jac))
    raise ValueError(f"unknown strategy {strategy!r}")


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-12, max_depth: int = 60) -> float:
    """Scalar adaptive Simpson rule, used as an independent reference."""

    def simpson(fa, fm, fb, lo, hi):
        return (hi - lo) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(lo, hi, fa, fm, fb, whole, eps, depth):
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, lo, mid)
        right = simpson(fm, frm, fb, mid, hi)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * eps:
            return left + right + (left + right - whole) / 15.0
        return (recurse(lo, mid, fa, flm, fm, left, eps / 2.0, depth - 1)
                + recurse(mid, hi, fm, frm, fb, right, eps / 2.0, depth - 1))

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, max_depth)
