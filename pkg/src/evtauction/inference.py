"""Confidence intervals and tail-index tests from transaction prices.

Every statistic depends on the prices only through their self-normalized
interior points, so CIs are location/scale equivariant and tests are affine
invariant by construction.
"""
from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from . import density_fp, density_sp
from .calibrate import TableError, WeightTable
from .evt_core import XI_MAX, XI_MIN, RngStream, check_xi, sample_limit_prices, self_normalize

log = logging.getLogger(__name__)

SCAN_POINTS = 2000
NULL_DRAWS = 100_000
NULL_SEED = 1729
REGULARITY_POINTS = 100
FORMATS = {"sp": "second_price", "fp": "first_price"}


class DegenerateSampleError(ValueError):
    """All prices coincide, so the normalized point is undefined."""


class ConfidenceSetError(ArithmeticError):
    """The confidence set is empty, unbounded on the scan range, or not an interval.

    For a non-interval set ``segments`` holds its disjoint pieces (normalized units).
    """

    def __init__(self, message, segments=None):
        super().__init__(message)
        self.segments = segments


@dataclass(frozen=True)
class CIResult:
    lo: float
    hi: float
    target: str
    format: str
    alpha: float
    n: int
    weight_table_id: str
    y_lo: float
    y_hi: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    critical_value: float
    reject: bool
    p_value: float
    xi0: float
    alternative: str
    log_statistic: float
    null_draws: int
    seed: int
    n: int
    format: str = "second_price"

    __test__ = False  # not a pytest class

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class WeightGrid:
    """A discrete weight W over alternative tail indices."""

    points: np.ndarray
    probs: np.ndarray
    label: str = "custom"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        pr = np.asarray(self.probs, dtype=float)
        if pts.ndim != 1 or pts.shape != pr.shape or pts.size == 0:
            raise ValueError("points and probs must be equal-length 1-D arrays")
        if np.any(pr < 0) or pr.sum() <= 0:
            raise ValueError("weights must be nonnegative with positive total")
        for x in pts:
            check_xi(x)

    def key(self) -> str:
        h = hashlib.sha256(np.asarray(self.points, dtype=float).tobytes())
        h.update(np.asarray(self.probs, dtype=float).tobytes())
        return h.hexdigest()[:16]


def uniform_weight(lo: float = XI_MIN, hi: float = XI_MAX, m: int = REGULARITY_POINTS) -> WeightGrid:
    """Equal mass on lo + (hi - lo) i / m, i = 1..m, i.e. uniform on (lo, hi]."""
    pts = lo + (hi - lo) * np.arange(1, m + 1) / m
    return WeightGrid(pts, np.full(m, 1.0 / m), f"uniform({lo:g},{hi:g}]")


def point_weight(xi1: float) -> WeightGrid:
    return WeightGrid(np.array([float(xi1)]), np.array([1.0]), f"xi={xi1:g}")


def _dens(fmt: str):
    if fmt not in FORMATS:
        raise ValueError(f"format must be 'sp' or 'fp', got {fmt!r}")
    return density_sp if fmt == "sp" else density_fp


def normalized_point(p) -> tuple[np.ndarray, float, float]:
    """(z, min, range) for a price vector; raises on degenerate samples."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size < 3:
        raise ValueError("need a 1-D vector of at least 3 prices")
    if not np.all(np.isfinite(p)):
        raise ValueError("prices must be finite")
    lo, hi = float(p.min()), float(p.max())
    if not hi > lo:
        raise DegenerateSampleError("all prices are equal; the normalized sample is undefined")
    return self_normalize(p), lo, hi - lo


# ---------------------------------------------------------------------------
# confidence sets


def _log_lhs(z, table: WeightTable) -> float:
    fam = table.family
    lk = fam._dens.log_density_batch(z[None, :], table.grid, 1)
    return float(logsumexp(lk[0]) - np.log(table.grid.size))


def _rhs_fn(z, table: WeightTable):
    fam = table.family
    sg, sw = table.support()
    cm = table.c_mu_support()
    if sg.size == 0:
        raise ConfidenceSetError("weight table has no positive weights")

    def rhs(ys):
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        Z = np.repeat(z[None, :], ys.size, axis=0)
        lf = fam.log_joint(ys, Z, sg, c_mu=cm)
        return logsumexp(lf, axis=1, b=sw[None, :])

    return rhs


def _scan_grid(quantity: str, points: int) -> np.ndarray:
    if quantity == "winner":
        return np.logspace(-8, 8, points)
    u = np.linspace(-np.arcsinh(1e8), np.arcsinh(1e8), points)
    return np.sinh(u)


def confidence_segments(z, table: WeightTable, points: int = SCAN_POINTS, rtol: float = 1e-6) -> list:
    """Disjoint pieces of {y : W-average of kappa f(z) <= sum_k lambda_k f(y, z | xi_k)}.

    Scans ``points`` candidates and refines every crossing by bisection.
    """
    z = np.asarray(z, dtype=float)
    quantity = table.family.quantity
    lhs = _log_lhs(z, table)
    rhs = _rhs_fn(z, table)
    ys = _scan_grid(quantity, points)
    inside = rhs(ys) >= lhs
    if not inside.any():
        raise ConfidenceSetError("empty confidence set")
    if inside[0] or inside[-1]:
        raise ConfidenceSetError("confidence set reaches the end of the scan range")
    edges = np.flatnonzero(np.diff(inside.astype(np.int8)))

    def g(y):
        return float(rhs(y)[0] - lhs)

    def root(i):
        if quantity == "winner":
            t = brentq(lambda t: g(np.exp(t)), np.log(ys[i]), np.log(ys[i + 1]), xtol=rtol * 1e-2, rtol=1e-15)
            return float(np.exp(t))
        tol = rtol * max(1e-3, min(abs(ys[i]), abs(ys[i + 1])))
        return float(brentq(g, ys[i], ys[i + 1], xtol=tol, rtol=1e-15))

    cuts = [root(i) for i in edges]
    return list(zip(cuts[0::2], cuts[1::2]))


def confidence_set(z, table: WeightTable, points: int = SCAN_POINTS, rtol: float = 1e-6):
    """Endpoints of the confidence set; raises if the set is not a single interval."""
    segs = confidence_segments(z, table, points, rtol)
    if len(segs) > 1:
        raise ConfidenceSetError(f"confidence set is not an interval ({len(segs)} segments)", segs)
    return segs[0]


def _check_table(table: WeightTable, target: str, n: int, alpha):
    if table.target != target:
        raise TableError(f"weight table is for {table.target}, need {target}")
    if table.n != n:
        raise TableError(f"weight table is for n={table.n}, sample has n={n}")
    if alpha is not None and abs(float(alpha) - table.alpha) > 1e-12:
        raise TableError(f"weight table was calibrated for alpha={table.alpha}, requested {alpha}")


def _ci(p, table: WeightTable, alpha, quantity: str, fmt: str) -> CIResult:
    z, lo, R = normalized_point(p)
    _check_table(table, f"{quantity}_{fmt}", len(p), alpha)
    shift = 0.0 if quantity == "winner" else lo
    try:
        y_lo, y_hi = confidence_set(z, table)
    except ConfidenceSetError as exc:
        if exc.segments is None:
            raise
        pieces = [(shift + R * a, shift + R * b) for a, b in exc.segments]
        raise ConfidenceSetError(f"{exc}: " + ", ".join(f"[{a:.6g}, {b:.6g}]" for a, b in pieces),
                                 pieces) from None
    a, b = shift + R * y_lo, shift + R * y_hi
    return CIResult(a, b, quantity, FORMATS[fmt], table.alpha, len(p), table.table_id, y_lo, y_hi)


def ci_winner_sp(p, table: WeightTable, alpha=None) -> CIResult:
    """CI for the winner's expected utility from second-price transaction prices."""
    return _ci(p, table, alpha, "winner", "sp")


def ci_seller_sp(p, table: WeightTable, alpha=None) -> CIResult:
    """CI for the seller's expected revenue from second-price transaction prices."""
    return _ci(p, table, alpha, "seller", "sp")


def ci_winner_fp(p, table: WeightTable, alpha=None) -> CIResult:
    return _ci(p, table, alpha, "winner", "fp")


def ci_seller_fp(p, table: WeightTable, alpha=None) -> CIResult:
    return _ci(p, table, alpha, "seller", "fp")


# ---------------------------------------------------------------------------
# tests


def log_statistic(Z, xi0: float, weight: WeightGrid, fmt: str = "sp") -> np.ndarray:
    """log of int f(z | xi) dW(xi) / f(z | xi0) for each row of Z."""
    dens = _dens(fmt)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    pts = np.append(np.asarray(weight.points, dtype=float), float(xi0))
    lf = dens.log_density_batch(Z, pts, 0)
    pr = np.asarray(weight.probs, dtype=float)
    num = logsumexp(lf[:, :-1], axis=1, b=(pr / pr.sum())[None, :])
    return num - lf[:, -1]


def _draw_null(xi0: float, n: int, size: int, rng, fmt: str) -> np.ndarray:
    if fmt == "sp":
        P = sample_limit_prices(xi0, n, "second", rng=rng, size=size)
    else:
        P = density_fp.sample_fp_limit_prices(xi0, n, rng=rng, size=size)
    return self_normalize(P)


def shipped_null_dir() -> Path:
    return Path(__file__).parent / "data" / "nulls"


def user_cache_dir() -> Path:
    env = os.environ.get("EVTAUCTION_CACHE")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "evtauction"


def _null_name(fmt, n, xi0, weight, draws, seed) -> str:
    return f"null_{fmt}_n{n}_xi{float(xi0).hex()}_{weight.key()}_d{draws}_s{seed}.npy"


_NULL_MEMO: dict = {}


def null_distribution(xi0: float, n: int, weight: WeightGrid, fmt: str = "sp",
                      draws: int = NULL_DRAWS, seed: int = NULL_SEED, cache: bool = True) -> np.ndarray:
    """Sorted simulated log statistics under xi0, cached in memory and on disk."""
    xi0 = check_xi(xi0)
    name = _null_name(fmt, n, xi0, weight, draws, seed)
    if name in _NULL_MEMO:
        return _NULL_MEMO[name]
    paths = [shipped_null_dir() / name, user_cache_dir() / name]
    for pth in paths:
        if cache and pth.exists():
            arr = np.load(pth)
            _NULL_MEMO[name] = arr
            return arr
    log.info("simulating %d null statistics (%s, n=%d)", draws, fmt, n)
    gen = RngStream(seed, 4242).generator()
    out = np.empty(draws)
    chunk = 5000
    for s in range(0, draws, chunk):
        m = min(chunk, draws - s)
        out[s:s + m] = log_statistic(_draw_null(xi0, n, m, gen, fmt), xi0, weight, fmt)
    out.sort()
    _NULL_MEMO[name] = out
    if cache:
        try:
            paths[1].parent.mkdir(parents=True, exist_ok=True)
            np.save(paths[1], out)
        except OSError:
            log.warning("could not write null cache %s", paths[1])
    return out


def _seed_of(rng) -> int:
    if rng is None:
        return NULL_SEED
    if isinstance(rng, RngStream):
        return int(rng.seed)
    return int(rng)


def p_value_from_null(log_stat: float, null: np.ndarray) -> float:
    """Fraction of null statistics at or above the observed one."""
    idx = np.searchsorted(null, log_stat, side="left")
    return float((null.size - idx) / null.size)


def _test(p, xi0, weight: WeightGrid, alpha, rng, fmt, draws) -> TestResult:
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    z, _, _ = normalized_point(p)
    n = len(p)
    seed = _seed_of(rng)
    null = null_distribution(xi0, n, weight, fmt, draws, seed)
    ls = float(log_statistic(z, xi0, weight, fmt)[0])
    lcv = float(np.quantile(null, 1.0 - alpha))
    return TestResult(
        statistic=float(np.exp(min(ls, 700.0))), critical_value=float(np.exp(min(lcv, 700.0))),
        reject=bool(ls > lcv), p_value=p_value_from_null(ls, null), xi0=float(xi0),
        alternative=weight.label, log_statistic=ls, null_draws=int(draws), seed=seed, n=n,
        format=FORMATS[fmt],
    )


def test_simple(p, xi0: float, xi1: float, alpha: float = 0.05, rng=None, fmt: str = "sp",
                draws: int = NULL_DRAWS) -> TestResult:
    """Likelihood-ratio test of xi = xi0 against the point alternative xi1."""
    if float(xi0) == float(xi1):
        raise ValueError("xi0 and xi1 must differ")
    return _test(p, check_xi(xi0), point_weight(check_xi(xi1)), alpha, rng, fmt, draws)


def test_composite(p, xi0: float, weight: WeightGrid | None = None, alpha: float = 0.05, rng=None,
                   fmt: str = "sp", draws: int = NULL_DRAWS) -> TestResult:
    """Weighted-average-power test of xi = xi0; W defaults to uniform on (xi0, 0.5]."""
    weight = weight or uniform_weight(float(xi0), XI_MAX)
    return _test(p, check_xi(xi0), weight, alpha, rng, fmt, draws)


def test_regularity(p, alpha: float = 0.05, rng=None, fmt: str = "sp",
                    draws: int = NULL_DRAWS) -> TestResult:
    """Test of xi = -1 (bounded support, positive density at the top) against uniform W on (-1, 0.5]."""
    return test_composite(p, XI_MIN, uniform_weight(), alpha, rng, fmt, draws)


def p_value(p, xi0: float, weight: WeightGrid | None = None, rng=None, fmt: str = "sp",
            draws: int = NULL_DRAWS) -> float:
    weight = weight or uniform_weight(float(xi0), XI_MAX)
    z, _, _ = normalized_point(p)
    null = null_distribution(check_xi(xi0), len(p), weight, fmt, draws, _seed_of(rng))
    return p_value_from_null(float(log_statistic(z, xi0, weight, fmt)[0]), null)


def power_curve(xi_grid, n_values, alpha: float = 0.05, rng=None, reps: int = 500, fmt: str = "sp",
                draws: int = NULL_DRAWS) -> list[dict]:
    """Rejection frequency of the regularity test on simulated limit samples.

    Returns one row per (xi, n) with the rejection rate and its binomial SE.
    """
    rng = rng if isinstance(rng, RngStream) else RngStream(_seed_of(rng))
    weight = uniform_weight()
    rows = []
    for j, n in enumerate(n_values):
        null = null_distribution(XI_MIN, int(n), weight, fmt, draws, NULL_SEED)
        lcv = float(np.quantile(null, 1.0 - alpha))
        for i, xi in enumerate(xi_grid):
            gen = rng.substream(1000 * j + i).generator()
            Z = _draw_null(check_xi(xi), int(n), reps, gen, fmt)
            rate = float(np.mean(log_statistic(Z, XI_MIN, weight, fmt) > lcv))
            rows.append({"xi": float(xi), "n": int(n), "rejection": rate,
                         "se": float(np.sqrt(max(rate * (1 - rate), 1e-12) / reps)), "reps": reps})
    return rows
