"""Finite-sample Monte Carlo: valuation laws, auctions, comparator CIs and experiment tables."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special, stats
from scipy.optimize import brentq

from . import inference
from .calibrate import WeightTable
from .evt_core import RngStream, as_generator

FAMILIES = {
    "uniform_0_3": -1.0,
    "abs_normal": 0.0,
    "abs_t20": 0.05,
    "pareto_025": 0.25,
}
ALIASES = {"u03": "uniform_0_3", "absn": "abs_normal", "abs_n": "abs_normal", "t20": "abs_t20",
           "abs_t": "abs_t20", "pareto": "pareto_025", "pa": "pareto_025"}
FP_NODES = 200


class DivergentMomentError(ValueError):
    """The requested moment does not exist for this valuation law."""


@dataclass(frozen=True)
class DGPSpec:
    family: str
    implied_xi: float = field(default=None)

    def __post_init__(self):
        fam = ALIASES.get(self.family, self.family)
        if fam not in FAMILIES:
            raise ValueError(f"unknown valuation family {self.family!r}")
        object.__setattr__(self, "family", fam)
        if self.implied_xi is None:
            object.__setattr__(self, "implied_xi", FAMILIES[fam])
        elif fam != "pareto_025" and self.implied_xi != FAMILIES[fam]:
            raise ValueError(f"{fam} has tail index {FAMILIES[fam]}")

    @property
    def lower(self) -> float:
        return 1.0 if self.family == "pareto_025" else 0.0

    def cdf(self, v):
        v = np.asarray(v, dtype=float)
        if self.family == "uniform_0_3":
            return np.clip(v / 3.0, 0.0, 1.0)
        if self.family == "abs_normal":
            return np.where(v > 0, special.erf(np.maximum(v, 0) / math.sqrt(2.0)), 0.0)
        if self.family == "abs_t20":
            return np.where(v > 0, 1.0 - 2.0 * stats.t.sf(np.maximum(v, 0), 20), 0.0)
        a = 1.0 / self.implied_xi
        return np.where(v > 1, -np.expm1(-a * np.log(np.maximum(v, 1.0))), 0.0)

    def sf(self, v):
        """1 - F, computed directly so upper tails keep their precision."""
        v = np.asarray(v, dtype=float)
        if self.family == "uniform_0_3":
            return np.clip(1.0 - v / 3.0, 0.0, 1.0)
        if self.family == "abs_normal":
            return np.where(v > 0, special.erfc(np.maximum(v, 0) / math.sqrt(2.0)), 1.0)
        if self.family == "abs_t20":
            return np.where(v > 0, 2.0 * stats.t.sf(np.maximum(v, 0), 20), 1.0)
        a = 1.0 / self.implied_xi
        return np.where(v > 1, np.maximum(v, 1.0) ** (-a), 1.0)

    @property
    def upper(self) -> float:
        return 3.0 if self.family == "uniform_0_3" else np.inf


def dgp_sample(spec: DGPSpec, K: int, rng=None, size=None) -> np.ndarray:
    """K i.i.d. valuations; ``size`` adds leading dimensions."""
    if K < 2:
        raise ValueError("need at least 2 bidders")
    gen = as_generator(rng)
    shape = (K,) if size is None else tuple(np.atleast_1d(size)) + (K,)
    if spec.family == "uniform_0_3":
        return gen.uniform(0.0, 3.0, shape)
    if spec.family == "abs_normal":
        return np.abs(gen.standard_normal(shape))
    if spec.family == "abs_t20":
        return np.abs(gen.standard_t(20, shape))
    # inverse CDF: P(V > v) = v^(-1/xi)
    u = gen.uniform(size=shape)
    return (1.0 - u) ** (-spec.implied_xi)


def simulate_auction_sp(valuations) -> np.ndarray:
    """Second-price transaction price: the second-highest valuation."""
    v = np.asarray(valuations, dtype=float)
    if v.shape[-1] < 2:
        raise ValueError("need at least 2 bidders")
    out = np.partition(v, v.shape[-1] - 2, axis=-1)[..., -2]
    return out if out.ndim else float(out)


def _shading(spec: DGPSpec, top: np.ndarray, K: int) -> np.ndarray:
    """int_{v_L}^{top} (F(u) / F(top))^(K-1) du."""
    if spec.family == "uniform_0_3":
        return (top - spec.lower) / K
    x, w = np.polynomial.legendre.leggauss(FP_NODES)
    lo = spec.lower
    half = 0.5 * (top - lo)
    u = lo + half[..., None] * (x + 1.0)
    with np.errstate(divide="ignore"):
        lr = np.log(spec.cdf(u)) - np.log(spec.cdf(top))[..., None]
    return half * np.sum(w * np.exp((K - 1) * lr), axis=-1)


def simulate_auction_fp(valuations, spec: DGPSpec) -> np.ndarray:
    """First-price transaction price: the winner's equilibrium bid."""
    v = np.asarray(valuations, dtype=float)
    K = v.shape[-1]
    if K < 2:
        raise ValueError("need at least 2 bidders")
    top = np.max(v, axis=-1)
    out = top - _shading(spec, np.asarray(top, dtype=float), K)
    return out if np.ndim(out) else float(out)


def _check_moment(spec: DGPSpec):
    if spec.implied_xi >= 1.0:
        raise DivergentMomentError("expected values diverge for tail index >= 1")


def _quad_tail(fun, spec: DGPSpec) -> float:
    lo, hi = spec.lower, spec.upper
    if np.isfinite(hi):
        v, _ = integrate.quad(fun, lo, hi, limit=500, epsabs=1e-14, epsrel=1e-12)
        return v
    # split so the bulk near the top of the sample is resolved
    mid = lo + 1.0
    a, _ = integrate.quad(fun, lo, mid, limit=500, epsabs=1e-14, epsrel=1e-12)
    b, _ = integrate.quad(fun, mid, np.inf, limit=500, epsabs=1e-14, epsrel=1e-12)
    return a + b


def true_mu(spec: DGPSpec, K: int, n: int | None = None) -> float:
    """E[V_(1) - V_(2)] = K int F^(K-1) (1 - F), the winner's expected utility."""
    _check_moment(spec)
    if spec.family == "uniform_0_3":
        return 3.0 / (K + 1.0)
    return K * _quad_tail(lambda u: float(spec.cdf(u)) ** (K - 1) * float(spec.sf(u)), spec)


def true_pi(spec: DGPSpec, K: int, n: int | None = None) -> float:
    """E[V_(2)], the seller's expected revenue."""
    _check_moment(spec)

    def surv(u):
        F = float(spec.cdf(u))
        S = float(spec.sf(u))
        return 1.0 - F**K - K * F ** (K - 1) * S

    return spec.lower + _quad_tail(surv, spec)


# ---------------------------------------------------------------------------
# comparators (they need data that transaction prices alone do not reveal)


def ci_tstat_comparator(gaps, alpha: float = 0.05) -> inference.CIResult:
    d = np.asarray(gaps, dtype=float)
    n = d.size
    if n < 2:
        raise ValueError("need at least 2 auctions")
    m = float(d.mean())
    s = float(d.std(ddof=1))
    h = float(stats.norm.ppf(1.0 - alpha / 2.0)) * s / math.sqrt(n)
    return inference.CIResult(m - h, m + h, "winner", "comparator", alpha, n, "tstat", np.nan, np.nan)


def price_cdf_from_valuation(F, K: int):
    """F_P = F^K + K F^(K-1) (1 - F) for a second-price auction with K bidders."""
    F = np.asarray(F, dtype=float)
    return F**K + K * F ** (K - 1) * (1.0 - F)


def valuation_cdf_from_price(Fp, K: int):
    """Inverse of :func:`price_cdf_from_valuation` (monotone on [0, 1])."""
    Fp = np.atleast_1d(np.asarray(Fp, dtype=float))
    out = np.empty_like(Fp)
    for i, t in enumerate(Fp):
        if t <= 0.0:
            out[i] = 0.0
        elif t >= 1.0:
            out[i] = 1.0
        else:
            out[i] = brentq(lambda f: price_cdf_from_valuation(f, K) - t, 0.0, 1.0, xtol=1e-15, rtol=1e-15)
    return out if out.size > 1 else float(out[0])


def _mu_plugin(sorted_x: np.ndarray, FV: np.ndarray, K: int) -> float:
    # F_V is a step function equal to FV[i] on [x_(i+1), x_(i+2)), i = 0..n-2
    dx = np.diff(sorted_x)
    return float(K * np.sum(dx * (FV ** (K - 1) - FV**K)))


def mu_from_prices(prices, K: int, _cache=None) -> float:
    """Plug-in estimate of the winner's utility from second-price prices."""
    x = np.sort(np.asarray(prices, dtype=float))
    n = x.size
    levels = np.arange(1, n) / n
    FV = _cache if _cache is not None else valuation_cdf_from_price(levels, K)
    return _mu_plugin(x, np.atleast_1d(FV), K)


def mu_from_top_valuations(top, K: int) -> float:
    """Plug-in estimate from the highest valuations, using F_V = F_{V(1)}^(1/K)."""
    x = np.sort(np.asarray(top, dtype=float))
    n = x.size
    FV = (np.arange(1, n) / n) ** (1.0 / K)
    return _mu_plugin(x, FV, K)


def _percentile_ci(est, boots, alpha, n, label):
    lo, hi = np.quantile(boots, [alpha / 2.0, 1.0 - alpha / 2.0])
    return inference.CIResult(float(lo), float(hi), "winner", "comparator", alpha, n, label, est, est)


def ci_bootstrap_sp(prices, K: int, alpha: float = 0.05, B_boot: int = 500, rng=None) -> inference.CIResult:
    x = np.asarray(prices, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least 2 auctions")
    gen = as_generator(rng)
    FV = np.atleast_1d(valuation_cdf_from_price(np.arange(1, n) / n, K))
    est = mu_from_prices(x, K, FV)
    boots = np.array([mu_from_prices(gen.choice(x, n, replace=True), K, FV) for _ in range(B_boot)])
    return _percentile_ci(est, boots, alpha, n, "bootstrap_sp")


def ci_bootstrap_fp(highest_valuations, K: int, alpha: float = 0.05, B_boot: int = 500,
                    rng=None) -> inference.CIResult:
    x = np.asarray(highest_valuations, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least 2 auctions")
    gen = as_generator(rng)
    est = mu_from_top_valuations(x, K)
    boots = np.array([mu_from_top_valuations(gen.choice(x, n, replace=True), K) for _ in range(B_boot)])
    return _percentile_ci(est, boots, alpha, n, "bootstrap_fp")


# ---------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class Design:
    dgp: DGPSpec
    n: int
    K: int | tuple  # fixed count, or (lo, hi) for a uniform integer draw per auction
    fmt: str = "sp"

    @property
    def k_label(self) -> str:
        return f"U{{{self.K[0]}..{self.K[1]}}}" if isinstance(self.K, tuple) else str(self.K)

    def draw_K(self, gen) -> np.ndarray:
        if isinstance(self.K, tuple):
            return gen.integers(self.K[0], self.K[1] + 1, self.n)
        return np.full(self.n, int(self.K))


@dataclass
class ExperimentReport:
    rows: list
    replications: int
    seed: int
    kind: str = "coverage"

    def to_csv(self) -> str:
        buf = io.StringIO()
        if not self.rows:
            return ""
        w = csv.DictWriter(buf, fieldnames=list(self.rows[0].keys()), lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow(r)
        return buf.getvalue()

    def to_markdown(self) -> str:
        if not self.rows:
            return ""
        keys = list(self.rows[0].keys())
        out = ["| " + " | ".join(keys) + " |", "|" + "---|" * len(keys)]
        for r in self.rows:
            out.append("| " + " | ".join(f"{v:.3f}" if isinstance(v, float) else str(v) for v in r.values()) + " |")
        return "\n".join(out) + "\n"


def simulate_dataset(design: Design, gen):
    """(K per auction, transaction prices, highest valuations, second-highest valuations)."""
    Ks = design.draw_K(gen)
    prices = np.empty(design.n)
    tops = np.empty(design.n)
    seconds = np.empty(design.n)
    for j, K in enumerate(Ks):
        v = dgp_sample(design.dgp, int(K), gen)
        tops[j] = v.max()
        seconds[j] = simulate_auction_sp(v)
        prices[j] = seconds[j] if design.fmt == "sp" else simulate_auction_fp(v, design.dgp)
    return Ks, prices, tops, seconds


_TRUTH: dict = {}


def _truth(spec: DGPSpec, K: int, what: str) -> float:
    key = (spec.family, spec.implied_xi, int(K), what)
    if key not in _TRUTH:
        _TRUTH[key] = true_mu(spec, int(K)) if what == "mu" else true_pi(spec, int(K))
    return _TRUTH[key]


def run_coverage_experiment(design: Design, methods=("ours",), reps: int = 200, rng=None,
                            table: WeightTable | None = None, target: str = "winner",
                            alpha: float = 0.05, B_boot: int = 500) -> ExperimentReport:
    """Coverage and mean length of each CI method over ``reps`` simulated datasets."""
    rs = rng if isinstance(rng, RngStream) else RngStream(0 if rng is None else int(rng))
    if reps <= 0:
        return ExperimentReport([], 0, rs.seed)
    hits = {m: 0 for m in methods}
    lens = {m: 0.0 for m in methods}
    fails = {m: 0 for m in methods}
    split = {m: 0 for m in methods}
    for r in range(reps):
        Ks, prices, tops, seconds = simulate_dataset(design, rs.substream(r).generator())
        what = "mu" if target == "winner" else "pi"
        truth = float(np.mean([_truth(design.dgp, K, what) for K in Ks]))
        Kbar = int(round(float(np.mean(Ks))))
        for m in methods:
            try:
                if m == "ours":
                    fn = {("winner", "sp"): inference.ci_winner_sp, ("seller", "sp"): inference.ci_seller_sp,
                          ("winner", "fp"): inference.ci_winner_fp, ("seller", "fp"): inference.ci_seller_fp}
                    ci = fn[(target, design.fmt)](prices, table)
                elif m == "tstat":
                    gaps = tops - (seconds if design.fmt == "sp" else prices)
                    ci = ci_tstat_comparator(gaps, alpha)
                elif m == "bootstrap":
                    bgen = rs.substream(r).substream(1).generator()
                    if design.fmt == "sp":
                        ci = ci_bootstrap_sp(prices, Kbar, alpha, B_boot, bgen)
                    else:
                        ci = ci_bootstrap_fp(tops, Kbar, alpha, B_boot, bgen)
                else:
                    raise ValueError(f"unknown method {m!r}")
            except inference.ConfidenceSetError as exc:
                if exc.segments is None:
                    fails[m] += 1
                    continue
                # a union of intervals is still the confidence set: score membership and total length
                split[m] += 1
                hits[m] += int(any(a <= truth <= b for a, b in exc.segments))
                lens[m] += sum(b - a for a, b in exc.segments)
                continue
            except inference.DegenerateSampleError:
                fails[m] += 1
                continue
            hits[m] += int(ci.lo <= truth <= ci.hi)
            lens[m] += ci.hi - ci.lo
    rows = []
    for m in methods:
        ok = reps - fails[m]
        rows.append({
            "dgp": design.dgp.family, "n": design.n, "K": design.k_label, "format": design.fmt,
            "method": m, "coverage": hits[m] / reps, "length": lens[m] / ok if ok else float("nan"),
            "failures": fails[m], "non_interval": split[m],
        })
    return ExperimentReport(rows, reps, rs.seed, "coverage")


def run_test_experiment(design: Design, reps: int = 200, rng=None, alpha: float = 0.05,
                        draws: int = inference.NULL_DRAWS) -> ExperimentReport:
    """Rejection rate of the regularity test on simulated transaction prices."""
    rs = rng if isinstance(rng, RngStream) else RngStream(0 if rng is None else int(rng))
    if reps <= 0:
        return ExperimentReport([], 0, rs.seed, "rejection")
    weight = inference.uniform_weight()
    null = inference.null_distribution(-1.0, design.n, weight, design.fmt, draws)
    lcv = float(np.quantile(null, 1.0 - alpha))
    Z = np.empty((reps, design.n - 2))
    for r in range(reps):
        _, prices, _, _ = simulate_dataset(design, rs.substream(r).generator())
        Z[r] = inference.normalized_point(prices)[0]
    stat = inference.log_statistic(Z, -1.0, weight, design.fmt)
    rate = float(np.mean(stat > lcv))
    row = {"dgp": design.dgp.family, "n": design.n, "K": design.k_label, "format": design.fmt,
           "rejection": rate, "se": float(np.sqrt(max(rate * (1 - rate), 1e-12) / reps))}
    return ExperimentReport([row], reps, rs.seed, "rejection")
