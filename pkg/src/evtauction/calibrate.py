"""Lagrange-weight calibration for the minimum-length confidence sets.

For a price sample with normalized point z, the confidence set for the
target Y is

    U(z) = {y : sum_k W_k kappa f(z | xi_k) <= sum_k lambda_k f(y, z | xi_k)},

with W uniform on the grid. The weights lambda are tuned so that coverage
under every grid value of xi is at least 1 - alpha. Simulated samples are
drawn once and reused in every iteration (common random numbers), so the
densities can be precomputed and each iteration is a matrix-vector product.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gamma, logsumexp

from . import density_fp, density_sp
from .evt_core import XI_MAX, XI_MIN, RngStream, revenue_mean, sample_limit_prices, self_normalize

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
TARGETS = ("winner_sp", "seller_sp", "winner_fp", "seller_fp")
# calibration is declared failed if in-sample coverage falls below 1 - alpha - this
COVERAGE_SLACK = 0.02


class CalibrationError(RuntimeError):
    """Coverage constraint not met after the final iteration."""

    def __init__(self, message, coverage=None, table=None):
        super().__init__(message)
        self.coverage = coverage
        self.table = table


class TableError(ValueError):
    """A weight table failed validation on load or use."""


@dataclass(frozen=True)
class CalibrationConfig:
    M: int = 50
    B: int = 10_000
    S: int = 2000
    epsilon: float = 0.05
    seed: int = 20240225

    def __post_init__(self):
        if self.M < 2 or self.B < 1 or self.S < 0 or self.epsilon <= 0:
            raise ValueError("invalid calibration configuration")

    def grid(self) -> np.ndarray:
        # M equally spaced points from inf(Xi), the last spacing ending at sup(Xi)
        return XI_MIN + (XI_MAX - XI_MIN) * np.arange(self.M) / self.M


# ---------------------------------------------------------------------------
# target families: how to draw limit samples and evaluate the two sides of the
# set rule for each (quantity, auction format)


@dataclass(frozen=True)
class TargetFamily:
    target: str
    c_mu: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValueError(f"unknown target {self.target!r}")

    @property
    def quantity(self) -> str:
        return self.target.split("_")[0]

    @property
    def fmt(self) -> str:
        return self.target.split("_")[1]

    @property
    def _dens(self):
        return density_sp if self.fmt == "sp" else density_fp

    def draw(self, xi: float, n: int, B: int, rng) -> np.ndarray:
        if self.fmt == "sp":
            return sample_limit_prices(xi, n, "second", rng=rng, size=B)
        return density_fp.sample_fp_limit_prices(xi, n, rng=rng, size=B)

    def c_mu_at(self, xi: float, grid=None) -> float:
        if self.c_mu is not None and grid is not None:
            hit = np.flatnonzero(np.asarray(grid) == xi)
            if hit.size:
                return float(self.c_mu[hit[0]])
        return float(gamma(1.0 - xi))

    def true_value(self, xi: float, prices: np.ndarray, grid=None) -> np.ndarray:
        """Y for each sample: c / range (winner) or (pi - min) / range (seller)."""
        lo = prices.min(axis=-1)
        rng_ = prices.max(axis=-1) - lo
        if self.quantity == "winner":
            return self.c_mu_at(xi, grid) / rng_
        return (revenue_mean(xi) - lo) / rng_

    def log_lhs(self, Z: np.ndarray, wgrid: np.ndarray) -> np.ndarray:
        """log of the W-average of kappa f over the grid, one value per row of Z."""
        lk = self._dens.log_density_batch(Z, wgrid, 1)
        return logsumexp(lk, axis=1) - np.log(wgrid.size)

    def log_joint(self, ys, Z: np.ndarray, xis: np.ndarray, c_mu=None) -> np.ndarray:
        """(rows, len(xis)) matrix of log f(y_b, z_b | xi_k)."""
        if self.quantity == "winner":
            if self.fmt == "sp":
                return density_sp.log_ymu_batch(ys, Z, xis)
            return density_fp.log_ymu_batch(ys, Z, xis, c_mu=c_mu)
        return self._dens.log_ypi_batch(ys, Z, xis)


# ---------------------------------------------------------------------------
# weight tables


@dataclass(frozen=True, eq=False)
class WeightTable:
    target: str
    n: int
    alpha: float
    grid: np.ndarray
    weights: np.ndarray
    M: int
    B: int
    S: int
    epsilon: float
    seed: int
    c_mu: np.ndarray | None = None
    coverage: np.ndarray | None = None

    def __post_init__(self):
        if self.target not in TARGETS:
            raise TableError(f"unknown target {self.target!r}")
        g = np.asarray(self.grid, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if g.shape != w.shape or g.ndim != 1:
            raise TableError("grid and weights must be 1-D of equal length")
        if np.any(np.diff(g) <= 0) or g[0] < XI_MIN - 1e-12 or g[-1] > XI_MAX + 1e-12:
            raise TableError("grid must be strictly increasing inside [-1, 0.5]")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise TableError("weights must be finite and nonnegative")

    @property
    def family(self) -> TargetFamily:
        return TargetFamily(self.target, self.c_mu)

    def weight_at(self, xi):
        """Piecewise-linear interpolation of the weights over the parameter space."""
        return np.interp(xi, self.grid, self.weights)

    def support(self):
        """Grid points and weights with positive mass."""
        keep = self.weights > 0
        return self.grid[keep], self.weights[keep]

    def c_mu_support(self):
        if self.c_mu is None:
            return None
        return np.asarray(self.c_mu)[self.weights > 0]

    def payload(self) -> dict:
        d = {
            "format_version": FORMAT_VERSION,
            "target": self.target,
            "n": int(self.n),
            "alpha": float(self.alpha).hex(),
            "M": int(self.M),
            "B": int(self.B),
            "S": int(self.S),
            "epsilon": float(self.epsilon).hex(),
            "seed": int(self.seed),
            "grid": [float(x).hex() for x in self.grid],
            "weights": [float(x).hex() for x in self.weights],
            "c_mu": None if self.c_mu is None else [float(x).hex() for x in self.c_mu],
            "coverage": None if self.coverage is None else [float(x).hex() for x in self.coverage],
        }
        return d

    @property
    def table_id(self) -> str:
        return _checksum(self.payload())[:12]


def _canonical(d: dict) -> str:
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


def _checksum(d: dict) -> str:
    return hashlib.sha256(_canonical(d).encode()).hexdigest()


def save_table(table: WeightTable, path) -> Path:
    """Write a table as JSON; floats are stored as hex strings so reloads are exact."""
    d = table.payload()
    d["checksum"] = _checksum(table.payload())
    path = Path(path)
    path.write_text(json.dumps(d, sort_keys=True, indent=1) + "\n")
    return path


def _floats(v):
    return None if v is None else np.array([float.fromhex(x) for x in v])


def load_table(path, target: str | None = None, n: int | None = None) -> WeightTable:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise TableError(f"cannot read weight table {path}: {exc}") from exc
    if d.get("format_version") != FORMAT_VERSION:
        raise TableError(f"weight table format {d.get('format_version')!r}, expected {FORMAT_VERSION}")
    stored = d.pop("checksum", None)
    if stored != _checksum(d):
        raise TableError(f"checksum mismatch in {path}")
    table = WeightTable(
        target=d["target"], n=int(d["n"]), alpha=float.fromhex(d["alpha"]),
        grid=_floats(d["grid"]), weights=_floats(d["weights"]),
        M=int(d["M"]), B=int(d["B"]), S=int(d["S"]), epsilon=float.fromhex(d["epsilon"]),
        seed=int(d["seed"]), c_mu=_floats(d["c_mu"]), coverage=_floats(d["coverage"]),
    )
    if target is not None and table.target != target:
        raise TableError(f"table is for target {table.target}, requested {target}")
    if n is not None and table.n != n:
        raise TableError(f"table is for n={table.n}, requested n={n}")
    return table


def table_filename(target: str, n: int, alpha: float = 0.05) -> str:
    return f"{target}_n{n}_a{round(alpha * 1000):03d}.json"


def shipped_table_dir() -> Path:
    return Path(__file__).parent / "data" / "weights"


def find_table(target: str, n: int, alpha: float = 0.05, directory=None) -> WeightTable:
    """Load the table for (target, n, alpha) from ``directory`` or the shipped set."""
    d = Path(directory) if directory is not None else shipped_table_dir()
    p = d / table_filename(target, n, alpha)
    if not p.exists():
        raise FileNotFoundError(f"no weight table for {target}, n={n}, alpha={alpha} in {d}")
    return load_table(p, target=target, n=n)


# ---------------------------------------------------------------------------
# the iteration


@dataclass
class CoverageProblem:
    """Precomputed pieces of the coverage indicator for simulated samples.

    Row b is covered iff G[b] @ lam >= thr[b]; both sides are scaled by the
    row maximum of the joint densities to stay in floating-point range.
    """

    G: np.ndarray
    thr: np.ndarray
    block: np.ndarray  # grid index that generated each row

    def coverage(self, lam: np.ndarray) -> np.ndarray:
        hit = (self.G @ lam) >= self.thr
        M = int(self.block.max()) + 1
        return np.bincount(self.block, weights=hit, minlength=M) / np.bincount(self.block, minlength=M)


def _problem(log_lhs: np.ndarray, log_f: np.ndarray, block: np.ndarray) -> CoverageProblem:
    top = np.max(log_f, axis=1)
    ok = np.isfinite(top)
    safe = np.where(ok, top, 0.0)
    with np.errstate(under="ignore"):
        G = np.exp(log_f - safe[:, None])
        thr = np.exp(np.minimum(log_lhs - safe, 700.0))
    G[~ok] = 0.0
    thr[~ok] = np.inf
    return CoverageProblem(G, thr, block)


def simulate_problem(family: TargetFamily, n: int, cfg: CalibrationConfig, rng: RngStream,
                     lhs_cache: dict | None = None) -> CoverageProblem:
    """Steps 2-3 setup: draw B samples per grid point and evaluate the densities."""
    grid = cfg.grid()
    Zs, ys, blocks = [], [], []
    for m, xi in enumerate(grid):
        gen = rng.substream(m).generator()
        P = family.draw(xi, n, cfg.B, gen)
        Zs.append(self_normalize(P))
        ys.append(family.true_value(xi, P, grid))
        blocks.append(np.full(cfg.B, m))
    Z = np.concatenate(Zs)
    y = np.concatenate(ys)
    block = np.concatenate(blocks)
    key = (family.fmt, n, cfg, rng)
    if lhs_cache is not None and key in lhs_cache:
        llhs = lhs_cache[key]
    else:
        log.info("evaluating kappa f for %d samples", Z.shape[0])
        llhs = family.log_lhs(Z, grid)
        if lhs_cache is not None:
            lhs_cache[key] = llhs
    log.info("evaluating joint densities for %s", family.target)
    lf = family.log_joint(y, Z, grid, c_mu=family.c_mu)
    return _problem(llhs, lf, block)


def iterate_weights(problem: CoverageProblem, alpha: float, cfg: CalibrationConfig):
    """Steps 4-5: lambda <- max(0, lambda + eps * ((1 - P) - alpha)), S times."""
    lam = np.full(cfg.M, 1.0 / cfg.M)
    for _ in range(cfg.S):
        P = problem.coverage(lam)
        lam = np.maximum(lam + cfg.epsilon * ((1.0 - P) - alpha), 0.0)
    return lam, problem.coverage(lam)


def c_mu_grid(grid, rng: RngStream, draws: int = density_fp.C_MU_DRAWS) -> np.ndarray:
    out = np.empty(len(grid))
    for m, xi in enumerate(grid):
        out[m], _ = density_fp.c_mu_monte_carlo(float(xi), draws, rng=rng.substream(m).generator())
    return out


def calibrate_weights(target: str, n: int, alpha: float = 0.05, cfg: CalibrationConfig | None = None,
                      rng: RngStream | None = None, strict: bool = True, lhs_cache: dict | None = None,
                      c_mu_draws: int = density_fp.C_MU_DRAWS) -> WeightTable:
    """Run the weight calibration for one target and sample size.

    With ``strict`` a :class:`CalibrationError` carrying the per-point
    coverage (and the table) is raised when any grid point ends below
    1 - alpha - 0.02.
    """
    if n < 3:
        raise ValueError("n must be at least 3")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    cfg = cfg or CalibrationConfig()
    rng = rng or RngStream(cfg.seed)
    grid = cfg.grid()
    c_mu = None
    if target == "winner_fp":
        log.info("Monte Carlo winner constants, %d draws per grid point", c_mu_draws)
        c_mu = c_mu_grid(grid, RngStream(rng.seed, 7_777_777), c_mu_draws)
    family = TargetFamily(target, c_mu)
    problem = simulate_problem(family, n, cfg, rng, lhs_cache)
    lam, cov = iterate_weights(problem, alpha, cfg)
    table = WeightTable(target, n, alpha, grid, lam, cfg.M, cfg.B, cfg.S, cfg.epsilon, rng.seed,
                        c_mu=c_mu, coverage=cov)
    bad = cov < 1.0 - alpha - COVERAGE_SLACK
    if strict and np.any(bad):
        rows = ", ".join(f"xi={g:+.3f}: {c:.3f}" for g, c in zip(grid[bad], cov[bad]))
        raise CalibrationError(f"coverage below {1 - alpha - COVERAGE_SLACK:.3f} at {rows}", cov, table)
    return table


def coverage_estimate(table: WeightTable, xi: float, B: int = 10_000, rng=None) -> float:
    """Fraction of B fresh limit samples at xi whose target lies in the confidence set.

    Membership is checked directly, y in U(z) iff LHS(z) <= RHS(y, z), which
    equals the scan-and-bisect rule whenever the set is an interval.
    """
    from .evt_core import as_generator

    fam = table.family
    gen = as_generator(rng)
    P = fam.draw(xi, table.n, B, gen)
    Z = self_normalize(P)
    y = fam.true_value(xi, P, table.grid)
    llhs = fam.log_lhs(Z, table.grid)
    sg, sw = table.support()
    if sg.size == 0:
        return 0.0
    lf = fam.log_joint(y, Z, sg, c_mu=table.c_mu_support())
    rhs = logsumexp(lf, axis=1, b=sw[None, :])
    return float(np.mean(llhs <= rhs))
