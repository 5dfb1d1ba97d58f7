"""Second-price limit densities against independent numerical and simulation oracles."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from evtauction import density_sp as D
from evtauction.evt_core import augment, revenue_mean, sample_limit_prices, self_normalize, winner_gap_mean

XIS = [-1.0, -0.5, 0.0, 0.25, 0.5]


def _g(s, xi):
    # density of H_xi(E1 + E2) at s
    if xi == 0.0:
        return math.exp(-2 * s - math.exp(-s))
    b = 1 + xi * s
    if b <= 0:
        return 0.0
    t = b ** (-1 / xi)
    return t ** (2 + xi) * math.exp(-t)


def brute_force_density(z, xi):
    """n! * int int R^N prod g(m + R w_i) dm dR with generic 2-D quadrature."""
    w = augment(z)
    n, N = w.size, w.size - 2
    f = lambda m, R: R**N * np.prod([_g(m + R * wi, xi) for wi in w])
    v, _ = integrate.dblquad(f, 0, 60, -30, 30, epsabs=1e-14, epsrel=1e-10)
    return math.factorial(n) * v


class TestNormalization:
    @pytest.mark.parametrize("xi", XIS)
    def test_one_free_coordinate(self, xi):
        v, _ = integrate.quad(lambda z: D.density_znorm([z], xi).value, 0, 1, limit=200)
        assert v == pytest.approx(1.0, abs=1e-3)

    @pytest.mark.parametrize("xi", XIS)
    def test_two_free_coordinates(self, xi):
        v, _ = integrate.dblquad(lambda z2, z1: D.density_znorm([z1, z2], xi).value,
                                 0, 1, lambda z1: z1, 1, epsabs=1e-6, epsrel=1e-6)
        assert v == pytest.approx(1.0, abs=1e-3)


class TestAgainstBruteForce:
    @pytest.mark.parametrize("xi", [-0.7, 0.0, 0.3])
    def test_n4(self, xi):
        z = self_normalize(sample_limit_prices(xi, 4, rng=int(10 * (xi + 1))))
        assert D.density_znorm(z, xi).value == pytest.approx(brute_force_density(z, xi), rel=1e-6)

    def test_step_halving(self):
        rng = np.random.default_rng(7)
        xis = np.linspace(-1, 0.5, 16)
        for n in (3, 10, 40):
            P = sample_limit_prices(-0.2, n, rng=rng, size=5)
            Z = self_normalize(P)
            R = np.ptp(P, axis=1)
            y_mu = winner_gap_mean(-0.2) / R
            y_pi = (revenue_mean(-0.2) - P.min(1)) / R
            for fn in (lambda s: D.log_density_batch(Z, xis, 0, s),
                       lambda s: D.log_density_batch(Z, xis, 1, s),
                       lambda s: D.log_ymu_batch(y_mu, Z, xis, s),
                       lambda s: D.log_ypi_batch(y_pi, Z, xis, s)):
                a, b = fn(D.STEP), fn(D.STEP / 2)
                ok = np.isfinite(b)
                assert np.array_equal(np.isfinite(a), ok)
                assert np.max(np.abs(a[ok] - b[ok])) < 1e-8

    def test_batch_matches_point(self):
        P = sample_limit_prices(0.1, 6, rng=3, size=4)
        Z = self_normalize(P)
        xis = [-0.8, 0.0, 0.4]
        L = D.log_density_batch(Z, xis)
        for i in range(4):
            for j, xi in enumerate(xis):
                assert L[i, j] == pytest.approx(D.log_density_znorm(Z[i], xi), abs=1e-12)


class TestJointDensities:
    @pytest.mark.parametrize("xi", XIS)
    def test_marginalize_to_f(self, xi):
        z = self_normalize(sample_limit_prices(xi, 5, rng=int(100 * (xi + 2))))
        f = D.density_znorm(z, xi).value
        vm, _ = integrate.quad(lambda y: D.joint_density_ymu(y, z, xi), 0, np.inf, limit=500)
        vp, _ = integrate.quad(lambda y: D.joint_density_ypi(y, z, xi), -np.inf, np.inf, limit=500)
        assert vm == pytest.approx(f, rel=1e-8)
        assert vp == pytest.approx(f, rel=1e-8)

    def test_ymu_requires_positive_y(self):
        with pytest.raises(ValueError):
            D.joint_density_ymu(0.0, [0.5], 0.1)


class TestSimulationOracle:
    """Histogram of simulated normalized limit samples (n = 3) versus the density."""

    M = 400_000
    EDGES = np.linspace(0, 1, 11)

    def _draw(self, xi):
        P = sample_limit_prices(xi, 3, rng=np.random.default_rng(int(1000 * (xi + 2))), size=self.M)
        return self_normalize(P)[:, 0], np.ptp(P, axis=1)

    @pytest.mark.parametrize("xi", [-0.9, 0.0, 0.4])
    def test_histogram(self, xi):
        z, _ = self._draw(xi)
        counts, _ = np.histogram(z, self.EDGES)
        for lo, hi, c in zip(self.EDGES[:-1], self.EDGES[1:], counts):
            p, _ = integrate.quad(lambda t: D.density_znorm([t], xi).value, lo, hi)
            se = math.sqrt(p * (1 - p) / self.M)
            assert abs(c / self.M - p) < 4.5 * se

    @pytest.mark.parametrize("xi", [-0.9, 0.0, 0.4])
    def test_kappa_is_conditional_mean_range(self, xi):
        # int_bin kappa f = E[R 1{Z in bin}]
        z, R = self._draw(xi)
        for lo, hi in ((0.0, 0.3), (0.3, 0.7), (0.7, 1.0)):
            x = R * ((z >= lo) & (z < hi))
            k, _ = integrate.quad(lambda t: D.kappa_density([t], xi), lo, hi)
            assert abs(x.mean() - k) < 4.5 * x.std() / math.sqrt(self.M)


simplex = st.lists(st.floats(0, 1), min_size=1, max_size=8).map(sorted)


@settings(max_examples=150, deadline=None)
@given(simplex, st.floats(-1, 0.5))
def test_density_positive_and_finite(z, xi):
    ev = D.density_znorm(z, xi)
    assert ev.value >= 0 and np.isfinite(ev.log_value) or ev.value == 0.0
    assert D.kappa_density(z, xi) >= 0


def test_outside_simplex_is_zero():
    assert D.density_znorm([0.6, 0.4], 0.1).value == 0.0
    assert D.kappa_density([1.2], 0.1) == 0.0
    assert D.joint_density_ypi(0.5, [-0.1], 0.1) == 0.0
