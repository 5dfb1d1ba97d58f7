"""Valuation laws, auction pricing, comparators and experiment plumbing."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from evtauction import mc

SPECS = [mc.DGPSpec(f) for f in mc.FAMILIES]


class TestDGP:
    @pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.family)
    def test_samples_follow_cdf(self, spec):
        v = mc.dgp_sample(spec, 5, rng=1, size=4000).ravel()
        assert stats.kstest(v, spec.cdf).pvalue > 1e-3
        assert v.min() >= spec.lower

    @pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.family)
    def test_cdf_sf_complement(self, spec):
        v = np.linspace(spec.lower - 1, spec.lower + 6, 200)
        assert np.allclose(spec.cdf(v) + spec.sf(v), 1.0, atol=1e-14)
        assert np.all(np.diff(spec.cdf(v)) >= 0)

    def test_pareto_tail(self):
        spec = mc.DGPSpec("pareto_025")
        assert spec.sf(2.0) == pytest.approx(2.0**-4)

    def test_aliases_and_errors(self):
        assert mc.DGPSpec("u03").family == "uniform_0_3"
        assert mc.DGPSpec("pareto", 0.4).implied_xi == 0.4
        with pytest.raises(ValueError):
            mc.DGPSpec("lognormal")
        with pytest.raises(ValueError):
            mc.DGPSpec("abs_normal", 0.3)
        with pytest.raises(ValueError):
            mc.dgp_sample(SPECS[0], 1)


class TestAuctions:
    def test_second_price(self):
        assert mc.simulate_auction_sp([1.0, 5.0, 3.0]) == 3.0
        assert np.array_equal(mc.simulate_auction_sp([[1, 2, 3], [9, 8, 7]]), [2, 8])

    def test_first_price_uniform(self):
        # bid = v - v/K when values are uniform from 0
        assert mc.simulate_auction_fp([1.0, 2.4, 0.3], mc.DGPSpec("uniform_0_3")) == pytest.approx(1.6)

    @pytest.mark.parametrize("family,top", [("abs_normal", 1.7), ("abs_t20", 2.5), ("pareto_025", 3.0)])
    def test_first_price_shading_quadrature(self, family, top):
        spec = mc.DGPSpec(family)
        K = 8
        ref, _ = integrate.quad(lambda u: (spec.cdf(u) / spec.cdf(top)) ** (K - 1), spec.lower, top,
                                epsabs=1e-13, epsrel=1e-12)
        v = np.full(K, spec.lower + 1e-3)
        v[0] = top
        assert mc.simulate_auction_fp(v, spec) == pytest.approx(top - ref, rel=1e-10, abs=1e-12)

    @pytest.mark.parametrize("family", ["abs_normal", "uniform_0_3"])
    def test_revenue_equivalence(self, family):
        spec = mc.DGPSpec(family)
        v = mc.dgp_sample(spec, 6, rng=3, size=20000)
        sp = mc.simulate_auction_sp(v)
        fp = mc.simulate_auction_fp(v, spec)
        d = sp - fp
        assert abs(d.mean()) < 4 * d.std() / math.sqrt(d.size)
        assert np.all(fp <= v.max(axis=1))


class TestTruth:
    @pytest.mark.parametrize("K", [2, 10, 100, 1000])
    def test_uniform_mu_brute_force(self, K):
        spec = mc.DGPSpec("uniform_0_3")
        ref, _ = integrate.quad(lambda u: K * (u / 3) ** (K - 1) * (1 - u / 3), 0, 3,
                                epsabs=1e-15, epsrel=1e-13, limit=200)
        assert mc.true_mu(spec, K) == 3 / (K + 1)
        assert abs(mc.true_mu(spec, K) - ref) < 1e-8

    def test_uniform_pi(self):
        for K in (2, 10, 100):
            assert mc.true_pi(mc.DGPSpec("uniform_0_3"), K) == pytest.approx(3 * (K - 1) / (K + 1), rel=1e-10)

    @pytest.mark.parametrize("spec", SPECS[1:], ids=lambda s: s.family)
    def test_truth_by_simulation(self, spec):
        v = np.sort(mc.dgp_sample(spec, 10, rng=4, size=200_000), axis=1)
        gap, second = v[:, -1] - v[:, -2], v[:, -2]
        for est, truth in ((gap, mc.true_mu(spec, 10)), (second, mc.true_pi(spec, 10))):
            assert abs(est.mean() - truth) < 4 * est.std() / math.sqrt(est.size)

    def test_divergent(self):
        with pytest.raises(mc.DivergentMomentError):
            mc.true_mu(mc.DGPSpec("pareto_025", 1.0), 10)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, 1 - 1e-6), st.integers(2, 120))
def test_cdf_inversion_round_trip(F, K):
    Fp = mc.price_cdf_from_valuation(F, K)
    assert abs(mc.valuation_cdf_from_price(Fp, K) - F) < 1e-10 or Fp in (0.0, 1.0)


class TestComparators:
    def test_inversion_edges(self):
        assert mc.valuation_cdf_from_price(0.0, 5) == 0.0
        assert mc.valuation_cdf_from_price(1.0, 5) == 1.0

    def test_plugin_consistent(self):
        spec = mc.DGPSpec("uniform_0_3")
        v = mc.dgp_sample(spec, 10, rng=5, size=20000)
        assert mc.mu_from_prices(mc.simulate_auction_sp(v), 10) == pytest.approx(3 / 11, rel=0.03)
        assert mc.mu_from_top_valuations(v.max(axis=1), 10) == pytest.approx(3 / 11, rel=0.03)

    def test_bootstrap_reproducible(self):
        x = mc.dgp_sample(mc.DGPSpec("abs_normal"), 10, rng=6, size=50).max(axis=1)
        a = mc.ci_bootstrap_fp(x, 10, B_boot=200, rng=1)
        b = mc.ci_bootstrap_fp(x, 10, B_boot=200, rng=1)
        assert (a.lo, a.hi) == (b.lo, b.hi) and a.lo < a.y_lo < a.hi
        c = mc.ci_bootstrap_sp(np.sort(x)[:40], 10, B_boot=100, rng=2)
        assert c.lo <= c.hi

    def test_tstat(self):
        r = mc.ci_tstat_comparator([1.0, 2.0, 3.0])
        h = stats.norm.ppf(0.975) / math.sqrt(3)
        assert (r.lo, r.hi) == pytest.approx((2 - h, 2 + h))
        with pytest.raises(ValueError):
            mc.ci_tstat_comparator([1.0])


class TestExperiments:
    def test_design_random_K(self):
        d = mc.Design(mc.DGPSpec("u03"), 50, (90, 110))
        K = d.draw_K(np.random.default_rng(0))
        assert K.min() >= 90 and K.max() <= 110 and d.k_label == "U{90..110}"

    def test_simulate_dataset(self):
        d = mc.Design(mc.DGPSpec("absn"), 12, 20, "fp")
        Ks, p, top, sec = mc.simulate_dataset(d, np.random.default_rng(1))
        assert np.all(Ks == 20) and np.all(p <= top) and np.all(sec <= top)

    def test_coverage_rows_and_reports(self):
        d = mc.Design(mc.DGPSpec("uniform_0_3"), 10, 10)
        rep = mc.run_coverage_experiment(d, ("tstat", "bootstrap"), reps=20, rng=3, B_boot=100)
        assert [r["method"] for r in rep.rows] == ["tstat", "bootstrap"]
        assert all(0 <= r["coverage"] <= 1 and r["length"] > 0 for r in rep.rows)
        csv = rep.to_csv().splitlines()
        assert csv[0] == "dgp,n,K,format,method,coverage,length,failures,non_interval" and len(csv) == 3
        assert rep.to_markdown().count("\n") == 4
        again = mc.run_coverage_experiment(d, ("tstat",), reps=20, rng=3)
        assert again.rows[0]["coverage"] == rep.rows[0]["coverage"]

    def test_non_interval_sets_scored_as_unions(self, monkeypatch):
        from evtauction import inference

        truth = mc.true_mu(mc.DGPSpec("uniform_0_3"), 10)
        outcomes = iter([
            [(0.0, truth / 2), (truth * 0.9, truth * 1.1)],  # truth in the second piece
            [(0.0, truth / 2), (truth * 2, truth * 3)],      # truth in the gap
            None,                                            # empty set
        ])

        def fake_ci(prices, table):
            segs = next(outcomes)
            raise inference.ConfidenceSetError("fake", segs)

        monkeypatch.setattr(inference, "ci_winner_sp", fake_ci)
        d = mc.Design(mc.DGPSpec("uniform_0_3"), 10, 10)
        row = mc.run_coverage_experiment(d, ("ours",), reps=3, rng=0).rows[0]
        assert row["coverage"] == pytest.approx(1 / 3)
        assert row["non_interval"] == 2 and row["failures"] == 1
        assert row["length"] == pytest.approx((truth / 2 + 0.2 * truth + truth / 2 + truth) / 2)

    def test_empty_and_unknown(self):
        d = mc.Design(mc.DGPSpec("uniform_0_3"), 10, 10)
        assert mc.run_coverage_experiment(d, reps=0).rows == []
        with pytest.raises(ValueError):
            mc.run_coverage_experiment(d, ("magic",), reps=1)

    def test_rejection_experiment(self):
        d = mc.Design(mc.DGPSpec("pareto_025"), 20, 100)
        rep = mc.run_test_experiment(d, reps=40, rng=1, draws=5000)
        row = rep.rows[0]
        assert rep.kind == "rejection" and 0 <= row["rejection"] <= 1
