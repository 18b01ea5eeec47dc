import math
from statistics import NormalDist

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special, stats

from calvalid.errors import NonFinite, TooFewSamples, TooManySamples, ZeroVariance
from calvalid.gof import (
    GofTest,
    TestReport,
    dap_test,
    kolmogorov_sf,
    ks_statistic,
    ks_test,
    skewness_z,
    sw_test,
    validate,
)

# certified Shapiro-Wilk triples (R shapiro.test / scipy.stats.shapiro)
SW_X1 = [0.11, 7.87, 4.61, 10.14, 7.95, 3.14, 0.46, 4.43, 0.21, 4.75, 0.71, 1.52, 3.24, 0.93,
         0.42, 4.97, 9.53, 4.55, 0.47, 6.66]
SW_X2 = [1.36, 1.14, 2.92, 2.55, 1.46, 1.06, 5.27, -1.11, 3.48, 1.10, 0.88, -0.51, 1.46, 0.52,
         6.20, 1.69, 0.08, 3.67, 2.81, 3.49]


def quantile_sample(n):
    return np.array([NormalDist().inv_cdf((i - 0.5) / n) for i in range(1, n + 1)])


class TestKolmogorov:
    @pytest.mark.parametrize("lam", [0.2, 0.5, 0.8, 0.99, 1.0, 1.2, 1.36, 2.0, 3.0])
    def test_matches_scipy(self, lam):
        assert kolmogorov_sf(lam) == pytest.approx(special.kolmogorov(lam), abs=1e-10)

    def test_edges(self):
        assert kolmogorov_sf(0.0) == 1.0
        assert kolmogorov_sf(10.0) == pytest.approx(0.0, abs=1e-12)


class TestKS:
    def test_quantile_sample(self):
        n = 200
        r = ks_test(quantile_sample(n))
        assert r.statistic == pytest.approx(0.5 / n, rel=1e-6)
        assert r.p_value == pytest.approx(1.0, abs=1e-9)
        assert not r.reject_h0

    def test_statistic_matches_scipy(self, rng):
        x = rng.normal(0.1, 1.1, 300)
        assert ks_statistic(x) == pytest.approx(stats.kstest(x, "norm").statistic, abs=1e-12)

    def test_p_value_formula(self, rng):
        x = rng.normal(size=100)
        r = ks_test(x)
        lam = (10 + 0.12 + 0.011) * r.statistic
        assert r.p_value == pytest.approx(special.kolmogorov(lam), abs=1e-10)

    def test_rejects_shifted(self, rng):
        assert ks_test(rng.normal(0.5, 1.0, 500)).reject_h0

    def test_variance_inflation_monotone(self):
        q = quantile_sample(300)
        ps = [ks_test(c * q).p_value for c in (1.0, 1.5, 2.0, 3.0)]
        assert all(a >= b for a, b in zip(ps, ps[1:]))

    @given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=8, max_size=60))
    @settings(max_examples=60)
    def test_properties(self, xs):
        x = np.array(xs)
        r = ks_test(x)
        assert 0.5 / x.size - 1e-12 <= r.statistic <= 1.0
        assert 0.0 <= r.p_value <= 1.0
        assert ks_statistic(x[::-1]) == ks_statistic(np.sort(x))
        assert r.reject_h0 == (r.p_value < r.alpha)

    def test_errors(self):
        with pytest.raises(TooFewSamples):
            ks_test(np.zeros(7))
        with pytest.raises(NonFinite):
            ks_test([0.0] * 9 + [np.inf])


class TestDAP:
    def test_matches_scipy(self, rng):
        for n in (20, 50, 500):
            x = rng.standard_t(5, n)
            r = dap_test(x)
            ref = stats.normaltest(x)
            assert r.statistic == pytest.approx(ref.statistic, rel=1e-9)
            assert r.p_value == pytest.approx(ref.pvalue, abs=1e-12)

    def test_symmetric_sample_has_zero_skew(self, rng):
        # integer values keep every moment sum exact
        h = rng.integers(-1000, 1000, size=50).astype(float)
        assert skewness_z(np.concatenate([h, -h])) == 0.0

    def test_heavy_tail_power(self):
        rejected = sum(dap_test(np.random.default_rng(s).standard_t(3, 500)).reject_h0
                       for s in range(50))
        assert rejected >= 45

    def test_errors(self):
        with pytest.raises(TooFewSamples):
            dap_test(np.arange(19.0))
        with pytest.raises(ZeroVariance):
            dap_test(np.ones(30))


class TestSW:
    @pytest.mark.parametrize("x, w, p", [(SW_X1, 0.90047, 0.042090), (SW_X2, 0.95903, 0.52460)])
    def test_certified_values(self, x, w, p):
        r = sw_test(x)
        assert r.statistic == pytest.approx(w, abs=1e-5)
        assert r.p_value == pytest.approx(p, abs=1e-4)

    @pytest.mark.parametrize("n", [8, 11, 12, 30, 200, 5000])
    def test_matches_scipy(self, n, rng):
        x = rng.gamma(4.0, size=n)
        r = sw_test(x)
        ref = stats.shapiro(x)
        assert r.statistic == pytest.approx(ref.statistic, abs=1e-6)
        assert r.p_value == pytest.approx(ref.pvalue, abs=1e-5)

    def test_jitter_guard(self):
        with pytest.raises(ZeroVariance):
            sw_test(np.full(20, 3.0))
        r = sw_test(3.0 + 1e-9 * np.arange(20))
        assert 0.9 < r.statistic <= 1.0

    def test_range(self):
        with pytest.raises(TooFewSamples):
            sw_test(np.arange(7.0))
        with pytest.raises(TooManySamples):
            sw_test(np.arange(5001.0))


class TestValidate:
    def test_single_ks(self):
        reports = validate(quantile_sample(100), tests={"ks"})
        assert [r.test for r in reports] == [GofTest.KS]
        assert not reports[0].reject_h0

    def test_order_and_shared_n(self, rng):
        reports = validate(rng.normal(size=300), tests=["sw", "dap", "KS"])
        assert [r.test for r in reports] == [GofTest.KS, GofTest.DAP, GofTest.SW]
        assert {r.n for r in reports} == {300}

    def test_quantile_data_accepted_by_all(self):
        assert not any(r.reject_h0 for r in validate(quantile_sample(500)))

    def test_unknown_test(self):
        with pytest.raises(ValueError):
            validate(np.zeros(10), tests=["ad"])

    def test_empty(self):
        with pytest.raises(TooFewSamples):
            validate([])

    def test_report_round_trip(self, rng):
        r = validate(rng.normal(size=50))[2]
        assert TestReport.from_dict(r.to_dict()) == r

    def test_deterministic(self, rng):
        x = rng.normal(size=400)
        assert validate(x) == validate(x.copy())

    def test_alpha_threshold(self):
        x = quantile_sample(100) * 1.3
        p = ks_test(x).p_value
        assert ks_test(x, alpha=p).reject_h0 is False
        assert ks_test(x, alpha=math.nextafter(p, 1)).reject_h0 is True
