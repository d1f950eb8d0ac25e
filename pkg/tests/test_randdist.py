"""Distribution correctness: densities, moments, quantiles, determinism."""

import math

import numpy as np
import pytest
from scipy import integrate

from enfc.errors import DomainError
from enfc.randdist import (
    GammaParams,
    RngState,
    gamma_cdf,
    gamma_log_pdf,
    gamma_quantile,
    gamma_sample,
    gamma_sample_array,
    poisson_sample,
    poisson_sample_array,
)


class TestGammaParams:
    def test_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            GammaParams(0.0, 1.0)
        with pytest.raises(DomainError):
            GammaParams(1.0, -2.0)
        with pytest.raises(DomainError):
            GammaParams(float("nan"), 1.0)


class TestGammaLogPdf:
    def test_exponential_case(self):
        # shape=1 rate=2 at x=1: pdf = 2 e^-2
        got = gamma_log_pdf(GammaParams(1.0, 2.0), 1.0)
        assert abs(got - (math.log(2.0) - 2.0)) <= 1e-12

    def test_shape_two(self):
        # shape=2 rate=1: pdf = x e^-x, at x=1 log pdf = -1
        assert abs(gamma_log_pdf(GammaParams(2.0, 1.0), 1.0) - (-1.0)) <= 1e-12

    def test_general_point_against_stdlib_formula(self):
        # independent oracle: the same formula evaluated with math.lgamma
        a, lam, x = 3.2, 0.7, 4.5
        oracle = a * math.log(lam) - math.lgamma(a) + (a - 1.0) * math.log(x) - lam * x
        assert abs(gamma_log_pdf(GammaParams(a, lam), x) - oracle) <= 1e-12

    def test_domain(self):
        with pytest.raises(DomainError):
            gamma_log_pdf(GammaParams(1.0, 1.0), 0.0)
        with pytest.raises(DomainError):
            gamma_log_pdf(GammaParams(1.0, 1.0), -3.0)

    def test_integrates_to_one(self):
        for shape in (0.5, 2.0, 10.0):
            params = GammaParams(shape, 1.7)
            lo = gamma_quantile(params, 1e-9)
            hi = gamma_quantile(params, 1.0 - 1e-9)
            val, _ = integrate.quad(
                lambda x: math.exp(gamma_log_pdf(params, x)), lo, hi, limit=400
            )
            assert abs(val - 1.0) <= 1e-6


class TestGammaSampling:
    def test_deterministic_given_seed(self):
        a = gamma_sample(GammaParams(1.0, 1.0), RngState(42))
        b = gamma_sample(GammaParams(1.0, 1.0), RngState(42))
        assert a == b

    def test_moments(self):
        # Gamma(4, 2): mean 2, variance 1
        draws = gamma_sample_array(GammaParams(4.0, 2.0), 10**6, RngState(7))
        assert abs(draws.mean() - 2.0) <= 0.02
        assert abs(draws.var() - 1.0) <= 0.02

    def test_ks_against_analytic_cdf(self):
        # KS critical value at the 0.1% level: sqrt(-ln(alpha/2)/2) / sqrt(n)
        n = 10**5
        crit = math.sqrt(-math.log(0.0005) / 2.0) / math.sqrt(n)
        for shape in (0.5, 1.0, 3.0, 20.0):
            params = GammaParams(shape, 1.0)
            draws = np.sort(gamma_sample_array(params, n, RngState(314 + int(shape * 10))))
            cdf = np.array([gamma_cdf(params, float(x)) for x in draws])
            steps = np.arange(n) / n
            d_stat = max(np.max(cdf - steps), np.max(steps + 1.0 / n - cdf))
            assert d_stat < crit, f"KS D={d_stat:.3e} >= {crit:.3e} at shape {shape}"


class TestGammaQuantile:
    def test_exponential_median(self):
        assert abs(gamma_quantile(GammaParams(1.0, 1.0), 0.5) - math.log(2.0)) <= 1e-10
        assert abs(gamma_quantile(GammaParams(1.0, 2.0), 0.5) - math.log(2.0) / 2.0) <= 1e-10

    def test_value_via_bisection_oracle(self):
        params = GammaParams(5.0, 1.3)
        p = 0.9
        lo, hi = 0.0, 1.0
        while gamma_cdf(params, hi) < p:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if gamma_cdf(params, mid) < p:
                lo = mid
            else:
                hi = mid
        assert abs(gamma_quantile(params, p) - 0.5 * (lo + hi)) <= 1e-9 * hi

    def test_strictly_increasing_in_p(self):
        params = GammaParams(2.3, 0.8)
        qs = [gamma_quantile(params, p) for p in np.linspace(0.001, 0.999, 97)]
        assert all(b > a for a, b in zip(qs, qs[1:]))

    def test_domain(self):
        with pytest.raises(DomainError):
            gamma_quantile(GammaParams(1.0, 1.0), 0.0)
        with pytest.raises(DomainError):
            gamma_quantile(GammaParams(1.0, 1.0), 1.0)


class TestPoisson:
    def test_zero_rate_degenerate(self):
        rng = RngState(5)
        assert all(poisson_sample(0.0, rng) == 0 for _ in range(100))

    def test_moments(self):
        draws = poisson_sample_array(np.full(10**6, 3.5), RngState(11))
        assert abs(draws.mean() - 3.5) <= 0.035
        assert abs(draws.var() - 3.5) <= 0.07

    def test_large_rate_moments(self):
        # exercises the rejection branch of the sampler
        draws = poisson_sample_array(np.full(10**6, 150.0), RngState(13))
        assert abs(draws.mean() - 150.0) <= 1.5
        assert abs(draws.var() - 150.0) <= 3.0

    def test_domain(self):
        rng = RngState(1)
        with pytest.raises(DomainError):
            poisson_sample(-1.0, rng)
        with pytest.raises(DomainError):
            poisson_sample(float("inf"), rng)
        with pytest.raises(DomainError):
            poisson_sample_array(np.array([1.0, -2.0]), rng)


class TestRngState:
    def test_identical_streams_across_interleavings(self):
        params = GammaParams(2.0, 1.0)
        r1, r2 = RngState(99), RngState(99)
        seq1 = [gamma_sample(params, r1), float(poisson_sample(4.0, r1)),
                gamma_sample(params, r1), float(poisson_sample(4.0, r1))]
        seq2 = [gamma_sample(params, r2), float(poisson_sample(4.0, r2)),
                gamma_sample(params, r2), float(poisson_sample(4.0, r2))]
        assert seq1 == seq2

    def test_split_streams_are_deterministic_and_distinct(self):
        kids_a = RngState(123).split(4)
        kids_b = RngState(123).split(4)
        draws_a = [gamma_sample(GammaParams(1.0, 1.0), k) for k in kids_a]
        draws_b = [gamma_sample(GammaParams(1.0, 1.0), k) for k in kids_b]
        assert draws_a == draws_b
        assert len(set(draws_a)) == len(draws_a)

    def test_split_does_not_disturb_parent(self):
        parent = RngState(77)
        parent.split(8)
        after_split = gamma_sample(GammaParams(1.0, 1.0), parent)
        fresh = RngState(77)
        assert after_split == gamma_sample(GammaParams(1.0, 1.0), fresh)
