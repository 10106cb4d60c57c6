import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate

import oracles
from rmstperm.distributions import (
    Exponential,
    LogNormal,
    NoCensoring,
    PiecewiseExponential,
    Uniform,
    Weibull,
)
from rmstperm.errors import DegenerateError, EstimabilityError, InvalidInputError, ModelError
from rmstperm.rmst import (
    RmstEstimate,
    TheoreticalModel,
    TimeWindow,
    estimate_rmst,
    ratio_variance,
    rmst,
    rmst_variance,
    true_rmst,
    true_sigma,
    true_sigma_perm,
)
from rmstperm.survival import Sample, StepFunction, kaplan_meier

HAND = Sample([1, 2, 3], [1, 0, 1])


def model(event, cens=NoCensoring()):
    return TheoreticalModel.from_distributions(event, cens)


class TestRmst:
    def test_flat_curve(self):
        assert rmst(StepFunction.constant(1.0), TimeWindow(10)) == 10.0

    def test_hand_example(self):
        assert_allclose(rmst(kaplan_meier(HAND), 3), 7 / 3, rtol=1e-15)

    def test_inestimable_curve(self):
        with pytest.raises(EstimabilityError):
            rmst(kaplan_meier(Sample([1, 8], [1, 0])), 10)

    def test_window_validation(self):
        with pytest.raises(InvalidInputError):
            TimeWindow(0.0)
        with pytest.raises(InvalidInputError):
            TimeWindow(math.inf)

    def test_large_sample_exponential(self):
        rng = np.random.default_rng(11)
        t = rng.exponential(5.0, 200_000)
        s = Sample(t, np.ones_like(t))
        assert_allclose(rmst(kaplan_meier(s), 10), (1 - math.exp(-2)) / 0.2, rtol=5e-3)

    def test_monotone_in_curve(self):
        low = StepFunction([2.0, 5.0], [0.6, 0.1], 1.0)
        high = StepFunction([2.0, 5.0], [0.7, 0.3], 1.0)
        assert rmst(high, 10) > rmst(low, 10)


class TestVariance:
    def test_hand_example(self):
        assert_allclose(rmst_variance(HAND, 3), 8 / 9, rtol=1e-15)

    def test_no_events_in_window(self):
        assert rmst_variance(Sample([12.0, 15.0, 11.0], [1, 1, 0]), 10) == 0.0

    def test_total_size_scales(self):
        assert_allclose(rmst_variance(HAND, 3, 6), 2 * rmst_variance(HAND, 3), rtol=1e-15)

    def test_total_size_too_small(self):
        with pytest.raises(InvalidInputError):
            rmst_variance(HAND, 3, 2)

    def test_inestimable(self):
        with pytest.raises(EstimabilityError):
            rmst_variance(Sample([1, 8], [1, 0]), 10)

    def test_exhaustive_against_oracle(self):
        for tau in (2.5, 3.5):
            for pairs in oracles.small_samples():
                s = Sample([p[0] for p in pairs], [p[1] for p in pairs])
                est = estimate_rmst(s, tau, extend=True)
                assert_allclose(est.mu_hat, float(oracles.rmst(pairs, tau)), rtol=1e-12)
                want = float(oracles.variance(pairs, tau))
                assert_allclose(est.sigma2_hat, want, rtol=1e-12, atol=1e-300)

    @settings(max_examples=150)
    @given(
        st.lists(st.tuples(st.floats(0.01, 20), st.integers(0, 1)), min_size=2, max_size=30),
        st.floats(0.1, 100),
    )
    def test_scale_equivariance(self, pairs, c):
        t = np.array([p[0] for p in pairs])
        d = np.array([p[1] for p in pairs])
        tau = 10.0
        a = estimate_rmst(Sample(t, d), tau, extend=True)
        b = estimate_rmst(Sample(t * c, d), tau * c, extend=True)
        assert_allclose(b.mu_hat, c * a.mu_hat, rtol=1e-12)
        assert_allclose(b.sigma2_hat, c * c * a.sigma2_hat, rtol=1e-10, atol=1e-300)

    @given(st.lists(st.tuples(st.integers(0, 12), st.integers(0, 1)), min_size=1, max_size=20))
    def test_nonnegative_and_zero_rule(self, pairs):
        s = Sample([float(p[0]) for p in pairs], [p[1] for p in pairs])
        tau = 8.0
        v = rmst_variance(s, tau, extend=True)
        km = kaplan_meier(s)
        weighted = [
            x for x, dd in pairs
            if dd == 1 and x <= tau and km.integrate(x, tau) > 0
        ]
        assert v >= 0
        assert (v == 0) == (len(weighted) == 0)

    def test_mean_matches_monte_carlo_variance(self):
        # exponential events with uniform censoring, n = 200
        rng = np.random.default_rng(5)
        n, tau, reps = 200, 10.0, 1500
        mus, sig = [], []
        for _ in range(reps):
            t = rng.exponential(5.0, n)
            c = rng.uniform(0, 25, n)
            e = estimate_rmst(Sample(np.minimum(t, c), t <= c), tau, extend=True)
            mus.append(e.mu_hat)
            sig.append(e.sigma2_hat)
        emp = n * np.var(mus, ddof=1)
        # relative sd of a variance estimate from 1500 draws is about 3.7%
        assert abs(np.mean(sig) / emp - 1) < 0.12


class TestRatioVariance:
    def test_formula(self):
        e1, e2 = RmstEstimate(2.0, 1.0, 5, 10), RmstEstimate(4.0, 4.0, 5, 10)
        assert ratio_variance(e1, e2) == 0.5

    def test_zero_variances(self):
        e = RmstEstimate(3.0, 0.0, 5, 10)
        assert ratio_variance(e, e) == 0.0

    def test_zero_mean(self):
        with pytest.raises(DegenerateError):
            ratio_variance(RmstEstimate(0.0, 1.0, 5, 10), RmstEstimate(1.0, 1.0, 5, 10))

    def test_hand_sample_against_itself(self):
        e = estimate_rmst(HAND, 3)
        expected = 2 * Fraction(8, 9) / Fraction(7, 3) ** 2
        assert_allclose(ratio_variance(e, e), float(expected), rtol=1e-14)


class TestTrueRmst:
    def test_exponential(self):
        assert_allclose(true_rmst(model(Exponential(0.2)), 10), 4.3233236, atol=1e-7)

    def test_no_events(self):
        assert_allclose(true_rmst(model(NoCensoring()), 10), 10.0, rtol=1e-12)

    @pytest.mark.parametrize("c", [0.5, 1.5, 4.0, 9.0])
    def test_piecewise_formula(self, c):
        want = 2 * (1 - math.exp(-0.5 * c)) + 20 * math.exp(-0.5 * c) * (1 - math.exp(-0.05 * (10 - c)))
        m = model(PiecewiseExponential(c, 0.5, 0.05))
        assert_allclose(true_rmst(m, 10), want, rtol=1e-12)
        assert_allclose(true_rmst(m, 10, closed_form=False), want, atol=1e-9)

    @pytest.mark.parametrize(
        "dist",
        [Exponential(0.3), PiecewiseExponential(2.0, 0.2, 0.4), Uniform(25.0), Uniform(7.0)],
    )
    def test_closed_form_agrees_with_quadrature(self, dist):
        m = model(dist)
        assert_allclose(true_rmst(m, 10), true_rmst(m, 10, closed_form=False), atol=1e-8)

    @pytest.mark.parametrize("dist", [Weibull(3, 8), Weibull(0.9, 14), LogNormal(2, 0.25)])
    def test_quadrature_against_trapezoid(self, dist):
        t = np.linspace(0, 10, 400_001)
        want = integrate.trapezoid(dist.sf(t), t)
        assert_allclose(true_rmst(model(dist), 10), want, atol=1e-8)

    def test_nonfinite_model(self):
        bad = TheoreticalModel(lambda t: math.nan, lambda t: 1.0, lambda t: 0.0)
        with pytest.raises(ModelError):
            true_rmst(bad, 10)


def _var_min(dist, tau):
    """Var(min(T, tau)) from E[min^2] = integral of 2 t S(t)."""
    mu = integrate.quad(dist.sf, 0, tau, epsabs=1e-13)[0]
    second = integrate.quad(lambda t: 2 * t * dist.sf(t), 0, tau, epsabs=1e-13)[0]
    return second - mu * mu


class TestTrueSigma:
    def test_no_events(self):
        assert true_sigma(model(NoCensoring()), 0.5, 10) == 0.0

    def test_kappa_scaling(self):
        m = model(Exponential(0.2), Uniform(25))
        assert_allclose(true_sigma(m, 0.25, 10), 2 * true_sigma(m, 0.5, 10), rtol=1e-12)

    @pytest.mark.parametrize("dist", [Exponential(0.2), Weibull(3, 8), PiecewiseExponential(1.5, 0.5, 0.05)])
    def test_uncensored_equals_variance_of_truncated_time(self, dist):
        # without censoring the estimator is the mean of min(T, tau)
        assert_allclose(true_sigma(model(dist), 0.5, 10), 2 * _var_min(dist, 10), rtol=1e-8)

    def test_monte_carlo_exponential(self):
        # n1 = 2000 uncensored, kappa = 1/2: the KM area is the mean of min(T, 10)
        rng = np.random.default_rng(2)
        s = Sample(rng.exponential(5.0, 2000), np.ones(2000))
        assert_allclose(estimate_rmst(s, 10).mu_hat, np.minimum(s.times, 10).mean(), rtol=1e-12)
        reps = rng.exponential(5.0, (20_000, 2000))
        mu_hat = np.minimum(reps, 10).mean(axis=1)
        emp = 4000 * np.var(mu_hat, ddof=1)
        assert_allclose(emp, true_sigma(model(Exponential(0.2)), 0.5, 10), rtol=0.03)

    def test_support_violation(self):
        m = model(Exponential(0.2), Uniform(5.0))
        with pytest.raises(ModelError):
            true_sigma(m, 0.5, 10)

    def test_invalid_kappa(self):
        with pytest.raises(InvalidInputError):
            true_sigma(model(Exponential(0.2)), 0.0, 10)


def _sigma_perm_grid(d1, c1, d2, c2, k1, tau=10.0, points=200_001):
    """Pooled permutation variance by Simpson's rule on a fine grid."""
    t = np.linspace(0, tau, points)
    k2 = 1 - k1
    y = k1 * d1.sf(t) * c1.sf(t) + k2 * d2.sf(t) * c2.sf(t)
    dnu = k1 * c1.sf(t) * d1.pdf(t) + k2 * c2.sf(t) * d2.pdf(t)
    a = dnu / y
    A = integrate.cumulative_simpson(a, x=t, initial=0)
    S = np.exp(-A)
    area = integrate.cumulative_simpson(S, x=t, initial=0)
    w = area[-1] - area
    return integrate.simpson(w * w * a / y, x=t) / (k1 * k2)


class TestTrueSigmaPerm:
    def test_exchangeable_matches_sum(self):
        m = model(Weibull(3, 8), Weibull(3, 15))
        want = true_sigma(m, 0.6, 10) + true_sigma(m, 0.4, 10)
        assert_allclose(true_sigma_perm(m, m, 0.6, 10), want, rtol=1e-6)

    def test_exchangeable_singular_hazard(self):
        m = model(Weibull(0.9, 14), Weibull(0.5, 40))
        want = true_sigma(m, 0.5, 10) + true_sigma(m, 0.5, 10)
        assert_allclose(true_sigma_perm(m, m, 0.5, 10), want, rtol=1e-6)

    def test_swap_symmetry(self):
        m1 = model(Weibull(3, 8), Weibull(3, 18))
        m2 = model(Weibull(0.9098, 14), Weibull(0.5, 40))
        assert_allclose(true_sigma_perm(m1, m2, 0.6, 10), true_sigma_perm(m2, m1, 0.4, 10), rtol=1e-9)

    def test_against_grid_oracle(self):
        d1, c1 = Weibull(3, 8), Weibull(3, 18)
        d2, c2 = Weibull(1.5, 13.8), Weibull(0.5, 40)
        want = _sigma_perm_grid(d1, c1, d2, c2, 0.6)
        assert_allclose(true_sigma_perm(model(d1, c1), model(d2, c2), 0.6, 10), want, rtol=1e-6)

    def test_differs_from_unpermuted_variance(self):
        m1 = model(Weibull(3, 8), Weibull(3, 18))
        m2 = model(Weibull(0.9098, 14), Weibull(0.5, 40))
        perm = true_sigma_perm(m1, m2, 0.6, 10)
        plain = true_sigma(m1, 0.6, 10) + true_sigma(m2, 0.4, 10)
        assert abs(perm / plain - 1) > 0.1

    def test_rejects_atoms(self):
        m = TheoreticalModel(lambda t: 1.0, lambda t: 1.0, lambda t: 0.0, atoms=(2.0,))
        with pytest.raises(ModelError):
            true_sigma_perm(m, m, 0.5, 10)
