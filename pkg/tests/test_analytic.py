"""Exact scores, posterior weights and the brute-force minimizer oracle."""

import numpy as np
import pytest

from stf_lab import analytic, datasets, kernels

VE = kernels.ve(0.01, 50.0)


def _fd_score(dist, sch, xt, t, h=1e-6):
    d = xt.shape[0]
    out = np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        out[i] = (analytic.log_marginal_density(dist, sch, xt + e, t)
                  - analytic.log_marginal_density(dist, sch, xt - e, t)) / (2 * h)
    return out


class TestMarginalScore:
    def test_single_gaussian_closed_form(self):
        # N(0, I) data under a unit-scale kernel: score = -x / (1 + sigma_t^2)
        d = datasets.GaussianMixture(np.array([1.0]), np.zeros((1, 3)), 1.0)
        rng = np.random.default_rng(0)
        for t in (0.2, 0.5, 0.8):
            xt = rng.standard_normal(3)
            sig2 = float(VE.sigma_at(t)) ** 2
            np.testing.assert_allclose(analytic.marginal_score(d, VE, xt, t),
                                       -xt / (1.0 + sig2), rtol=1e-12)

    def test_symmetric_pair_zero_at_origin(self):
        d = datasets.make_two_gaussians(8, 0.3, 0.05)
        np.testing.assert_allclose(analytic.marginal_score(d, VE, np.zeros(8), 0.4),
                                   0.0, atol=1e-12)

    def test_two_point_empirical_example(self):
        emp = datasets.EmpiricalSet(np.array([[0.0], [2.0]]))
        t1 = float(VE.sigma_inverse(1.0))
        s = analytic.marginal_score(emp, VE, np.array([0.0]), t1)
        # softmax(0, -2) weights on points {0, 2}
        assert s[0] == pytest.approx(2.0 / (1.0 + np.exp(2.0)), rel=1e-10)
        assert s[0] == pytest.approx(0.23841, abs=5e-6)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            d = int(rng.integers(1, 9))
            K = int(rng.integers(1, 5))
            w = rng.dirichlet(np.ones(K))
            dist = datasets.GaussianMixture(w, rng.standard_normal((K, d)),
                                            float(rng.uniform(0.0, 0.5)))
            sch = (VE, kernels.vp(), kernels.edm())[int(rng.integers(3))]
            t = float(rng.uniform(0.1, 0.9))
            xt = rng.standard_normal(d) * 2
            got = analytic.marginal_score(dist, sch, xt, t)
            want = _fd_score(dist, sch, xt, t)
            np.testing.assert_allclose(got, want, rtol=1e-4, atol=1e-8)

    def test_batched_and_per_row_time(self):
        d = datasets.make_ring(4, 1.0, 0.1)
        rng = np.random.default_rng(2)
        xt = rng.standard_normal((6, 2))
        t = rng.uniform(0.2, 0.8, 6)
        batched = analytic.marginal_score(d, VE, xt, t)
        for i in range(6):
            row = analytic.marginal_score(d, VE, xt[i], float(t[i]))
            np.testing.assert_allclose(batched[i], row, rtol=1e-12)

    def test_sigma_hat_zero_equals_empirical(self):
        pts = np.random.default_rng(3).standard_normal((10, 3))
        gm = datasets.GaussianMixture(np.full(10, 0.1), pts, 0.0)
        emp = datasets.EmpiricalSet(pts)
        xt = np.array([0.3, -0.2, 0.8])
        np.testing.assert_allclose(analytic.marginal_score(gm, VE, xt, 0.5),
                                   analytic.marginal_score(emp, VE, xt, 0.5), rtol=1e-13)

    def test_dimension_mismatch(self):
        d = datasets.make_ring(4, 1.0, 0.1)
        with pytest.raises(ValueError):
            analytic.marginal_score(d, VE, np.zeros(3), 0.5)


class TestPosteriorWeights:
    def test_equidistant_half_half(self):
        emp = datasets.EmpiricalSet(np.array([[1.0], [-1.0]]))
        w = analytic.posterior_weights(emp, VE, np.array([0.0]), 0.5)
        np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-14)

    def test_example_values(self):
        emp = datasets.EmpiricalSet(np.array([[0.0], [2.0]]))
        t1 = float(VE.sigma_inverse(1.0))
        w = analytic.posterior_weights(emp, VE, np.array([0.0]), t1)
        np.testing.assert_allclose(w, [0.8807970779778823, 0.11920292202211757], rtol=1e-10)

    def test_flat_kernel_recovers_prior(self):
        # sigma_t = 1000 x diameter: posterior within 1e-3 of the prior
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        gm = datasets.GaussianMixture(np.array([0.2, 0.3, 0.5]), pts, 0.0)
        sch = kernels.ve(0.01, 2000.0)
        t = float(sch.sigma_inverse(1000.0 * np.sqrt(2)))
        w = analytic.posterior_weights(gm, sch, np.array([0.4, 0.4]), t)
        assert np.max(np.abs(w - gm.weights)) < 1e-3

    def test_softmax_equals_direct_density_ratio(self):
        rng = np.random.default_rng(4)
        pts = rng.standard_normal((6, 2))
        gm = datasets.GaussianMixture(rng.dirichlet(np.ones(6)), pts, 0.2)
        t = 0.55
        xt = rng.standard_normal(2)
        sig = float(VE.sigma_at(t))
        s2 = sig**2 + 0.2**2
        dens = gm.weights * np.exp(-np.sum((xt - pts) ** 2, axis=1) / (2 * s2))
        np.testing.assert_allclose(analytic.posterior_weights(gm, VE, xt, t),
                                   dens / dens.sum(), rtol=0, atol=1e-10)

    def test_rows_normalized(self):
        gm = datasets.make_ring(8, 2.0, 0.05)
        xt = np.random.default_rng(5).standard_normal((40, 2)) * 3
        w = analytic.posterior_weights(gm, VE, xt, 0.3)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(w >= 0)


class TestPosteriorSampling:
    def test_sigma_hat_zero_returns_support_points(self):
        emp = datasets.EmpiricalSet(np.array([[0.0], [2.0]]))
        draws = analytic.sample_posterior(emp, VE, np.array([0.1]), 0.4, 200,
                                          np.random.default_rng(6))
        assert set(np.unique(draws)) <= {0.0, 2.0}

    def test_conditional_moments(self):
        # single component: posterior is Gaussian with conjugate mean/variance
        gm = datasets.GaussianMixture(np.array([1.0]), np.array([[1.0, -1.0]]), 0.5)
        t, xt = 0.5, np.array([2.0, 0.0])
        sig = float(VE.sigma_at(t))
        s2 = sig**2 + 0.25
        want_mean = (sig**2 * gm.means[0] + 0.25 * xt) / s2
        want_var = 0.25 * sig**2 / s2
        draws = analytic.sample_posterior(gm, VE, xt, t, 200_000, np.random.default_rng(7))
        se = np.sqrt(want_var / 200_000)
        assert np.all(np.abs(draws.mean(axis=0) - want_mean) < 4 * se)
        assert np.allclose(draws.var(axis=0), want_var, rtol=0.03)


class TestBruteForceMinimizer:
    def test_single_point_exact(self):
        emp = datasets.EmpiricalSet(np.array([[0.5, -0.5]]))
        xt = np.array([1.0, 1.0])
        for n in (1, 4):
            est = analytic.brute_force_stf_minimizer(emp, VE, xt, 0.5, n, 50,
                                                     np.random.default_rng(8))
            np.testing.assert_allclose(est, VE.kernel_score(emp.points[0], xt, 0.5), rtol=1e-12)

    def test_n1_recovers_marginal_score(self):
        ring = datasets.make_ring(4, 1.0, 0.05)
        xt = np.array([0.6, 0.1])
        est, se = analytic.brute_force_stf_minimizer(ring, VE, xt, 0.5, 1, 100_000,
                                                     np.random.default_rng(9),
                                                     return_stderr=True)
        truth = analytic.marginal_score(ring, VE, xt, 0.5)
        assert np.all(np.abs(est - truth) < 3 * se + 1e-12)

    def test_bias_shrinks_with_n(self):
        # cheap monotone check; the slope-band measurement runs in acceptance
        ring = datasets.make_ring(8, 2.0, 0.05)
        xt = np.array([2.5, 0.0])
        truth = analytic.marginal_score(ring, VE, xt, 0.5)
        rng = np.random.default_rng(10)
        errs = []
        for n in (2, 16, 128):
            sq = 0.0
            for _ in range(4):
                m = analytic.brute_force_stf_minimizer(ring, VE, xt, 0.5, n, 400 * n, rng)
                sq += float(np.sum((m - truth) ** 2))
            errs.append(np.sqrt(sq / 4))
        assert errs[0] > errs[1] > errs[2]


class TestClosedFormReference:
    def test_first_term_vanishes_at_zero_width(self):
        v = analytic.v_dsm_closed_two_gaussians(0.5, 0.0, 4, VE, 0.05, 4000,
                                                np.random.default_rng(11))
        sig = float(VE.sigma_at(0.05))
        # with sigma_hat = 0 only the mode-competition term remains, bounded by ||mu||^2/sig^4
        assert 0 <= v <= 4 * 0.25 * (0.5**2 * 4) / sig**4

    def test_far_field_quarter_factor(self):
        # exponent -> 0 so alpha(1-alpha) -> 1/4 and the integrand is deterministic
        v = analytic.v_dsm_closed_two_gaussians(0.1, 0.0, 8, VE, 1.0, 2000,
                                                np.random.default_rng(12))
        sig2 = float(VE.sigma_at(1.0)) ** 2
        want = 4 * 0.25 * (0.1**2 * 8) / sig2**2
        assert v == pytest.approx(want, rel=2e-3)

    def test_requires_unit_scale_schedule(self):
        with pytest.raises(ValueError):
            analytic.v_dsm_closed_two_gaussians(0.1, 0.0, 4, kernels.vp(), 0.5, 10,
                                                np.random.default_rng(13))
