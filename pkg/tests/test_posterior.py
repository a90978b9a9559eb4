import math

import numpy as np
import pytest
from scipy import stats

from mslunmix.forward_model import SceneSingle, intensity_single, simulate
from mslunmix.posterior import (
    Hyperparams,
    ParameterVector,
    grad_potential_w,
    log_likelihood,
    log_posterior,
    log_prior_b,
    log_prior_t0,
    log_prior_w,
    potential_energy,
)
from mslunmix.spectral_library import SpectralLibrary


def random_instance(rng, n_bands=None, n_bins=None, n_materials=None):
    L = n_bands or int(rng.integers(1, 5))
    T = n_bins or int(rng.integers(5, 51))
    R = n_materials or int(rng.integers(1, 4))
    from mslunmix.forward_model import ImpulseParams

    lib = SpectralLibrary(
        band_wavelengths=np.linspace(400, 2500, L) if L > 1 else [1450.0],
        M=rng.uniform(0.05, 0.95, (L, R)),
    )
    phi = ImpulseParams(
        t1=rng.uniform(2, 10), t2=rng.uniform(0.5, 3), t3=rng.uniform(4, 12),
        tau1=rng.uniform(1, 5), tau2=rng.uniform(0.5, 4), tau3=rng.uniform(2, 20),
        sigma2=rng.uniform(1, 9), beta=rng.uniform(5, 60),
    )
    theta = ParameterVector(
        w=rng.uniform(0.05, 2.0, R), b=rng.uniform(0.5, 5.0, L), t0=rng.uniform(2, T - 1)
    )
    scene = SceneSingle(w=theta.w, t0=theta.t0, b=theta.b)
    Y = simulate(intensity_single(lib, scene, phi, T), seed=int(rng.integers(1e6))).Y
    return lib, phi, theta, Y


class TestLogLikelihood:
    def test_all_zero_counts_constant_intensity(self, one_band_lib, tiny_phi):
        # with y = 0 everywhere the sum collapses to -sum(lam) = -L*T*c
        L, T, c = 1, 12, 4.0
        Y = np.zeros((L, T), dtype=np.int64)
        theta = ParameterVector(w=[0.0], b=[c], t0=6.0)
        value = log_likelihood(Y, one_band_lib, theta, tiny_phi)
        assert value == pytest.approx(-L * T * c, rel=1e-12)

    def test_single_bin_hand_value(self, one_band_lib, tiny_phi):
        # y=2, lam=1: 2 log 1 - 1 - log 2!
        Y = np.array([[2]])
        theta = ParameterVector(w=[0.0], b=[1.0], t0=0.5)
        value = log_likelihood(Y, one_band_lib, theta, tiny_phi)
        assert value == pytest.approx(-1.0 - math.log(2.0), rel=1e-12)
        assert value == pytest.approx(-1.6931, abs=1e-4)

    def test_matches_bruteforce_summation(self):
        rng = np.random.default_rng(21)
        lib, phi, theta, Y = random_instance(rng, n_bands=2, n_bins=10)
        lam = intensity_single(
            lib, SceneSingle(w=theta.w, t0=theta.t0, b=theta.b), phi, 10
        )
        oracle = 0.0
        for ell in range(2):
            for t in range(10):
                oracle += (
                    Y[ell, t] * math.log(lam[ell, t])
                    - lam[ell, t]
                    - math.lgamma(Y[ell, t] + 1.0)
                )
        assert log_likelihood(Y, lib, theta, phi) == pytest.approx(oracle, rel=1e-12)

    def test_empty_data(self, one_band_lib, tiny_phi):
        Y = np.zeros((1, 0), dtype=np.int64)
        theta = ParameterVector(w=[1.0], b=[1.0], t0=0.5)
        assert log_likelihood(Y, one_band_lib, theta, tiny_phi) == 0.0


class TestPriors:
    def test_zero_vector(self):
        assert log_prior_w(np.zeros(3), 1e6) == 0.0
        assert log_prior_b(np.zeros(2), 1e6) == 0.0

    def test_negative_entry_sentinel(self):
        assert log_prior_w(np.array([0.5, -0.1]), 1.0) == -math.inf
        assert log_prior_b(np.array([-1e-12]), 1.0) == -math.inf

    def test_hand_value(self):
        assert log_prior_w(np.array([1.0, 2.0]), 1e6) == pytest.approx(-2.5e-6, rel=1e-12)

    def test_uniform_position(self):
        assert log_prior_t0(5.0, 10) == 0.0
        assert log_prior_t0(1.0, 10) == -math.inf
        assert log_prior_t0(10.0, 10) == -math.inf

    def test_mh_ratio_identity_against_direct_densities(self):
        # ratio from log values == ratio of independent density evaluations
        rng = np.random.default_rng(4)
        alpha2 = 2.7
        for _ in range(20):
            w1, w2 = rng.uniform(0, 3, (2, 4))
            log_ratio = log_prior_w(w1, alpha2) - log_prior_w(w2, alpha2)
            direct = np.prod(stats.norm.pdf(w1, 0, math.sqrt(alpha2))) / np.prod(
                stats.norm.pdf(w2, 0, math.sqrt(alpha2))
            )
            assert math.exp(log_ratio) == pytest.approx(direct, rel=1e-9)


class TestLogPosterior:
    def test_out_of_support_sentinel(self, one_band_lib, tiny_phi, hyper):
        Y = np.ones((1, 10), dtype=np.int64)
        bad = ParameterVector(w=[-0.1], b=[1.0], t0=5.0)
        assert log_posterior(Y, one_band_lib, bad, tiny_phi, hyper) == -math.inf
        outside = ParameterVector(w=[0.1], b=[1.0], t0=11.0)
        assert log_posterior(Y, one_band_lib, outside, tiny_phi, hyper) == -math.inf

    def test_flat_prior_limit(self):
        rng = np.random.default_rng(8)
        lib, phi, theta, Y = random_instance(rng, n_bands=2, n_bins=20)
        wide = Hyperparams(alpha2=1e300, gamma2=1e300)
        other = ParameterVector(w=theta.w * 1.7, b=theta.b * 0.6, t0=theta.t0 + 1.0)
        dpost = log_posterior(Y, lib, theta, phi, wide) - log_posterior(
            Y, lib, other, phi, wide
        )
        dll = log_likelihood(Y, lib, theta, phi) - log_likelihood(Y, lib, other, phi)
        assert dpost == pytest.approx(dll, rel=1e-9, abs=1e-9)

    def test_equals_sum_of_parts(self, hyper):
        rng = np.random.default_rng(9)
        lib, phi, theta, Y = random_instance(rng)
        expected = (
            log_likelihood(Y, lib, theta, phi)
            + log_prior_w(theta.w, hyper.alpha2)
            + log_prior_b(theta.b, hyper.gamma2)
            + log_prior_t0(theta.t0, Y.shape[1])
        )
        assert log_posterior(Y, lib, theta, phi, hyper) == pytest.approx(expected, rel=1e-12)


class TestPotentialEnergy:
    def test_sum_with_log_posterior_constant_in_w(self, hyper):
        rng = np.random.default_rng(10)
        lib, phi, theta, Y = random_instance(rng)
        totals = []
        for _ in range(5):
            w = rng.uniform(0.01, 2.0, theta.w.size)
            t = ParameterVector(w=w, b=theta.b, t0=theta.t0)
            totals.append(
                potential_energy(w, Y, lib, theta.t0, theta.b, hyper.alpha2, phi)
                + log_posterior(Y, lib, t, phi, hyper)
            )
        assert np.ptp(totals) <= 1e-8 * max(1.0, abs(totals[0]))

    def test_monotone_in_each_area_without_counts(self, one_band_lib, tiny_phi):
        # with y = 0 and a flat prior, U(w) = sum(lam), increasing in w
        Y = np.zeros((1, 15), dtype=np.int64)
        b = np.array([0.5])
        values = [
            potential_energy(np.array([w]), Y, one_band_lib, 7.0, b, 1e300, tiny_phi)
            for w in (0.0, 0.5, 1.0, 2.0)
        ]
        assert all(a < b for a, b in zip(values, values[1:]))

    def test_closed_form_at_zero_areas(self, tiny_phi):
        rng = np.random.default_rng(11)
        L, T = 3, 12
        lib = SpectralLibrary(np.linspace(400, 2500, L), rng.uniform(0.1, 0.9, (L, 2)))
        Y = rng.integers(0, 9, (L, T))
        b = rng.uniform(0.5, 4.0, L)
        expected = sum(
            T * b[ell] - Y[ell].sum() * math.log(b[ell]) for ell in range(L)
        )
        value = potential_energy(np.zeros(2), Y, lib, 6.0, b, 1e300, tiny_phi)
        assert value == pytest.approx(expected, rel=1e-12)

    def test_out_of_support_is_positive_infinity(self, one_band_lib, tiny_phi):
        Y = np.ones((1, 5), dtype=np.int64)
        assert potential_energy(
            np.array([-0.2]), Y, one_band_lib, 2.0, np.array([1.0]), 1.0, tiny_phi
        ) == math.inf


class TestGradient:
    def test_stationary_when_counts_equal_means(self, lib32, fitted_phi):
        scene = SceneSingle(w=np.array([0.2, 0.3, 0.4]), t0=1000.0, b=np.full(32, 10.0))
        lam = intensity_single(lib32, scene, fitted_phi, 2500)
        grad = grad_potential_w(
            scene.w, lam, lib32, scene.t0, scene.b, 1e300, fitted_phi
        )
        assert np.max(np.abs(grad)) <= 1e-7

    def test_prior_only_with_empty_data(self, one_band_lib, tiny_phi):
        Y = np.zeros((1, 0), dtype=np.int64)
        w = np.array([0.7])
        grad = grad_potential_w(w, Y, one_band_lib, 1.0, np.array([1.0]), 2.5, tiny_phi)
        assert np.allclose(grad, w / 2.5, rtol=1e-14)

    def test_finite_differences_hundred_instances(self, hyper):
        rng = np.random.default_rng(12)
        worst = 0.0
        for _ in range(100):
            lib, phi, theta, Y = random_instance(rng)
            alpha2 = float(rng.uniform(0.5, 1e6))
            grad = grad_potential_w(theta.w, Y, lib, theta.t0, theta.b, alpha2, phi)
            for r in range(theta.w.size):
                h = 1e-5 * max(abs(theta.w[r]), 1.0)
                wp, wm = theta.w.copy(), theta.w.copy()
                wp[r] += h
                wm[r] -= h
                fd = (
                    potential_energy(wp, Y, lib, theta.t0, theta.b, alpha2, phi)
                    - potential_energy(wm, Y, lib, theta.t0, theta.b, alpha2, phi)
                ) / (2 * h)
                rel = abs(fd - grad[r]) / max(abs(grad[r]), 1e-8)
                worst = max(worst, rel)
        assert worst <= 1e-5

    def test_concavity_of_likelihood_in_background(self):
        # three-point midpoint check along one background coordinate
        rng = np.random.default_rng(14)
        lib, phi, theta, Y = random_instance(rng, n_bands=2, n_bins=30)
        Y[0, 3] = max(Y[0, 3], 1)  # at least one positive count in band 0

        def ll(b0):
            b = theta.b.copy()
            b[0] = b0
            return log_likelihood(Y, lib, ParameterVector(theta.w, b, theta.t0), phi)

        for _ in range(10):
            b1, b2 = sorted(rng.uniform(0.1, 8.0, 2))
            if b2 - b1 < 1e-3:
                continue
            mid = 0.5 * (b1 + b2)
            assert ll(mid) > 0.5 * (ll(b1) + ll(b2))
