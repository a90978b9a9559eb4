import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mslunmix.errors import InputError
from mslunmix.forward_model import (
    ImpulseParams,
    NegativeIntensityError,
    SceneMulti,
    SceneSingle,
    WaveformSet,
    g_gaussian,
    g_piecewise,
    intensity_multi,
    intensity_single,
    pulse_support,
    simulate,
    waveforms_from_csv,
    waveforms_to_csv,
)
from mslunmix.presets import GAUSSIAN_SIGMA2, demo_scene, instrument_impulse


def branch_values(u, phi):
    """Each branch formula evaluated directly at offset u (independent oracle)."""
    s2 = 2 * phi.sigma2
    left = math.exp(-phi.t1**2 / s2) * math.exp((u + phi.t1) / phi.tau1)
    core = math.exp(-(u**2) / s2)
    mid = math.exp(-phi.t2**2 / s2) * math.exp(-(u - phi.t2) / phi.tau2)
    tail = (
        math.exp(-phi.t2**2 / s2)
        * math.exp(-(phi.t3 - phi.t2) / phi.tau2)
        * math.exp(-(u - phi.t3) / phi.tau3)
    )
    return phi.beta * np.array([left, core, mid, tail])


class TestPiecewisePulse:
    def test_peak_value(self, fitted_phi):
        assert g_piecewise(1000.0, 1000.0, fitted_phi) == pytest.approx(3000.0)

    def test_first_decay_onset_matches_both_branches(self, fitted_phi):
        # independent evaluation: 3000 * exp(-12.5^2 / (2 * 105.82))
        expected = 3000.0 * math.exp(-156.25 / 211.64)
        value = g_piecewise(1000.0 + fitted_phi.t2, 1000.0, fitted_phi)
        assert value == pytest.approx(expected, rel=1e-12)
        assert value == pytest.approx(1433.8, abs=0.1)
        vals = branch_values(fitted_phi.t2, fitted_phi)
        assert vals[1] == pytest.approx(vals[2], rel=1e-12)

    def test_rise_boundary_matches_both_branches(self, fitted_phi):
        vals = branch_values(-fitted_phi.t1, fitted_phi)
        assert vals[0] == pytest.approx(vals[1], rel=1e-12, abs=0.0)
        assert g_piecewise(1000.0 - fitted_phi.t1, 1000.0, fitted_phi) == vals[1]

    @given(
        t1=st.floats(0.5, 50),
        t2=st.floats(0.1, 10),
        dt3=st.floats(0.1, 40),
        tau1=st.floats(0.2, 30),
        tau2=st.floats(0.2, 30),
        tau3=st.floats(0.2, 60),
        sigma2=st.floats(0.5, 200),
        beta=st.floats(1, 1e4),
    )
    @settings(max_examples=60, deadline=None)
    def test_continuity_at_all_branch_boundaries(self, t1, t2, dt3, tau1, tau2, tau3, sigma2, beta):
        phi = ImpulseParams(
            t1=t1, t2=t2, t3=t2 + dt3, tau1=tau1, tau2=tau2, tau3=tau3,
            sigma2=sigma2, beta=beta,
        )
        for u, pair in [(-phi.t1, (0, 1)), (phi.t2, (1, 2)), (phi.t3, (2, 3))]:
            vals = branch_values(u, phi)
            a, b = vals[pair[0]], vals[pair[1]]
            assert a == pytest.approx(b, rel=1e-9, abs=1e-300)

    def test_positive_on_finite_grid(self, fitted_phi):
        t = np.linspace(500, 2500, 4001)
        assert np.all(g_piecewise(t, 1000.0, fitted_phi) >= 0)
        near = np.linspace(920, 1230, 1000)
        assert np.all(g_piecewise(near, 1000.0, fitted_phi) > 0)

    def test_validation(self):
        with pytest.raises(InputError):
            ImpulseParams(t1=1, t2=5, t3=2, tau1=1, tau2=1, tau3=1, sigma2=1, beta=1)
        with pytest.raises(InputError):
            ImpulseParams(t1=-1, t2=1, t3=2, tau1=1, tau2=1, tau3=1, sigma2=1, beta=1)


class TestGaussianPulse:
    def test_peak(self):
        assert g_gaussian(7.0, 7.0, 3000.0, 105.68) == pytest.approx(3000.0)

    def test_monotone_decay_each_side(self):
        t = np.linspace(0, 50, 200)
        left = g_gaussian(t[t < 25], 25.0, 10.0, 4.0)
        right = g_gaussian(t[t > 25], 25.0, 10.0, 4.0)
        assert np.all(np.diff(left) > 0)
        assert np.all(np.diff(right) < 0)

    def test_gaussian_fit_tracks_piecewise_to_five_percent(self, fitted_phi):
        t = np.linspace(950, 1050, 2001)
        pw = g_piecewise(t, 1000.0, fitted_phi)
        ga = g_gaussian(t, 1000.0, fitted_phi.beta, GAUSSIAN_SIGMA2)
        assert np.max(np.abs(ga - pw)) / fitted_phi.beta <= 0.05

    def test_invalid_args(self):
        with pytest.raises(InputError):
            g_gaussian(1.0, 0.0, -1.0, 1.0)


class TestPulseSupport:
    def test_bounds_bracket_threshold(self, fitted_phi):
        u_lo, u_hi = pulse_support(fitted_phi, rel_threshold=1e-12)
        assert u_lo < 0 < u_hi
        inside = g_piecewise(np.array([u_lo + 1, 0.0, u_hi - 1]), 0.0, fitted_phi)
        assert np.all(inside >= 1e-12 * fitted_phi.beta * 0.5)
        outside = g_piecewise(np.array([u_lo - 2.0]), 0.0, fitted_phi)
        assert outside[0] <= 1e-12 * fitted_phi.beta * 2

    def test_gaussian_support_symmetric(self, fitted_phi):
        u_lo, u_hi = pulse_support(fitted_phi, shape="gaussian")
        assert u_lo == pytest.approx(-u_hi)


class TestIntensity:
    def test_zero_areas_constant_background(self, lib32, fitted_phi):
        scene = SceneSingle(w=np.zeros(3), t0=1000.0, b=np.full(32, 10.0))
        lam = intensity_single(lib32, scene, fitted_phi, 200)
        assert np.all(lam == 10.0)

    def test_all_zero_degenerate(self, lib32, fitted_phi):
        scene = SceneSingle(w=np.zeros(3), t0=100.0, b=np.zeros(32))
        lam = intensity_single(lib32, scene, fitted_phi, 150)
        assert np.all(lam == 0.0)

    def test_peak_matches_hand_dot_product(self, lib32, fitted_phi):
        scene = demo_scene()
        lam = intensity_single(lib32, scene, fitted_phi, 2500)
        for ell in (0, 13, 31):
            row = lib32.M[ell]
            expected = (
                row[0] * 0.2 + row[1] * 0.3 + row[2] * 0.4
            ) * 3000.0 + 10.0
            assert lam[ell, 999] == pytest.approx(expected, rel=1e-12)

    def test_permutation_invariance(self, lib32, fitted_phi):
        scene = demo_scene()
        lam = intensity_single(lib32, scene, fitted_phi, 400)
        perm = [2, 0, 1]
        from mslunmix.spectral_library import SpectralLibrary

        lib_p = SpectralLibrary(
            band_wavelengths=lib32.band_wavelengths,
            M=lib32.M[:, perm],
            material_names=[lib32.material_names[i] for i in perm],
        )
        scene_p = SceneSingle(w=scene.w[perm], t0=scene.t0, b=scene.b)
        lam_p = intensity_single(lib_p, scene_p, fitted_phi, 400)
        assert np.array_equal(lam, lam_p)

    def test_linearity_in_areas(self, lib32, fitted_phi):
        scene = SceneSingle(w=np.array([0.1, 0.2, 0.3]), t0=1000.0, b=np.zeros(32))
        double = SceneSingle(w=2 * scene.w, t0=1000.0, b=np.zeros(32))
        lam = intensity_single(lib32, scene, fitted_phi, 300)
        lam2 = intensity_single(lib32, double, fitted_phi, 300)
        assert np.allclose(lam2, 2 * lam, rtol=1e-14)

    def test_dimension_mismatch(self, lib32, fitted_phi):
        scene = SceneSingle(w=np.array([0.1, 0.2]), t0=10.0, b=np.full(32, 1.0))
        with pytest.raises(InputError):
            intensity_single(lib32, scene, fitted_phi, 100)


class TestIntensityMulti:
    def test_single_layer_reduction(self, lib32, fitted_phi):
        single = demo_scene()
        multi = SceneMulti(
            layer_positions=[1000.0], W=single.w[:, None], b=single.b
        )
        a = intensity_single(lib32, single, fitted_phi, 2500)
        b = intensity_multi(lib32, multi, fitted_phi, 2500)
        assert np.allclose(a, b, rtol=1e-15)

    def test_three_layers_show_three_local_maxima(self, lib32, fitted_phi):
        W = np.tile(np.array([0.1, 0.1, 0.1])[:, None], (1, 3))
        scene = SceneMulti(layer_positions=[1000.0, 1500.0, 2000.0], W=W, b=np.full(32, 10.0))
        lam = intensity_multi(lib32, scene, fitted_phi, 2500)
        trace = lam[31]
        for pos in (1000, 1500, 2000):
            peak = trace[pos - 5 : pos + 5].max()
            assert peak > trace[pos - 250] * 2
            assert peak > trace[min(pos + 250, 2499)] * 2

    def test_coincident_layers_add(self, lib32, fitted_phi):
        base = np.array([0.1, 0.2, 0.1])
        multi = SceneMulti(
            layer_positions=[800.0],
            W=np.column_stack([base + 0.05]),
            b=np.zeros(32),
        )
        split_lam = intensity_multi(
            lib32,
            SceneMulti(layer_positions=[800.0], W=np.column_stack([base]), b=np.zeros(32)),
            fitted_phi,
            1200,
        ) + intensity_multi(
            lib32,
            SceneMulti(
                layer_positions=[800.0], W=np.column_stack([np.full(3, 0.05)]), b=np.zeros(32)
            ),
            fitted_phi,
            1200,
        )
        lam = intensity_multi(lib32, multi, fitted_phi, 1200)
        assert np.allclose(lam, split_lam, rtol=1e-12)

    def test_position_ordering_enforced(self):
        with pytest.raises(InputError):
            SceneMulti(layer_positions=[1500.0, 1000.0], W=np.ones((2, 2)), b=[1.0])


class TestSimulate:
    def test_zero_intensity_zero_counts(self):
        wf = simulate(np.zeros((3, 40)), seed=1)
        assert wf.Y.shape == (3, 40)
        assert np.all(wf.Y == 0)

    def test_moments_constant_intensity(self):
        lam = np.full((1, 100_000), 10.0)
        wf = simulate(lam, seed=7)
        mean = wf.Y.mean()
        assert abs(mean - 10.0) <= 3 * math.sqrt(10.0 / 100_000)
        assert 0.97 <= wf.Y.var() / mean <= 1.03

    def test_seed_determinism(self):
        lam = np.random.default_rng(0).uniform(0, 50, (4, 60))
        a = simulate(lam, seed=123)
        b = simulate(lam, seed=123)
        assert np.array_equal(a.Y, b.Y)

    def test_mean_within_four_standard_errors(self):
        lam = np.full((1, 1), 7.3)
        reps = np.array([simulate(lam, seed=s).Y[0, 0] for s in range(10_000)])
        se = math.sqrt(7.3 / reps.size)
        assert abs(reps.mean() - 7.3) <= 4 * se

    def test_negative_intensity_rejected(self):
        lam = np.zeros((2, 5))
        lam[1, 3] = -0.5
        with pytest.raises(NegativeIntensityError, match="band 2"):
            simulate(lam, seed=0)

    def test_waveform_validation(self):
        with pytest.raises(InputError):
            WaveformSet(Y=np.array([[0.5, 1.0]]))
        with pytest.raises(InputError):
            WaveformSet(Y=np.array([[-1, 1]]))


class TestWaveformCsv:
    def test_round_trip(self, tmp_path):
        lam = np.random.default_rng(3).uniform(0, 30, (4, 25))
        wf = simulate(lam, seed=11)
        path = tmp_path / "wf.csv"
        waveforms_to_csv(wf, path)
        head = path.read_text().splitlines()[0]
        assert head == "band,bin,count"
        again = waveforms_from_csv(path)
        assert np.array_equal(again.Y, wf.Y)

    def test_malformed(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("band,bin,count\n1,1\n")
        with pytest.raises(InputError):
            waveforms_from_csv(path)
