import numpy as np
import pytest

from mslunmix.crlb import (
    CrlbReport,
    FisherMatrix,
    IllConditionedFisherError,
    SingularIntensityError,
    SweepBase,
    crlb_from_fisher,
    fisher_matrix,
    relative_errors_pct,
    report_as_dict,
    sweep,
    write_sweep_csv,
)
from mslunmix.forward_model import g_gaussian, g_piecewise, intensity_single, SceneSingle
from mslunmix.posterior import ParameterVector
from mslunmix.presets import GAUSSIAN_SIGMA2, demo_scene
from mslunmix.spectral_library import SpectralLibrary


def mc_fisher_gaussian(lib, theta, beta, sigma2, n_bins, n_sims, seed):
    """Average of score outer products under the Gaussian-pulse model."""
    rng = np.random.default_rng(seed)
    t = np.arange(1, n_bins + 1, dtype=float)
    g = g_gaussian(t, theta.t0, beta, sigma2)
    L, R = lib.n_bands, lib.n_materials
    n_params = R + L + 1
    amplitude = lib.M @ theta.w
    total = np.zeros((n_params, n_params))
    for ell in range(L):
        lam = amplitude[ell] * g + theta.b[ell]
        Y = rng.poisson(lam, size=(n_sims, n_bins))
        resid = Y / lam - 1.0
        scores = np.zeros((n_sims, n_params))
        scores[:, :R] = (resid @ g[:, None]) * lib.M[ell][None, :]
        scores[:, R + ell] = resid.sum(axis=1)
        scores[:, -1] = resid @ (amplitude[ell] * g * (t - theta.t0) / sigma2)
        total += scores.T @ scores / n_sims
    return total


class TestFisherMatrix:
    def test_zero_spectra_singular(self, fitted_phi):
        lib = SpectralLibrary([1000.0, 2000.0], np.zeros((2, 1)))
        theta = ParameterVector(w=[0.5], b=[2.0, 2.0], t0=10.0)
        fisher = fisher_matrix(lib, theta, 100.0, 4.0, 20)
        assert np.all(fisher.J[:1, :1] == 0.0)
        with pytest.raises(IllConditionedFisherError):
            crlb_from_fisher(fisher, theta)

    def test_background_cross_band_block_exactly_zero(self):
        rng = np.random.default_rng(2)
        lib = SpectralLibrary(np.linspace(400, 2500, 3), rng.uniform(0.1, 0.9, (3, 2)))
        theta = ParameterVector(w=[0.3, 0.6], b=[1.0, 2.0, 3.0], t0=25.0)
        J = fisher_matrix(lib, theta, 50.0, 9.0, 50).J
        R = 2
        b_block = J[R : R + 3, R : R + 3]
        off = b_block - np.diag(np.diag(b_block))
        assert np.all(off == 0.0)

    def test_matches_monte_carlo_scores_small(self):
        lib = SpectralLibrary([1200.0], np.array([[0.6]]))
        theta = ParameterVector(w=[0.8], b=[2.0], t0=6.0)
        J = fisher_matrix(lib, theta, 40.0, 9.0, 20).J
        Jmc = mc_fisher_gaussian(lib, theta, 40.0, 9.0, 20, 60_000, seed=5)
        scale = np.sqrt(np.outer(np.diag(J), np.diag(J)))
        assert np.all(np.abs(Jmc - J) <= 0.04 * scale)

    def test_zero_intensity_rejected(self):
        lib = SpectralLibrary([1200.0], np.array([[0.5]]))
        theta = ParameterVector(w=[0.0], b=[0.0], t0=5.0)
        with pytest.raises(SingularIntensityError):
            fisher_matrix(lib, theta, 10.0, 4.0, 10)

    def test_symmetric_psd_on_random_configs(self):
        rng = np.random.default_rng(77)
        for _ in range(100):
            L = int(rng.integers(1, 4))
            R = int(rng.integers(1, 4))
            T = int(rng.integers(8, 40))
            lib = SpectralLibrary(
                np.linspace(400, 2500, L) if L > 1 else [900.0],
                rng.uniform(0.05, 0.95, (L, R)),
            )
            theta = ParameterVector(
                w=rng.uniform(0.05, 1.5, R), b=rng.uniform(0.2, 5.0, L),
                t0=rng.uniform(2, T - 1),
            )
            J = fisher_matrix(lib, theta, rng.uniform(5, 80), rng.uniform(1, 16), T).J
            assert np.allclose(J, J.T, rtol=1e-10, atol=0)
            eigs = np.linalg.eigvalsh(J)
            assert eigs[0] >= -1e-8 * np.trace(J)

    def test_scaled_homogeneity_identity(self):
        # scaling the pulse amplitude and the background together by c scales the
        # information by c once the background coordinates are measured in base
        # units: D J(c beta, c b) D == c J(beta, b) with D = diag(1_R, c 1_L, 1)
        rng = np.random.default_rng(3)
        lib = SpectralLibrary(np.linspace(500, 2200, 3), rng.uniform(0.1, 0.9, (3, 2)))
        w = rng.uniform(0.1, 1.0, 2)
        b = rng.uniform(0.5, 3.0, 3)
        t0, T, beta, s2 = 20.0, 40, 30.0, 6.0
        J1 = fisher_matrix(lib, ParameterVector(w=w, b=b, t0=t0), beta, s2, T).J
        for c in (0.5, 2.0, 7.0):
            Jc = fisher_matrix(
                lib, ParameterVector(w=w, b=c * b, t0=t0), c * beta, s2, T
            ).J
            D = np.diag(np.concatenate([np.ones(2), np.full(3, c), [1.0]]))
            assert np.allclose(D @ Jc @ D, c * J1, rtol=1e-10)
            # spec's intended checks: w-block and t0-diagonal scale linearly in c
            assert np.allclose(Jc[:2, :2], c * J1[:2, :2], rtol=1e-10)
            assert Jc[-1, -1] == pytest.approx(c * J1[-1, -1], rel=1e-10)

    def test_gaussian_bound_consistent_with_piecewise_data(self, lib32, fitted_phi):
        # MC Fisher w-block under the piecewise pulse vs the analytic
        # Gaussian-approximation block: within 10% per area entry
        scene = demo_scene()
        theta = ParameterVector(w=scene.w, b=scene.b, t0=scene.t0)
        J = fisher_matrix(lib32, theta, fitted_phi.beta, GAUSSIAN_SIGMA2, 2500).J
        R = 3
        rng = np.random.default_rng(42)
        lam = intensity_single(lib32, scene, fitted_phi, 2500)
        t = np.arange(1, 2501, dtype=float)
        g = g_piecewise(t, scene.t0, fitted_phi)
        window = g > 1e-9 * fitted_phi.beta
        n_sims = 4000
        total = np.zeros((R, R))
        gw = g[window]
        for ell in range(lib32.n_bands):
            lam_w = lam[ell][window]
            Y = rng.poisson(lam_w, size=(n_sims, lam_w.size))
            resid = Y / lam_w - 1.0
            s_w = (resid @ gw[:, None]) * lib32.M[ell][None, :]
            total += s_w.T @ s_w / n_sims
        assert np.all(np.abs(total - J[:R, :R]) <= 0.10 * np.abs(J[:R, :R]))


class TestCrlbFromFisher:
    def test_diagonal_inverse(self):
        d = np.array([2.0, 5.0, 10.0])
        fisher = FisherMatrix(J=np.diag(d), names=["w_a", "b_1", "t0"])
        theta = ParameterVector(w=[1.0], b=[1.0], t0=1.5)
        report = crlb_from_fisher(fisher, theta, material_names=["a"])
        assert np.allclose(report.variances, 1.0 / d, rtol=1e-12)

    def test_two_by_two_hand_inverse(self):
        fisher = FisherMatrix(J=np.array([[2.0, 1.0], [1.0, 2.0]]), names=["w_a", "t0"])
        theta = ParameterVector(w=[1.0], b=[], t0=2.0)
        report = crlb_from_fisher(fisher, theta, material_names=["a"])
        assert np.allclose(report.variances, [2 / 3, 2 / 3], rtol=1e-12)

    def test_relative_error_arithmetic_from_published_inputs(self):
        rel = relative_errors_pct(np.array([2.6e-4]), np.array([0.2]))
        assert 8.0 <= rel[0] <= 8.1

    def test_condition_cap(self):
        J = np.diag([1.0, 1e-14])
        fisher = FisherMatrix(J=J, names=["w_a", "t0"])
        theta = ParameterVector(w=[1.0], b=[], t0=2.0)
        with pytest.raises(IllConditionedFisherError):
            crlb_from_fisher(fisher, theta)

    def test_report_dict_round_trip_fields(self):
        fisher = FisherMatrix(J=np.diag([4.0, 9.0]), names=["w_a", "t0"])
        theta = ParameterVector(w=[0.5], b=[], t0=3.0)
        report = crlb_from_fisher(fisher, theta, material_names=["a"], axis_value=32.0)
        payload = report_as_dict(report)
        assert payload["axis_value"] == 32.0
        assert payload["variances"] == [0.25, 1 / 9]


@pytest.fixture(scope="module")
def base(spectra):
    scene = demo_scene()
    return SweepBase(
        spectra=spectra, w=scene.w, t0=scene.t0, b_level=10.0,
        n_bins=2500, beta=3000.0, sigma2=GAUSSIAN_SIGMA2, n_bands=32,
    )


class TestSweep:

    def test_nested_band_counts_monotone(self, base):
        reports = sweep(base, "bands", [4, 7, 13, 25])
        areas = np.array([r.area_variances for r in reports])
        assert np.all(np.diff(areas, axis=0) <= 1e-15)

    def test_beta_strictly_decreasing(self, base):
        reports = sweep(base, "beta", [1000.0, 3000.0, 10000.0, 30000.0])
        areas = np.array([r.area_variances for r in reports])
        assert np.all(np.diff(areas, axis=0) < 0)

    def test_background_less_than_order_of_magnitude(self, base):
        reports = sweep(base, "background", [1.0, 10.0, 100.0])
        areas = np.array([r.area_variances for r in reports])
        assert np.all(areas[-1] / areas[0] < 10.0)
        assert np.all(np.diff(areas, axis=0) > 0)  # more background never helps

    def test_axis_values_recorded_and_csv(self, base, tmp_path):
        reports = sweep(base, "bands", [4, 8])
        assert [r.axis_value for r in reports] == [4.0, 8.0]
        path = tmp_path / "sweep.csv"
        write_sweep_csv(reports, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "axis_value,param_name,crlb,rel_err_pct"
        assert len(lines) == 1 + 2 * 4  # two grid points x (3 areas + t0)

    def test_bad_axis_and_empty_grid(self, base):
        from mslunmix.errors import InputError

        with pytest.raises(InputError):
            sweep(base, "wavelength", [1])
        with pytest.raises(InputError):
            sweep(base, "beta", [])
