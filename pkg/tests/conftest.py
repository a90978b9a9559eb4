import numpy as np
import pytest

from mslunmix.forward_model import ImpulseParams
from mslunmix.posterior import Hyperparams
from mslunmix.presets import bundled_library, bundled_spectra, instrument_impulse
from mslunmix.spectral_library import SpectralLibrary


@pytest.fixture(scope="session")
def fitted_phi() -> ImpulseParams:
    return instrument_impulse()


@pytest.fixture(scope="session")
def lib32() -> SpectralLibrary:
    return bundled_library(32)


@pytest.fixture(scope="session")
def spectra():
    return bundled_spectra()


@pytest.fixture(scope="session")
def hyper() -> Hyperparams:
    return Hyperparams(alpha2=1e6, gamma2=1e6)


@pytest.fixture()
def tiny_phi() -> ImpulseParams:
    """Short pulse whose support fits small test histograms."""
    return ImpulseParams(
        t1=3.0, t2=1.0, t3=4.0, tau1=2.0, tau2=1.5, tau3=6.0, sigma2=2.0, beta=20.0
    )


@pytest.fixture()
def one_band_lib() -> SpectralLibrary:
    return SpectralLibrary(band_wavelengths=[1450.0], M=np.array([[0.6]]))


def batch_means_se(x: np.ndarray, n_batches: int = 40) -> float:
    """Monte-Carlo standard error of the mean of a correlated chain."""
    x = np.asarray(x, dtype=float)
    size = (x.size // n_batches) * n_batches
    batches = x[:size].reshape(n_batches, -1).mean(axis=1)
    return float(batches.std(ddof=1) / np.sqrt(n_batches))
