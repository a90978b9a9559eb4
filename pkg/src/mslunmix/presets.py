"""Bundled defaults: instrument pulse fit, demo scenes, and packaged spectra.

The pulse constants come from fitting a measured instrumental impulse
response; the Gaussian variant uses its own fitted variance.  The demo
scenes give a reproducible starting point for the CLI and the test suite.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from .forward_model import ImpulseParams, SceneMulti, SceneSingle
from .posterior import Hyperparams
from .spectral_library import (
    MaterialSpectrum,
    SpectralLibrary,
    add_flat_material,
    load_spectra,
    resample_bands,
)

__all__ = [
    "instrument_impulse",
    "GAUSSIAN_SIGMA2",
    "bundled_spectra",
    "bundled_library",
    "demo_scene",
    "demo_hyper",
    "DEMO_N_BINS",
    "multilayer_demo",
]

# Fitted pulse constants (bins / photons); the Gaussian fit has its own variance.
PIECEWISE_SIGMA2 = 105.82
GAUSSIAN_SIGMA2 = 105.68
_PULSE = dict(t1=402.0, t2=12.5, t3=239.0, tau1=395.0, tau2=7.9, tau3=1595.0)

DEMO_N_BINS = 2500
DEMO_BETA = 3000.0
DEMO_T0 = 1000.0
DEMO_BACKGROUND = 10.0
DEMO_AREAS = (0.2, 0.3, 0.4)  # needle, bark, soil


def instrument_impulse(shape: str = "piecewise", beta: float = DEMO_BETA) -> ImpulseParams:
    """Fitted pulse parameters; pass shape='gaussian' for the Gaussian variant."""
    sigma2 = PIECEWISE_SIGMA2 if shape == "piecewise" else GAUSSIAN_SIGMA2
    return ImpulseParams(sigma2=sigma2, beta=beta, **_PULSE)


def bundled_spectra() -> list[MaterialSpectrum]:
    """The packaged needle/bark/soil reflectance spectra (400-2500 nm)."""
    path = resources.files("mslunmix").joinpath("data/needle_bark_soil.csv")
    with resources.as_file(path) as p:
        return load_spectra(p)


def bundled_library(n_bands: int = 32, lo: float = 400.0, hi: float = 2500.0) -> SpectralLibrary:
    """Packaged spectra resampled to an equally spaced band grid."""
    return resample_bands(bundled_spectra(), n_bands, lo, hi)


def demo_scene(n_bands: int = 32) -> SceneSingle:
    """Single-surface demo: areas (0.2, 0.3, 0.4), position 1000, background 10."""
    return SceneSingle(
        w=np.array(DEMO_AREAS),
        t0=DEMO_T0,
        b=np.full(n_bands, DEMO_BACKGROUND),
    )


def demo_hyper() -> Hyperparams:
    """Weakly informative prior variances used throughout the demos."""
    return Hyperparams(alpha2=1e6, gamma2=1e6)


def multilayer_demo(n_bands: int = 32) -> tuple[SpectralLibrary, SceneMulti, ImpulseParams]:
    """Three-layer demo target with a diffuse-reference fourth material.

    Layers at bins 1000/1500/2000; the first two mix needle/bark/soil, the
    third is a spectrally flat reference panel.  Pulse amplitude 1e4.
    """
    lib = add_flat_material(bundled_library(n_bands), "spectralon", 0.99)
    W = np.array(
        [
            [0.099, 0.080, 0.0],
            [0.099, 0.200, 0.0],
            [0.102, 0.120, 0.0],
            [0.0, 0.0, 0.30],
        ]
    )
    scene = SceneMulti(
        layer_positions=np.array([1000.0, 1500.0, 2000.0]),
        W=W,
        b=np.full(n_bands, DEMO_BACKGROUND),
    )
    return lib, scene, instrument_impulse(beta=1e4)
