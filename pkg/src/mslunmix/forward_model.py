"""Instrument impulse response, per-bin intensities, and Poisson simulation.

The detected waveform in band ell is a histogram of photon counts over T
range bins.  Bin t has Poisson mean ``(m_ell . w) g(t) + b_ell`` where g is
the instrument pulse centered at the target position t0.  Two pulse shapes
are supported: the fitted four-branch piecewise exponential, and a Gaussian
used where differentiability matters (performance bounds).

Bins are indexed 1..T; positions are real-valued and not restricted to
integer bins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .spectral_library import SpectralLibrary

__all__ = [
    "ImpulseParams",
    "SceneSingle",
    "SceneMulti",
    "WaveformSet",
    "g_piecewise",
    "g_gaussian",
    "pulse_support",
    "intensity_single",
    "intensity_multi",
    "simulate",
    "NegativeIntensityError",
]

SHAPES = ("piecewise", "gaussian")


class NegativeIntensityError(InputError):
    """Poisson means must be nonnegative."""


@dataclass(frozen=True)
class ImpulseParams:
    """Pulse-shape parameters, all in bin units (photons for the amplitude).

    t1: offset left of the peak where the rising exponential hands over to
        the Gaussian core; tau1 its rise constant.
    t2: offset right of the peak where the first decay starts; tau2 its
        constant.  t3/tau3: start and constant of the slower second decay.
    sigma2: variance of the Gaussian core; beta: peak amplitude.
    """

    t1: float
    t2: float
    t3: float
    tau1: float
    tau2: float
    tau3: float
    sigma2: float
    beta: float

    def __post_init__(self):
        for name in ("t1", "t2", "t3", "tau1", "tau2", "tau3", "sigma2", "beta"):
            if not getattr(self, name) > 0:
                raise InputError(f"impulse parameter {name} must be strictly positive")
        if not self.t2 < self.t3:
            raise InputError("decay segments must be ordered: t2 < t3")


@dataclass(frozen=True)
class SceneSingle:
    """Single-surface target: relative areas w, position t0, backgrounds b.

    The areas need not sum to one (light can pass through the target).
    """

    w: np.ndarray
    t0: float
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w", np.atleast_1d(np.asarray(self.w, dtype=float)))
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, dtype=float)))
        if np.any(self.w < 0):
            raise InputError("relative areas must be nonnegative")
        if np.any(self.b < 0):
            raise InputError("background levels must be nonnegative")

    def check_position(self, n_bins: int) -> None:
        if not 1.0 < self.t0 < n_bins:
            raise InputError(f"target position {self.t0} outside the open interval (1, {n_bins})")


@dataclass(frozen=True)
class SceneMulti:
    """Multi-surface target: strictly increasing positions, area matrix W (R x D)."""

    layer_positions: np.ndarray
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "layer_positions", np.atleast_1d(np.asarray(self.layer_positions, dtype=float))
        )
        object.__setattr__(self, "W", np.atleast_2d(np.asarray(self.W, dtype=float)))
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, dtype=float)))
        if self.layer_positions.size < 1:
            raise InputError("need at least one layer")
        if np.any(np.diff(self.layer_positions) <= 0):
            raise InputError("layer positions must be strictly increasing")
        if self.W.shape[1] != self.layer_positions.size:
            raise InputError(
                f"W must have one column per layer ({self.layer_positions.size}), "
                f"got shape {self.W.shape}"
            )
        if np.any(self.W < 0):
            raise InputError("relative areas must be nonnegative")
        if np.any(self.b < 0):
            raise InputError("background levels must be nonnegative")

    @property
    def n_layers(self) -> int:
        return self.layer_positions.size


@dataclass(frozen=True)
class WaveformSet:
    """L x T matrix of photon counts, optionally tagged with band wavelengths."""

    Y: np.ndarray
    band_wavelengths: np.ndarray | None = None

    def __post_init__(self):
        Y = np.asarray(self.Y)
        if Y.ndim != 2:
            raise InputError("Y must be a 2-D L x T matrix")
        if Y.size and (np.any(Y < 0) or not np.issubdtype(Y.dtype, np.integer)):
            if not np.issubdtype(Y.dtype, np.integer):
                if np.any(Y != np.round(Y)):
                    raise InputError("photon counts must be integers")
                Y = Y.astype(np.int64)
            if np.any(Y < 0):
                raise InputError("photon counts must be nonnegative")
        object.__setattr__(self, "Y", np.ascontiguousarray(Y, dtype=np.int64))
        if self.band_wavelengths is not None:
            wl = np.atleast_1d(np.asarray(self.band_wavelengths, dtype=float))
            if wl.shape != (self.Y.shape[0],):
                raise InputError("band_wavelengths must have one entry per band")
            object.__setattr__(self, "band_wavelengths", wl)

    @property
    def n_bands(self) -> int:
        return self.Y.shape[0]

    @property
    def n_bins(self) -> int:
        return self.Y.shape[1]


def g_piecewise(t, t0: float, phi: ImpulseParams):
    """Four-branch pulse: rising exponential, Gaussian core, two decays.

    In the offset u = t - t0 the branches are
      u <  -t1        : exp(-t1^2/(2 s2)) * exp((u + t1)/tau1)
      -t1 <= u < t2   : exp(-u^2/(2 s2))
      t2 <= u < t3    : exp(-t2^2/(2 s2)) * exp(-(u - t2)/tau2)
      u >= t3         : exp(-t2^2/(2 s2)) * exp(-(t3 - t2)/tau2) * exp(-(u - t3)/tau3)
    scaled by the peak amplitude.  Adjacent branches agree at every boundary.
    """
    u = np.asarray(t, dtype=float) - t0
    s2 = 2.0 * phi.sigma2
    core_left = math.exp(-phi.t1 * phi.t1 / s2)
    core_right = math.exp(-phi.t2 * phi.t2 / s2)
    tail_start = core_right * math.exp(-(phi.t3 - phi.t2) / phi.tau2)
    out = np.where(
        u < -phi.t1,
        core_left * np.exp((u + phi.t1) / phi.tau1),
        np.where(
            u < phi.t2,
            np.exp(-(u * u) / s2),
            np.where(
                u < phi.t3,
                core_right * np.exp(-(u - phi.t2) / phi.tau2),
                tail_start * np.exp(-(u - phi.t3) / phi.tau3),
            ),
        ),
    )
    result = phi.beta * out
    return result if result.ndim else float(result)


def g_gaussian(t, t0: float, beta: float, sigma2: float):
    """Gaussian pulse beta * exp(-(t - t0)^2 / (2 sigma2))."""
    if beta <= 0 or sigma2 <= 0:
        raise InputError("beta and sigma2 must be strictly positive")
    u = np.asarray(t, dtype=float) - t0
    result = beta * np.exp(-(u * u) / (2.0 * sigma2))
    return result if result.ndim else float(result)


def unit_pulse(t, t0: float, phi: ImpulseParams, shape: str = "piecewise"):
    """Pulse normalized to unit peak amplitude."""
    if shape == "piecewise":
        return g_piecewise(t, t0, phi) / phi.beta
    if shape == "gaussian":
        return g_gaussian(t, t0, 1.0, phi.sigma2)
    raise InputError(f"unknown pulse shape {shape!r}")


def pulse_support(phi: ImpulseParams, shape: str = "piecewise", rel_threshold: float = 1e-12):
    """Offsets (u_lo, u_hi) outside which the pulse is below rel_threshold * peak.

    Solved analytically branch by branch; used to window likelihood sums.
    """
    if not 0 < rel_threshold < 1:
        raise InputError("rel_threshold must lie in (0, 1)")
    log_thr = math.log(rel_threshold)
    s2 = 2.0 * phi.sigma2
    gauss_u = math.sqrt(-s2 * log_thr)
    if shape == "gaussian":
        return -gauss_u, gauss_u
    if shape != "piecewise":
        raise InputError(f"unknown pulse shape {shape!r}")
    log_core_left = -phi.t1 * phi.t1 / s2
    if log_core_left <= log_thr:
        u_lo = -min(gauss_u, phi.t1)
    else:
        u_lo = -phi.t1 + phi.tau1 * (log_thr - log_core_left)
    log_core_right = -phi.t2 * phi.t2 / s2
    if log_core_right <= log_thr:
        u_hi = min(gauss_u, phi.t2)
    else:
        u_mid = phi.t2 + phi.tau2 * (log_core_right - log_thr)
        if u_mid <= phi.t3:
            u_hi = u_mid
        else:
            log_tail = log_core_right - (phi.t3 - phi.t2) / phi.tau2
            u_hi = phi.t3 + phi.tau3 * (log_tail - log_thr)
    return u_lo, u_hi


def _pulse(t, t0: float, phi: ImpulseParams, shape: str):
    if shape == "piecewise":
        return g_piecewise(t, t0, phi)
    if shape == "gaussian":
        return g_gaussian(t, t0, phi.beta, phi.sigma2)
    raise InputError(f"unknown pulse shape {shape!r}")


def bin_grid(n_bins: int) -> np.ndarray:
    """The integer bin centers 1..T."""
    if n_bins < 0:
        raise InputError("number of bins must be nonnegative")
    return np.arange(1, n_bins + 1, dtype=float)


def intensity_single(
    lib: SpectralLibrary,
    scene: SceneSingle,
    phi: ImpulseParams,
    n_bins: int,
    shape: str = "piecewise",
) -> np.ndarray:
    """Poisson mean matrix (m_ell . w) g(t) + b_ell over bins t = 1..T."""
    if scene.w.shape != (lib.n_materials,):
        raise InputError(
            f"scene has {scene.w.size} areas but the library has {lib.n_materials} materials"
        )
    if scene.b.shape != (lib.n_bands,):
        raise InputError(
            f"scene has {scene.b.size} background levels but the library has {lib.n_bands} bands"
        )
    g = _pulse(bin_grid(n_bins), scene.t0, phi, shape)
    amplitude = lib.M @ scene.w
    return np.outer(amplitude, g) + scene.b[:, None]


def intensity_multi(
    lib: SpectralLibrary,
    scene: SceneMulti,
    phi: ImpulseParams,
    n_bins: int,
    shape: str = "piecewise",
) -> np.ndarray:
    """Poisson mean matrix for a layered target: shared pulse shape per layer."""
    if scene.W.shape[0] != lib.n_materials:
        raise InputError(
            f"W has {scene.W.shape[0]} material rows but the library has {lib.n_materials}"
        )
    if scene.b.shape != (lib.n_bands,):
        raise InputError(
            f"scene has {scene.b.size} background levels but the library has {lib.n_bands} bands"
        )
    t = bin_grid(n_bins)
    out = np.tile(scene.b[:, None], (1, n_bins)).astype(float)
    for d in range(scene.n_layers):
        g = _pulse(t, scene.layer_positions[d], phi, shape)
        out += np.outer(lib.M @ scene.W[:, d], g)
    return out


def waveforms_to_csv(waveforms: WaveformSet, path) -> None:
    """Write counts as `band,bin,count` triples (1-based indices) with a header."""
    Y = waveforms.Y
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("band,bin,count\n")
        for ell in range(Y.shape[0]):
            row = Y[ell]
            fh.writelines(f"{ell + 1},{t + 1},{row[t]}\n" for t in range(Y.shape[1]))


def waveforms_from_csv(path, band_wavelengths: np.ndarray | None = None) -> WaveformSet:
    """Read a `band,bin,count` CSV back into a waveform set."""
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    except ValueError as exc:
        raise InputError(f"{path}: malformed waveform CSV: {exc}") from None
    if data.size == 0 or data.shape[1] != 3:
        raise InputError(f"{path}: expected rows of band,bin,count triples")
    bands, bins, counts = data[:, 0], data[:, 1], data[:, 2]
    L, T = int(bands.max()), int(bins.max())
    if bands.min() < 1 or bins.min() < 1:
        raise InputError(f"{path}: band and bin indices are 1-based")
    if data.shape[0] != L * T:
        raise InputError(f"{path}: expected {L * T} rows for {L} bands x {T} bins")
    Y = np.zeros((L, T), dtype=np.int64)
    Y[bands - 1, bins - 1] = counts
    return WaveformSet(Y=Y, band_wavelengths=band_wavelengths)


def simulate(
    intensity: np.ndarray, seed: int, band_wavelengths: np.ndarray | None = None
) -> WaveformSet:
    """Draw independent Poisson counts with the given means; deterministic per seed."""
    intensity = np.asarray(intensity, dtype=float)
    if intensity.ndim != 2:
        raise InputError("intensity must be a 2-D L x T matrix")
    if intensity.size and intensity.min() < 0:
        ell, t = np.unravel_index(int(np.argmin(intensity)), intensity.shape)
        raise NegativeIntensityError(
            f"negative intensity {intensity[ell, t]} at band {ell + 1}, bin {t + 1}"
        )
    rng = np.random.default_rng(seed)
    counts = rng.poisson(intensity).astype(np.int64)
    return WaveformSet(Y=counts, band_wavelengths=band_wavelengths)
