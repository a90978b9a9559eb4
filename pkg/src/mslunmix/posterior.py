"""Log-likelihood, log-priors, unnormalized log-posterior, and the potential
energy (with gradient) used by the constrained-HMC area updates.

Out-of-support parameter values return -inf (or +inf for the potential)
rather than raising, so samplers can reject instead of crashing.  Inside log
terms the intensity is clamped below at ``INTENSITY_FLOOR`` photons: corners
like w = b = 0 are reachable by proposals and would otherwise produce NaNs.
The clamp makes such states finitely but overwhelmingly improbable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlogy

from .errors import InputError
from .forward_model import ImpulseParams, SceneSingle, WaveformSet, intensity_single
from .spectral_library import SpectralLibrary

__all__ = [
    "ParameterVector",
    "Hyperparams",
    "INTENSITY_FLOOR",
    "log_likelihood",
    "log_prior_w",
    "log_prior_b",
    "log_prior_t0",
    "log_posterior",
    "potential_energy",
    "grad_potential_w",
]

INTENSITY_FLOOR = 1e-12


@dataclass(frozen=True)
class ParameterVector:
    """The unknowns of the single-surface model: areas, backgrounds, position."""

    w: np.ndarray
    b: np.ndarray
    t0: float

    def __post_init__(self):
        object.__setattr__(self, "w", np.atleast_1d(np.asarray(self.w, dtype=float)))
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, dtype=float)))

    def in_support(self, n_bins: int) -> bool:
        return (
            bool(np.all(self.w >= 0))
            and bool(np.all(self.b >= 0))
            and 1.0 < self.t0 < n_bins
        )


@dataclass(frozen=True)
class Hyperparams:
    """Prior variances for the areas (alpha2) and backgrounds (gamma2)."""

    alpha2: float = 1e6
    gamma2: float = 1e6

    def __post_init__(self):
        if self.alpha2 <= 0 or self.gamma2 <= 0:
            raise InputError("prior variances must be strictly positive")


def _counts(Y) -> np.ndarray:
    if isinstance(Y, WaveformSet):
        return Y.Y
    Y = np.asarray(Y)
    if Y.ndim != 2:
        raise InputError("Y must be a 2-D L x T matrix")
    return Y


def log_likelihood(
    Y,
    lib: SpectralLibrary,
    theta: ParameterVector,
    phi: ImpulseParams,
    shape: str = "piecewise",
) -> float:
    """Poisson log-likelihood sum of y log(lam) - lam - log(y!) over all bins."""
    counts = _counts(Y)
    if counts.shape[1] == 0:
        return 0.0
    lam = intensity_single(
        lib, SceneSingle(w=theta.w, t0=theta.t0, b=theta.b), phi, counts.shape[1], shape
    )
    lam_log = np.maximum(lam, INTENSITY_FLOOR)
    return float(np.sum(xlogy(counts, lam_log) - lam) - np.sum(gammaln(counts + 1.0)))


def log_prior_w(w, alpha2: float) -> float:
    """Log density (up to a constant) of i.i.d. positive-half Gaussian areas."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if np.any(w < 0):
        return -math.inf
    return float(-(w @ w) / (2.0 * alpha2))


def log_prior_b(b, gamma2: float) -> float:
    """Log density (up to a constant) of i.i.d. positive-half Gaussian backgrounds."""
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if np.any(b < 0):
        return -math.inf
    return float(-(b @ b) / (2.0 * gamma2))


def log_prior_t0(t0: float, n_bins: int) -> float:
    """Log density (up to a constant) of the uniform position prior on (1, T)."""
    return 0.0 if 1.0 < t0 < n_bins else -math.inf


def log_posterior(
    Y,
    lib: SpectralLibrary,
    theta: ParameterVector,
    phi: ImpulseParams,
    hyper: Hyperparams,
    shape: str = "piecewise",
) -> float:
    """Unnormalized log-posterior: likelihood plus the three log-priors."""
    counts = _counts(Y)
    lp = log_prior_w(theta.w, hyper.alpha2) + log_prior_b(theta.b, hyper.gamma2)
    if counts.shape[1]:
        lp += log_prior_t0(theta.t0, counts.shape[1])
    if not math.isfinite(lp):
        return -math.inf
    return lp + log_likelihood(counts, lib, theta, phi, shape)


def potential_energy(
    w,
    Y,
    lib: SpectralLibrary,
    t0: float,
    b,
    alpha2: float,
    phi: ImpulseParams,
    shape: str = "piecewise",
) -> float:
    """Potential for the area block: -(sum y log lam - lam) + w.w / (2 alpha2).

    Equals the negative log conditional density of the areas up to an
    additive constant.  +inf outside the positive orthant.
    """
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if np.any(w < 0):
        return math.inf
    b = np.atleast_1d(np.asarray(b, dtype=float))
    counts = _counts(Y)
    quad = float(w @ w) / (2.0 * alpha2)
    if counts.shape[1] == 0:
        return quad
    lam = intensity_single(lib, SceneSingle(w=w, t0=t0, b=b), phi, counts.shape[1], shape)
    lam_log = np.maximum(lam, INTENSITY_FLOOR)
    return float(-np.sum(xlogy(counts, lam_log) - lam)) + quad


def grad_potential_w(
    w,
    Y,
    lib: SpectralLibrary,
    t0: float,
    b,
    alpha2: float,
    phi: ImpulseParams,
    shape: str = "piecewise",
) -> np.ndarray:
    """Gradient of the area potential: -sum (y/lam - 1) g(t) m_ell + w / alpha2.

    The division uses the clamped intensity, matching ``potential_energy``.
    """
    w = np.atleast_1d(np.asarray(w, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    counts = _counts(Y)
    if counts.shape[1] == 0:
        return w / alpha2
    from .forward_model import _pulse, bin_grid  # intensity pieces, not re-derived

    g = _pulse(bin_grid(counts.shape[1]), t0, phi, shape)
    lam = np.outer(lib.M @ w, g) + b[:, None]
    lam = np.maximum(lam, INTENSITY_FLOOR)
    ratio = counts / lam - 1.0
    per_band = ratio @ g
    return -(lib.M.T @ per_band) + w / alpha2
