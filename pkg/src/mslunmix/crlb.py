"""Fisher information and Cramer-Rao lower bounds for the unmixing model.

The bounds use the Gaussian pulse (twice differentiable, unlike the
piecewise-exponential fit).  For a Poisson model with mean lam(theta), the
information matrix is sum over bins of (d lam / d theta)(d lam / d theta)^T
/ lam; the blocks for (areas, backgrounds, position) are assembled per band.

Parameter ordering is fixed and documented: (w_1..w_R, b_1..b_L, t0).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import InputError, NumericalFailure
from .forward_model import ImpulseParams, bin_grid, g_gaussian
from .posterior import ParameterVector
from .spectral_library import MaterialSpectrum, SpectralLibrary, resample_bands

__all__ = [
    "FisherMatrix",
    "CrlbReport",
    "fisher_matrix",
    "crlb_from_fisher",
    "relative_errors_pct",
    "SweepBase",
    "sweep",
    "SingularIntensityError",
    "IllConditionedFisherError",
]

DEFAULT_CONDITION_CAP = 1e12


class SingularIntensityError(NumericalFailure):
    """The intensity vanishes somewhere, so the information sums diverge."""


class IllConditionedFisherError(NumericalFailure):
    """The Fisher matrix is singular or too ill-conditioned to invert."""


def param_names(material_names: list[str], n_bands: int) -> list[str]:
    """Canonical parameter labels in the documented (w, b, t0) ordering."""
    return [f"w_{name}" for name in material_names] + [
        f"b_{ell}" for ell in range(1, n_bands + 1)
    ] + ["t0"]


@dataclass(frozen=True)
class FisherMatrix:
    """Symmetric information matrix with its parameter labels."""

    J: np.ndarray
    names: list[str]

    @property
    def size(self) -> int:
        return self.J.shape[0]


@dataclass(frozen=True)
class CrlbReport:
    """Per-parameter variance bounds and relative errors for one configuration."""

    names: list[str]
    truths: np.ndarray
    variances: np.ndarray
    rel_err_pct: np.ndarray
    condition_number: float
    axis_value: float | None = None
    material_names: list[str] = field(default_factory=list)

    @property
    def area_variances(self) -> np.ndarray:
        n = len(self.material_names)
        return self.variances[:n]

    @property
    def area_rel_err_pct(self) -> np.ndarray:
        n = len(self.material_names)
        return self.rel_err_pct[:n]

    @property
    def t0_variance(self) -> float:
        return float(self.variances[-1])


def fisher_matrix(
    lib: SpectralLibrary,
    theta: ParameterVector,
    beta: float,
    sigma2: float,
    n_bins: int,
) -> FisherMatrix:
    """Assemble the information matrix of the Gaussian-pulse Poisson model.

    Requires a strictly positive intensity everywhere (guaranteed when every
    background level is positive).
    """
    L, R = lib.n_bands, lib.n_materials
    if theta.w.shape != (R,):
        raise InputError(f"theta has {theta.w.size} areas, library has {R} materials")
    if theta.b.shape != (L,):
        raise InputError(f"theta has {theta.b.size} backgrounds, library has {L} bands")
    t = bin_grid(n_bins)
    g = g_gaussian(t, theta.t0, beta, sigma2)
    amplitude = lib.M @ theta.w
    pos_weight = g * (t - theta.t0) / sigma2  # d g / d t0, divided by g

    n_params = R + L + 1
    J = np.zeros((n_params, n_params))
    for ell in range(L):
        lam = amplitude[ell] * g + theta.b[ell]
        if lam.size and lam.min() <= 0:
            raise SingularIntensityError(
                f"intensity vanishes in band {ell + 1}; bounds undefined "
                "(set a positive background)"
            )
        # rows of the derivative of lam w.r.t. (w, b_ell, t0) in this band
        deriv = np.zeros((n_params, n_bins))
        deriv[:R] = lib.M[ell][:, None] * g[None, :]
        deriv[R + ell] = 1.0
        deriv[-1] = amplitude[ell] * pos_weight
        J += (deriv / lam) @ deriv.T
    J = 0.5 * (J + J.T)
    return FisherMatrix(J=J, names=param_names(list(lib.material_names), L))


def relative_errors_pct(variances: np.ndarray, truths: np.ndarray) -> np.ndarray:
    """sqrt(variance) / |true value| as percentages; inf where the truth is 0."""
    variances = np.asarray(variances, dtype=float)
    truths = np.asarray(truths, dtype=float)
    out = np.full(variances.shape, np.inf)
    nonzero = truths != 0
    out[nonzero] = 100.0 * np.sqrt(variances[nonzero]) / np.abs(truths[nonzero])
    return out


def crlb_from_fisher(
    fisher: FisherMatrix,
    theta: ParameterVector,
    condition_cap: float = DEFAULT_CONDITION_CAP,
    axis_value: float | None = None,
    material_names: list[str] | None = None,
) -> CrlbReport:
    """Variance bounds: diagonal of the inverse information matrix.

    Inverts through a symmetric positive-definite factorization and refuses
    (never pseudo-inverts) when the condition number exceeds the cap.
    """
    J = fisher.J
    eigs = np.linalg.eigvalsh(J)
    if eigs[0] <= 0:
        raise IllConditionedFisherError(
            f"Fisher matrix is singular (min eigenvalue {eigs[0]:.3e}); "
            "check for duplicated spectra or vanishing signal"
        )
    condition = float(eigs[-1] / eigs[0])
    if condition > condition_cap:
        raise IllConditionedFisherError(
            f"Fisher matrix condition number {condition:.3e} exceeds cap {condition_cap:.1e}"
        )
    factor = cho_factor(J)
    inv = cho_solve(factor, np.eye(J.shape[0]))
    variances = np.diag(inv).copy()
    truths = np.concatenate([theta.w, theta.b, [theta.t0]])
    if material_names is None:
        material_names = [n[2:] for n in fisher.names if n.startswith("w_")]
    return CrlbReport(
        names=list(fisher.names),
        truths=truths,
        variances=variances,
        rel_err_pct=relative_errors_pct(variances, truths),
        condition_number=condition,
        axis_value=axis_value,
        material_names=list(material_names),
    )


@dataclass(frozen=True)
class SweepBase:
    """Reference configuration that sweeps perturb one axis at a time."""

    spectra: list[MaterialSpectrum]
    w: np.ndarray
    t0: float
    b_level: float
    n_bins: int
    beta: float
    sigma2: float
    n_bands: int
    lo_nm: float = 400.0
    hi_nm: float = 2500.0

    def __post_init__(self):
        object.__setattr__(self, "w", np.atleast_1d(np.asarray(self.w, dtype=float)))


SWEEP_AXES = ("bands", "beta", "background")


def report_as_dict(report: CrlbReport) -> dict:
    """JSON-ready view of a bound report."""
    out = {
        "names": list(report.names),
        "truths": report.truths.tolist(),
        "variances": report.variances.tolist(),
        "rel_err_pct": report.rel_err_pct.tolist(),
        "condition_number": report.condition_number,
        "material_names": list(report.material_names),
    }
    if report.axis_value is not None:
        out["axis_value"] = report.axis_value
    return out


def write_sweep_csv(reports: list[CrlbReport], path) -> None:
    """Plot-ready rows `axis_value,param_name,crlb,rel_err_pct`.

    Only the area and position rows are emitted (background bounds stay in
    the JSON report; their count varies along the bands axis).
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("axis_value,param_name,crlb,rel_err_pct\n")
        for rep in reports:
            rows = [(f"w_{name}", i) for i, name in enumerate(rep.material_names)]
            rows.append(("t0", len(rep.variances) - 1))
            for name, i in rows:
                fh.write(
                    f"{rep.axis_value},{name},{rep.variances[i]!r},{rep.rel_err_pct[i]!r}\n"
                )


def sweep(base: SweepBase, axis: str, grid) -> list[CrlbReport]:
    """Bound reports along one design axis, everything else at the reference.

    axis 'bands' re-grids the spectra to each band count (equal spacing over
    the reference wavelength range); 'beta' scales the pulse amplitude;
    'background' sets the common per-band background level.
    """
    if axis not in SWEEP_AXES:
        raise InputError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    grid = list(grid)
    if not grid:
        raise InputError("sweep grid must be nonempty")
    reports = []
    for value in grid:
        n_bands = base.n_bands
        beta = base.beta
        b_level = base.b_level
        if axis == "bands":
            n_bands = int(value)
            if n_bands < 1:
                raise InputError(f"band count {value} must be a positive integer")
        elif axis == "beta":
            beta = float(value)
            if beta <= 0:
                raise InputError(f"beta {value} must be positive")
        else:
            b_level = float(value)
            if b_level < 0:
                raise InputError(f"background level {value} must be nonnegative")
        lib = resample_bands(base.spectra, n_bands, base.lo_nm, base.hi_nm)
        theta = ParameterVector(w=base.w, b=np.full(n_bands, b_level), t0=base.t0)
        fisher = fisher_matrix(lib, theta, beta, base.sigma2, base.n_bins)
        reports.append(
            crlb_from_fisher(
                fisher,
                theta,
                axis_value=float(value),
                material_names=list(lib.material_names),
            )
        )
    return reports
