"""Material reflectance spectra and the band-sampled mixing matrix.

A :class:`SpectralLibrary` holds the L x R matrix of reflectances (one
column per material) that maps relative material areas to per-band signal
amplitudes.  Spectra are loaded from CSV, resampled onto an equally spaced
band grid by piecewise-linear interpolation, or synthesized with a
prescribed correlation structure for controlled experiments.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

__all__ = [
    "MaterialSpectrum",
    "SpectralLibrary",
    "load_spectra",
    "resample_bands",
    "synth_library",
    "pairwise_correlation",
    "add_flat_material",
    "SpectraParseError",
    "NonMonotoneWavelengthsError",
    "ReflectanceRangeError",
    "BandSupportError",
    "ZeroVarianceError",
    "InfeasibleCorrelationError",
]


class SpectraParseError(InputError):
    """CSV file does not conform to the spectra schema."""


class NonMonotoneWavelengthsError(InputError):
    """Wavelength grid is not strictly increasing."""


class ReflectanceRangeError(InputError):
    """A reflectance value lies outside [0, 1]."""


class BandSupportError(InputError):
    """A requested band lies outside a spectrum's wavelength support."""


class ZeroVarianceError(InputError):
    """Correlation undefined: a library column has zero variance."""


class InfeasibleCorrelationError(InputError):
    """The requested correlation target could not be realized."""


@dataclass(frozen=True)
class MaterialSpectrum:
    """A named reflectance spectrum on a strictly increasing wavelength grid."""

    name: str
    wavelengths: np.ndarray
    reflectance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "wavelengths", np.asarray(self.wavelengths, dtype=float))
        object.__setattr__(self, "reflectance", np.asarray(self.reflectance, dtype=float))
        if self.wavelengths.ndim != 1 or self.reflectance.ndim != 1:
            raise InputError(f"spectrum {self.name!r}: wavelengths and reflectance must be 1-D")
        if self.wavelengths.size != self.reflectance.size or self.wavelengths.size < 2:
            raise InputError(
                f"spectrum {self.name!r}: need equal-length arrays with at least 2 samples"
            )
        if np.any(np.diff(self.wavelengths) <= 0):
            bad = int(np.argmax(np.diff(self.wavelengths) <= 0))
            raise NonMonotoneWavelengthsError(
                f"spectrum {self.name!r}: wavelengths not strictly increasing at index {bad + 1}"
            )
        if np.any((self.reflectance < 0) | (self.reflectance > 1)):
            bad = int(np.argmax((self.reflectance < 0) | (self.reflectance > 1)))
            raise ReflectanceRangeError(
                f"spectrum {self.name!r}: reflectance {self.reflectance[bad]} at "
                f"wavelength {self.wavelengths[bad]} nm outside [0, 1]"
            )


@dataclass(frozen=True)
class SpectralLibrary:
    """Band-sampled reflectances: column r of ``M`` is material r's signature."""

    band_wavelengths: np.ndarray
    M: np.ndarray
    material_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        object.__setattr__(self, "band_wavelengths", np.asarray(self.band_wavelengths, dtype=float))
        object.__setattr__(self, "M", np.asarray(self.M, dtype=float))
        if self.M.ndim != 2:
            raise InputError("M must be a 2-D L x R matrix")
        L, R = self.M.shape
        if L < 1 or R < 1:
            raise InputError("library needs at least one band and one material")
        if self.band_wavelengths.shape != (L,):
            raise InputError(f"band_wavelengths must have length {L}")
        if not self.material_names:
            object.__setattr__(self, "material_names", [f"material_{r}" for r in range(R)])
        if len(self.material_names) != R:
            raise InputError(f"expected {R} material names, got {len(self.material_names)}")
        if np.any((self.M < 0) | (self.M > 1)):
            raise ReflectanceRangeError("library matrix entries must lie in [0, 1]")

    @property
    def n_bands(self) -> int:
        return self.M.shape[0]

    @property
    def n_materials(self) -> int:
        return self.M.shape[1]


def load_spectra(path) -> list[MaterialSpectrum]:
    """Read material spectra from a CSV file.

    Schema: header ``wavelength_nm,<name1>,...,<nameR>``, one row per
    wavelength, '.' decimal separator.  Returns one spectrum per
    non-wavelength column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SpectraParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "wavelength_nm":
            raise SpectraParseError(
                f"{path}: header must be 'wavelength_nm,<name1>,...', got {header!r}"
            )
        names = header[1:]
        rows = []
        for i, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SpectraParseError(
                    f"{path}: row {i} has {len(row)} fields, expected {len(header)}"
                )
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                bad = next(c for c in row if not _is_float(c))
                raise SpectraParseError(f"{path}: row {i}: non-numeric value {bad!r}") from exc
    if not rows:
        raise SpectraParseError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)
    wl = data[:, 0]
    if np.any(np.diff(wl) <= 0):
        bad = int(np.argmax(np.diff(wl) <= 0))
        raise NonMonotoneWavelengthsError(
            f"{path}: wavelengths not strictly increasing between rows {bad + 2} and {bad + 3}"
        )
    spectra = []
    for j, name in enumerate(names):
        col = data[:, j + 1]
        out = (col < 0) | (col > 1)
        if np.any(out):
            bad = int(np.argmax(out))
            raise ReflectanceRangeError(
                f"{path}: column {name!r}, row {bad + 2}: reflectance {col[bad]} outside [0, 1]"
            )
        spectra.append(MaterialSpectrum(name=name, wavelengths=wl, reflectance=col))
    return spectra


def _is_float(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def band_grid(n_bands: int, lo: float, hi: float) -> np.ndarray:
    """Equally spaced band wavelengths spanning [lo, hi]; midpoint when n=1."""
    if n_bands < 1:
        raise InputError("need at least one band")
    if hi <= lo:
        raise InputError(f"invalid band range [{lo}, {hi}]")
    if n_bands == 1:
        return np.array([(lo + hi) / 2.0])
    return np.linspace(lo, hi, n_bands)


def resample_bands(
    spectra: list[MaterialSpectrum], n_bands: int, lo: float = 400.0, hi: float = 2500.0
) -> SpectralLibrary:
    """Sample each spectrum at equally spaced bands by linear interpolation.

    No extrapolation: every spectrum must cover [lo, hi].
    """
    grid = band_grid(n_bands, lo, hi)
    columns = []
    for spec in spectra:
        if spec.wavelengths[0] > grid[0] or spec.wavelengths[-1] < grid[-1]:
            raise BandSupportError(
                f"spectrum {spec.name!r} covers [{spec.wavelengths[0]}, {spec.wavelengths[-1]}] nm, "
                f"cannot sample bands in [{grid[0]}, {grid[-1]}] nm"
            )
        columns.append(np.interp(grid, spec.wavelengths, spec.reflectance))
    M = np.column_stack(columns)
    return SpectralLibrary(band_wavelengths=grid, M=M, material_names=[s.name for s in spectra])


def pairwise_correlation(lib: SpectralLibrary) -> np.ndarray:
    """Pearson correlation matrix of the library columns across bands."""
    if lib.n_bands < 2:
        raise InputError("pairwise correlation needs at least 2 bands")
    M = lib.M
    sd = M.std(axis=0)
    if np.any(sd <= 0):
        bad = int(np.argmax(sd <= 0))
        raise ZeroVarianceError(
            f"column {lib.material_names[bad]!r} has zero variance; correlation undefined"
        )
    corr = np.corrcoef(M, rowvar=False)
    return np.atleast_2d(corr)


_SYNTH_MAX_RETRIES = 10


def synth_library(
    n_materials: int,
    n_bands: int,
    target_corr: np.ndarray,
    seed: int,
    lo: float = 400.0,
    hi: float = 2500.0,
    names: list[str] | None = None,
    level_ranges: list[tuple[float, float]] | None = None,
) -> SpectralLibrary:
    """Synthesize smooth reflectance spectra with a prescribed column correlation.

    Smooth Gaussian-process draws are orthonormalized across bands, mixed by
    the Cholesky factor of ``target_corr``, and mapped affinely into [0, 1].
    Affine maps with positive slope preserve Pearson correlation, so the
    empirical correlation matches the target up to floating-point error.

    ``level_ranges`` optionally pins each material's (min, max) reflectance,
    controlling its mean energy.  Deterministic for a given seed.
    """
    if n_materials < 1 or n_bands < 1:
        raise InputError("need at least one material and one band")
    target_corr = np.atleast_2d(np.asarray(target_corr, dtype=float))
    if target_corr.shape != (n_materials, n_materials):
        raise InputError(f"target_corr must be {n_materials} x {n_materials}")
    if not np.allclose(target_corr, target_corr.T, atol=1e-12):
        raise InputError("target_corr must be symmetric")
    if not np.allclose(np.diag(target_corr), 1.0, atol=1e-12):
        raise InputError("target_corr must have unit diagonal")
    if np.any(np.abs(target_corr) > 1.0 + 1e-12):
        raise InputError("target_corr entries must lie in [-1, 1]")
    if names is None:
        names = [f"material_{r}" for r in range(n_materials)]
    grid = band_grid(n_bands, lo, hi)
    rng = np.random.default_rng(seed)

    if level_ranges is None:
        level_ranges = []
        for _ in range(n_materials):
            amp = rng.uniform(0.2, 0.5)
            off = rng.uniform(0.05, 0.9 - amp)
            level_ranges.append((off, off + amp))
    if len(level_ranges) != n_materials:
        raise InputError(f"expected {n_materials} level ranges")
    for low, high in level_ranges:
        if not (0.0 <= low < high <= 1.0):
            raise InputError(f"level range ({low}, {high}) must satisfy 0 <= low < high <= 1")

    if n_materials == 1:
        curve = _smooth_draws(rng, grid, 1)[:, 0]
        span = curve.max() - curve.min()
        unit = (curve - curve.min()) / span if span > 0 else np.full_like(curve, 0.5)
        low, high = level_ranges[0]
        M = (low + (high - low) * unit)[:, None]
        return SpectralLibrary(band_wavelengths=grid, M=M, material_names=list(names))

    if n_bands < n_materials + 1:
        raise InfeasibleCorrelationError(
            f"cannot realize an exact {n_materials}-material correlation with only {n_bands} bands"
        )
    try:
        chol = np.linalg.cholesky(target_corr + 1e-12 * np.eye(n_materials))
    except np.linalg.LinAlgError:
        raise InfeasibleCorrelationError("target_corr is not positive definite") from None

    for _ in range(_SYNTH_MAX_RETRIES):
        Z = _smooth_draws(rng, grid, n_materials)
        Z -= Z.mean(axis=0)
        Q, Rq = np.linalg.qr(Z)
        if np.min(np.abs(np.diag(Rq))) < 1e-10:
            continue  # degenerate draw, retry
        # Q columns are centered and orthonormal, so X = Q chol^T has empirical
        # covariance exactly equal to target_corr.
        X = Q @ chol.T
        cols = []
        ok = True
        for r in range(n_materials):
            x = X[:, r]
            span = x.max() - x.min()
            if span <= 0:
                ok = False
                break
            low, high = level_ranges[r]
            cols.append(low + (high - low) * (x - x.min()) / span)
        if not ok:
            continue
        M = np.column_stack(cols)
        return SpectralLibrary(band_wavelengths=grid, M=M, material_names=list(names))
    raise InfeasibleCorrelationError(
        f"could not realize the correlation target after {_SYNTH_MAX_RETRIES} attempts"
    )


def _smooth_draws(rng: np.random.Generator, grid: np.ndarray, count: int) -> np.ndarray:
    """Draw ``count`` smooth curves on ``grid`` from a squared-exponential GP."""
    x = (grid - grid[0]) / max(grid[-1] - grid[0], 1.0)
    gap = x[:, None] - x[None, :]
    kernel = np.exp(-0.5 * (gap / 0.15) ** 2) + 1e-8 * np.eye(x.size)
    chol = np.linalg.cholesky(kernel)
    return chol @ rng.standard_normal((x.size, count))


def write_spectra_csv(spectra: list[MaterialSpectrum], path) -> None:
    """Write spectra in the CSV schema read by :func:`load_spectra`.

    All spectra must share one wavelength grid.
    """
    if not spectra:
        raise InputError("nothing to write")
    grid = spectra[0].wavelengths
    for spec in spectra[1:]:
        if spec.wavelengths.shape != grid.shape or not np.array_equal(spec.wavelengths, grid):
            raise InputError("spectra must share a common wavelength grid for CSV export")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["wavelength_nm"] + [s.name for s in spectra])
        for i, wl in enumerate(grid):
            writer.writerow([repr(float(wl))] + [repr(float(s.reflectance[i])) for s in spectra])


def library_as_spectra(lib: SpectralLibrary) -> list[MaterialSpectrum]:
    """View the library columns as spectra on the band grid."""
    return [
        MaterialSpectrum(name=name, wavelengths=lib.band_wavelengths, reflectance=lib.M[:, r])
        for r, name in enumerate(lib.material_names)
    ]


def add_flat_material(lib: SpectralLibrary, name: str, reflectance: float = 0.99) -> SpectralLibrary:
    """Append a spectrally flat material (e.g. a diffuse reflectance standard)."""
    if not 0.0 <= reflectance <= 1.0:
        raise ReflectanceRangeError(f"flat reflectance {reflectance} outside [0, 1]")
    col = np.full((lib.n_bands, 1), reflectance)
    return SpectralLibrary(
        band_wavelengths=lib.band_wavelengths,
        M=np.hstack([lib.M, col]),
        material_names=list(lib.material_names) + [name],
    )
