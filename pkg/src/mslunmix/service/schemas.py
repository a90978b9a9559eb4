"""Request/response models for the unmixing service.

The wire formats double as the toolkit's file schemas: a library payload is
exactly the library export JSON, a scene payload is the scene descriptor
JSON, and so on.  Conversion helpers translate between the models and the
core domain objects.
"""

from __future__ import annotations

from typing import Literal

import numpy as np
from pydantic import BaseModel, Field

from ..crlb import CrlbReport
from ..errors import InputError
from ..forward_model import ImpulseParams, SceneMulti, SceneSingle, WaveformSet
from ..samplers import ChainConfig, ChainOutput, ChmcConfig, RwConfig, chain_summary
from ..spectral_library import MaterialSpectrum, SpectralLibrary, resample_bands

ShapeName = Literal["piecewise", "gaussian"]


class ImpulseModel(BaseModel):
    """Pulse-shape parameters (see the forward model for their meaning)."""

    t1: float
    t2: float
    t3: float
    tau1: float
    tau2: float
    tau3: float
    sigma2: float
    beta: float

    def to_params(self) -> ImpulseParams:
        return ImpulseParams(**self.model_dump())

    @classmethod
    def from_params(cls, phi: ImpulseParams) -> "ImpulseModel":
        return cls(
            t1=phi.t1, t2=phi.t2, t3=phi.t3, tau1=phi.tau1, tau2=phi.tau2,
            tau3=phi.tau3, sigma2=phi.sigma2, beta=phi.beta,
        )


class SpectrumModel(BaseModel):
    """One material spectrum on its native wavelength grid."""

    name: str
    wavelengths_nm: list[float]
    reflectance: list[float]

    def to_spectrum(self) -> MaterialSpectrum:
        return MaterialSpectrum(
            name=self.name,
            wavelengths=np.asarray(self.wavelengths_nm),
            reflectance=np.asarray(self.reflectance),
        )

    @classmethod
    def from_spectrum(cls, spec: MaterialSpectrum) -> "SpectrumModel":
        return cls(
            name=spec.name,
            wavelengths_nm=spec.wavelengths.tolist(),
            reflectance=spec.reflectance.tolist(),
        )


class LibraryModel(BaseModel):
    """Band-sampled library: M holds one row per band (row-major)."""

    band_wavelengths: list[float]
    material_names: list[str]
    M: list[list[float]]

    def to_library(self) -> SpectralLibrary:
        return SpectralLibrary(
            band_wavelengths=np.asarray(self.band_wavelengths),
            M=np.asarray(self.M),
            material_names=list(self.material_names),
        )

    @classmethod
    def from_library(cls, lib: SpectralLibrary) -> "LibraryModel":
        return cls(
            band_wavelengths=lib.band_wavelengths.tolist(),
            material_names=list(lib.material_names),
            M=lib.M.tolist(),
        )


class SceneModel(BaseModel):
    """Scene descriptor: single-surface (w, t0) or layered (W, layer_positions).

    The background accepts a scalar (broadcast over bands) or a per-band
    list.  W rows are materials, columns layers.
    """

    w: list[float] | None = None
    W: list[list[float]] | None = None
    t0: float | None = None
    layer_positions: list[float] | None = None
    b: float | list[float] = 0.0
    phi: ImpulseModel
    T: int = Field(gt=1)
    shape: ShapeName = "piecewise"
    seed: int | None = None

    def background(self, n_bands: int) -> np.ndarray:
        if isinstance(self.b, (int, float)):
            return np.full(n_bands, float(self.b))
        b = np.asarray(self.b, dtype=float)
        if b.shape != (n_bands,):
            raise InputError(f"background has {b.size} entries for {n_bands} bands")
        return b

    def is_multi(self) -> bool:
        if (self.w is None) == (self.W is None):
            raise InputError("scene needs exactly one of 'w' (single) or 'W' (layered)")
        if self.W is not None and self.layer_positions is None:
            raise InputError("layered scene needs 'layer_positions'")
        if self.w is not None and self.t0 is None:
            raise InputError("single-surface scene needs 't0'")
        return self.W is not None

    def to_scene(self, n_bands: int) -> SceneSingle | SceneMulti:
        b = self.background(n_bands)
        if self.is_multi():
            return SceneMulti(
                layer_positions=np.asarray(self.layer_positions, dtype=float),
                W=np.asarray(self.W, dtype=float),
                b=b,
            )
        scene = SceneSingle(w=np.asarray(self.w, dtype=float), t0=float(self.t0), b=b)
        scene.check_position(self.T)
        return scene


class LibraryInput(BaseModel):
    """Either an explicit library or raw spectra plus a band grid."""

    library: LibraryModel | None = None
    spectra: list[SpectrumModel] | None = None
    bands: int | None = None
    lo_nm: float = 400.0
    hi_nm: float = 2500.0

    def resolve(self) -> SpectralLibrary:
        if (self.library is None) == (self.spectra is None):
            raise InputError("provide exactly one of 'library' or 'spectra'")
        if self.library is not None:
            return self.library.to_library()
        if self.bands is None:
            raise InputError("'bands' is required when passing raw spectra")
        return resample_bands(
            [s.to_spectrum() for s in self.spectra], self.bands, self.lo_nm, self.hi_nm
        )

    def resolve_spectra(self) -> list[MaterialSpectrum]:
        if self.spectra is None:
            raise InputError("this operation needs raw spectra (band grids vary)")
        return [s.to_spectrum() for s in self.spectra]


class WaveformModel(BaseModel):
    """Photon-count matrix with optional band wavelengths."""

    counts: list[list[int]]
    band_wavelengths: list[float] | None = None

    def to_waveforms(self) -> WaveformSet:
        return WaveformSet(
            Y=np.asarray(self.counts, dtype=np.int64),
            band_wavelengths=(
                np.asarray(self.band_wavelengths) if self.band_wavelengths else None
            ),
        )

    @classmethod
    def from_waveforms(cls, wf: WaveformSet) -> "WaveformModel":
        return cls(
            counts=wf.Y.tolist(),
            band_wavelengths=(
                wf.band_wavelengths.tolist() if wf.band_wavelengths is not None else None
            ),
        )


class ChainSettingsModel(BaseModel):
    """Sampler settings with the standard defaults."""

    n_mc: int = 8000
    n_bi: int = 4000
    seed: int = 0
    ci_level: float = 0.9
    step_size: float = 0.01
    leapfrog_min: int = 10
    leapfrog_max: int = 50
    chmc_adapt_target: float = 0.65
    stddev_t0: float = 2.0
    stddev_b: float = 1.0
    rw_adapt_target: float = 0.45

    def to_config(self) -> ChainConfig:
        return ChainConfig(
            n_mc=self.n_mc,
            n_bi=self.n_bi,
            seed=self.seed,
            ci_level=self.ci_level,
            chmc=ChmcConfig(
                leapfrog_steps_range=(self.leapfrog_min, self.leapfrog_max),
                step_size=self.step_size,
                adapt_target=self.chmc_adapt_target,
            ),
            rw=RwConfig(
                init_stddev_t0=self.stddev_t0,
                init_stddev_b=self.stddev_b,
                adapt_target=self.rw_adapt_target,
            ),
        )


# -- requests ---------------------------------------------------------------


class SimulateRequest(BaseModel):
    source: LibraryInput
    scene: SceneModel
    seed: int | None = None  # overrides the scene's seed


class UnmixRequest(BaseModel):
    source: LibraryInput
    waveforms: WaveformModel
    phi: ImpulseModel
    shape: ShapeName = "piecewise"
    layers: list[float] | None = None
    chain: ChainSettingsModel = Field(default_factory=ChainSettingsModel)
    alpha2: float = 1e6
    gamma2: float = 1e6
    keep_samples: bool = False


class CrlbRequest(BaseModel):
    source: LibraryInput
    scene: SceneModel
    sigma2: float | None = None  # Gaussian-pulse variance; None -> scene phi's sigma2


class SweepRequest(BaseModel):
    source: LibraryInput
    scene: SceneModel
    axis: Literal["bands", "beta", "background"]
    grid: list[float]
    sigma2: float | None = None


class BenchRequest(BaseModel):
    source: LibraryInput
    scene: SceneModel
    chain: ChainSettingsModel = Field(default_factory=ChainSettingsModel)
    n_runs: int = 100
    base_seed: int = 0
    estimators: list[Literal["bayes", "baseline"]] = ["bayes", "baseline"]
    alpha2: float = 1e6
    gamma2: float = 1e6
    sigma2: float | None = None
    n_workers: int = 1


class SynthRequest(BaseModel):
    materials: int = Field(ge=1)
    bands: int = Field(ge=1)
    target_corr: list[list[float]]
    seed: int = 0
    lo_nm: float = 400.0
    hi_nm: float = 2500.0
    names: list[str] | None = None
    level_ranges: list[tuple[float, float]] | None = None


# -- responses ---------------------------------------------------------------


class SimulateResponse(BaseModel):
    waveforms: WaveformModel
    seed: int


class UnmixResponse(BaseModel):
    mmse: dict
    ci: dict
    ci_level: float
    acceptance: dict
    samples: dict | None = None

    @classmethod
    def from_output(cls, output: ChainOutput, keep_samples: bool) -> "UnmixResponse":
        summary = chain_summary(output)
        samples = None
        if keep_samples:
            samples = {
                "w": output.samples_w.tolist(),
                "t0": output.samples_t0.tolist() if output.samples_t0 is not None else None,
                "b": output.samples_b.tolist(),
            }
        return cls(samples=samples, **summary)


def sanitize_floats(values) -> list[float | None]:
    """JSON carries no infinities: undefined entries become null."""
    return [float(v) if np.isfinite(v) else None for v in values]


class CrlbResponse(BaseModel):
    names: list[str]
    truths: list[float]
    variances: list[float]
    rel_err_pct: list[float | None]
    condition_number: float
    material_names: list[str]
    axis_value: float | None = None

    @classmethod
    def from_report(cls, report: CrlbReport) -> "CrlbResponse":
        return cls(
            names=list(report.names),
            truths=report.truths.tolist(),
            variances=report.variances.tolist(),
            rel_err_pct=sanitize_floats(report.rel_err_pct),
            condition_number=report.condition_number,
            material_names=list(report.material_names),
            axis_value=report.axis_value,
        )


class SweepResponse(BaseModel):
    axis: str
    reports: list[CrlbResponse]


class BenchResponse(BaseModel):
    param_names: list[str]
    truths: list[float]
    crlb: CrlbResponse | None
    mse: dict[str, list[float]]
    rel_err_pct: dict[str, list[float | None]]
    bias: dict[str, list[float]]
    n_runs: int
    n_failures: dict[str, int]
    material_names: list[str]


class LibraryResponse(BaseModel):
    library: LibraryModel
    correlation: list[list[float]] | None = None


class VersionResponse(BaseModel):
    name: str
    version: str
