"""FastAPI service exposing the unmixing toolkit.

All endpoints are stateless JSON-in/JSON-out wrappers over the core
package, so results depend only on the request payload (seeds included).
Input problems map to 422, numerical failures to 500 with a structured
error body.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..bench import BenchConfig, mse_monte_carlo
from ..crlb import SweepBase, crlb_from_fisher, fisher_matrix, sweep
from ..errors import InputError, NumericalFailure
from ..forward_model import SceneMulti, intensity_multi, intensity_single, simulate
from ..posterior import Hyperparams, ParameterVector
from ..samplers import run_multi_layer, run_single_layer
from ..spectral_library import library_as_spectra, pairwise_correlation, synth_library
from . import schemas as sch

app = FastAPI(
    title="mslunmix",
    version=__version__,
    description="Spectral unmixing of multispectral lidar photon-count waveforms",
)


@app.exception_handler(InputError)
async def _input_error(request: Request, exc: InputError) -> JSONResponse:
    return JSONResponse(
        status_code=422, content={"error": {"type": type(exc).__name__, "message": str(exc)}}
    )


@app.exception_handler(NumericalFailure)
async def _numerical_error(request: Request, exc: NumericalFailure) -> JSONResponse:
    return JSONResponse(
        status_code=500, content={"error": {"type": type(exc).__name__, "message": str(exc)}}
    )


@app.get("/health")
def health() -> dict:
    return {"status": "ok"}


@app.get("/version", response_model=sch.VersionResponse)
def version() -> sch.VersionResponse:
    return sch.VersionResponse(name="mslunmix", version=__version__)


@app.post("/simulate", response_model=sch.SimulateResponse)
def simulate_endpoint(req: sch.SimulateRequest) -> sch.SimulateResponse:
    lib = req.source.resolve()
    scene = req.scene.to_scene(lib.n_bands)
    phi = req.scene.phi.to_params()
    if isinstance(scene, SceneMulti):
        lam = intensity_multi(lib, scene, phi, req.scene.T, req.scene.shape)
    else:
        lam = intensity_single(lib, scene, phi, req.scene.T, req.scene.shape)
    seed = req.seed if req.seed is not None else req.scene.seed
    if seed is None:
        raise InputError("no seed given (set scene.seed or the request seed)")
    waveforms = simulate(lam, seed, band_wavelengths=lib.band_wavelengths)
    return sch.SimulateResponse(
        waveforms=sch.WaveformModel.from_waveforms(waveforms), seed=seed
    )


@app.post("/unmix", response_model=sch.UnmixResponse)
def unmix_endpoint(req: sch.UnmixRequest) -> sch.UnmixResponse:
    lib = req.source.resolve()
    waveforms = req.waveforms.to_waveforms()
    phi = req.phi.to_params()
    hyper = Hyperparams(alpha2=req.alpha2, gamma2=req.gamma2)
    cfg = req.chain.to_config()
    if req.layers is None:
        output = run_single_layer(waveforms, lib, phi, hyper, cfg, req.shape)
    else:
        output = run_multi_layer(waveforms, lib, phi, req.layers, hyper, cfg, req.shape)
    return sch.UnmixResponse.from_output(output, req.keep_samples)


def _single_scene_theta(req_scene: sch.SceneModel, lib) -> ParameterVector:
    scene = req_scene.to_scene(lib.n_bands)
    if isinstance(scene, SceneMulti):
        raise InputError("bounds are defined for the single-surface model")
    return ParameterVector(w=scene.w, b=scene.b, t0=scene.t0)


@app.post("/crlb", response_model=sch.CrlbResponse)
def crlb_endpoint(req: sch.CrlbRequest) -> sch.CrlbResponse:
    lib = req.source.resolve()
    theta = _single_scene_theta(req.scene, lib)
    phi = req.scene.phi.to_params()
    sigma2 = req.sigma2 if req.sigma2 is not None else phi.sigma2
    fisher = fisher_matrix(lib, theta, phi.beta, sigma2, req.scene.T)
    report = crlb_from_fisher(fisher, theta, material_names=list(lib.material_names))
    return sch.CrlbResponse.from_report(report)


@app.post("/sweep", response_model=sch.SweepResponse)
def sweep_endpoint(req: sch.SweepRequest) -> sch.SweepResponse:
    scene = req.scene
    phi = scene.phi.to_params()
    sigma2 = req.sigma2 if req.sigma2 is not None else phi.sigma2
    if scene.w is None or scene.t0 is None:
        raise InputError("sweeps are defined for the single-surface model")
    if isinstance(scene.b, list):
        raise InputError("sweeps use a common per-band background level (scalar b)")
    spectra = req.source.resolve_spectra()
    n_bands = req.source.bands
    if n_bands is None:
        raise InputError("'bands' is required for sweeps (reference band count)")
    base = SweepBase(
        spectra=spectra,
        w=scene.w,
        t0=float(scene.t0),
        b_level=float(scene.b),
        n_bins=scene.T,
        beta=phi.beta,
        sigma2=sigma2,
        n_bands=n_bands,
        lo_nm=req.source.lo_nm,
        hi_nm=req.source.hi_nm,
    )
    reports = sweep(base, req.axis, req.grid)
    return sch.SweepResponse(
        axis=req.axis, reports=[sch.CrlbResponse.from_report(r) for r in reports]
    )


@app.post("/bench", response_model=sch.BenchResponse)
def bench_endpoint(req: sch.BenchRequest) -> sch.BenchResponse:
    lib = req.source.resolve()
    scene = req.scene.to_scene(lib.n_bands)
    phi = req.scene.phi.to_params()
    cfg = BenchConfig(
        lib=lib,
        scene=scene,
        phi=phi,
        hyper=Hyperparams(alpha2=req.alpha2, gamma2=req.gamma2),
        chain=req.chain.to_config(),
        n_runs=req.n_runs,
        base_seed=req.base_seed,
        estimators=tuple(req.estimators),
        shape=req.scene.shape,
        n_bins=req.scene.T,
        sigma2_gauss=req.sigma2,
        n_workers=req.n_workers,
    )
    report = mse_monte_carlo(cfg)
    return sch.BenchResponse(
        param_names=report.param_names,
        truths=report.truths.tolist(),
        crlb=sch.CrlbResponse.from_report(report.crlb) if report.crlb is not None else None,
        mse={k: v.tolist() for k, v in report.mse.items()},
        rel_err_pct={k: sch.sanitize_floats(v) for k, v in report.rel_err_pct.items()},
        bias={k: v.tolist() for k, v in report.bias.items()},
        n_runs=report.n_runs,
        n_failures=report.n_failures,
        material_names=report.material_names,
    )


@app.post("/synth-spectra", response_model=sch.LibraryResponse)
def synth_endpoint(req: sch.SynthRequest) -> sch.LibraryResponse:
    lib = synth_library(
        req.materials,
        req.bands,
        req.target_corr,
        seed=req.seed,
        lo=req.lo_nm,
        hi=req.hi_nm,
        names=req.names,
        level_ranges=req.level_ranges,
    )
    corr = pairwise_correlation(lib).tolist() if lib.n_bands >= 2 else None
    return sch.LibraryResponse(library=sch.LibraryModel.from_library(lib), correlation=corr)
