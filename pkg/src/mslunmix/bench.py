"""Monte-Carlo MSE harness: Bayesian sampler vs sequential baseline vs bounds.

Each run simulates a fresh waveform set, applies the requested estimators,
and accumulates squared errors per parameter.  Per-run seeds derive
deterministically from the base seed and the run index, so reports are
invariant to run ordering and worker count.

The sequential baseline mirrors the classical pipeline: matched-filter
position estimate from the band-summed counts, then a per-band Poisson
maximum-likelihood fit of (amplitude, background) at the fixed position,
and finally nonnegative least squares mapping amplitudes to areas.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar, nnls

from .crlb import CrlbReport, crlb_from_fisher, fisher_matrix
from .errors import InputError, NumericalFailure
from .forward_model import (
    ImpulseParams,
    SceneMulti,
    SceneSingle,
    intensity_multi,
    intensity_single,
    pulse_support,
    simulate,
    unit_pulse,
)
from .posterior import Hyperparams, ParameterVector, _counts
from .samplers import WINDOW_REL_THRESHOLD, ChainConfig, run_multi_layer, run_single_layer
from .spectral_library import SpectralLibrary

__all__ = [
    "BenchConfig",
    "BenchReport",
    "mse_monte_carlo",
    "baseline_sequential",
    "NoPeakError",
    "ESTIMATORS",
]

ESTIMATORS = ("bayes", "baseline")


class NoPeakError(NumericalFailure):
    """The waveform carries no detectable pulse (all-zero counts)."""


@dataclass(frozen=True)
class BenchConfig:
    """One Monte-Carlo benchmark scenario."""

    lib: SpectralLibrary
    scene: SceneSingle | SceneMulti
    phi: ImpulseParams
    hyper: Hyperparams
    chain: ChainConfig
    n_runs: int = 100
    base_seed: int = 0
    estimators: tuple[str, ...] = ESTIMATORS
    shape: str = "piecewise"
    n_bins: int = 2500
    sigma2_gauss: float | None = None
    n_workers: int = 1
    keep_estimates: bool = False

    def __post_init__(self):
        if self.n_runs < 1:
            raise InputError("need at least one Monte-Carlo run")
        for name in self.estimators:
            if name not in ESTIMATORS:
                raise InputError(f"unknown estimator {name!r}; expected subset of {ESTIMATORS}")
        if isinstance(self.scene, SceneMulti) and "baseline" in self.estimators:
            raise InputError("the sequential baseline handles single-surface scenes only")


@dataclass(frozen=True)
class BenchReport:
    """Per-parameter MSEs, relative errors, and the matching variance bounds."""

    param_names: list[str]
    truths: np.ndarray
    crlb: CrlbReport | None
    mse: dict[str, np.ndarray]
    rel_err_pct: dict[str, np.ndarray]
    bias: dict[str, np.ndarray]
    n_runs: int
    n_failures: dict[str, int]
    material_names: list[str]
    estimates: dict[str, np.ndarray] | None = None

    def efficiency(self, estimator: str) -> np.ndarray:
        """MSE / CRLB per parameter; below ~1 flags estimator bias."""
        if self.crlb is None:
            raise InputError("no bound available for this scenario")
        return self.mse[estimator] / self.crlb.variances

    def area_mse(self, estimator: str) -> np.ndarray:
        return self.mse[estimator][: len(self.material_names)]

    def area_rel_err_pct(self, estimator: str) -> np.ndarray:
        return self.rel_err_pct[estimator][: len(self.material_names)]


def _run_seeds(base_seed: int, run_index: int) -> tuple[int, int]:
    """Independent simulation and chain seeds for one run (documented rule)."""
    sim = int(np.random.SeedSequence((base_seed, run_index, 0)).generate_state(1)[0])
    chain = int(np.random.SeedSequence((base_seed, run_index, 1)).generate_state(1)[0])
    return sim, chain


def _truth_vector(cfg: BenchConfig) -> tuple[np.ndarray, list[str]]:
    names = []
    if isinstance(cfg.scene, SceneSingle):
        truths = np.concatenate([cfg.scene.w, cfg.scene.b, [cfg.scene.t0]])
        names = [f"w_{n}" for n in cfg.lib.material_names]
        names += [f"b_{ell}" for ell in range(1, cfg.lib.n_bands + 1)]
        names += ["t0"]
    else:
        for d in range(cfg.scene.n_layers):
            names += [f"w_{n}_layer{d + 1}" for n in cfg.lib.material_names]
        names += [f"b_{ell}" for ell in range(1, cfg.lib.n_bands + 1)]
        truths = np.concatenate([cfg.scene.W.T.ravel(), cfg.scene.b])
    return truths, names


def _estimate_one(cfg: BenchConfig, run_index: int) -> dict:
    """Simulate one waveform set and apply every requested estimator."""
    sim_seed, chain_seed = _run_seeds(cfg.base_seed, run_index)
    if isinstance(cfg.scene, SceneSingle):
        lam = intensity_single(cfg.lib, cfg.scene, cfg.phi, cfg.n_bins, cfg.shape)
    else:
        lam = intensity_multi(cfg.lib, cfg.scene, cfg.phi, cfg.n_bins, cfg.shape)
    waveforms = simulate(lam, sim_seed)
    out: dict = {}
    chain_cfg = replace(cfg.chain, seed=chain_seed)
    for estimator in cfg.estimators:
        try:
            if estimator == "bayes":
                if isinstance(cfg.scene, SceneSingle):
                    chain = run_single_layer(
                        waveforms, cfg.lib, cfg.phi, cfg.hyper, chain_cfg, cfg.shape
                    )
                    est = np.concatenate(
                        [chain.mmse["w"], chain.mmse["b"], [chain.mmse["t0"]]]
                    )
                else:
                    chain = run_multi_layer(
                        waveforms,
                        cfg.lib,
                        cfg.phi,
                        cfg.scene.layer_positions,
                        cfg.hyper,
                        chain_cfg,
                        cfg.shape,
                    )
                    w = np.atleast_2d(chain.mmse["w"])
                    est = np.concatenate([w.ravel(), chain.mmse["b"]])
            else:
                theta = baseline_sequential(waveforms, cfg.lib, cfg.phi, cfg.shape)
                est = np.concatenate([theta.w, theta.b, [theta.t0]])
            out[estimator] = est
        except (NumericalFailure, InputError) as exc:
            out[estimator] = str(exc)
    return out


def mse_monte_carlo(cfg: BenchConfig) -> BenchReport:
    """Estimate per-parameter MSEs over seeded Monte-Carlo runs.

    Failed runs are excluded per estimator and counted in the report.
    """
    truths, names = _truth_vector(cfg)
    results: list[dict] = [None] * cfg.n_runs  # type: ignore[list-item]
    if cfg.n_workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.n_workers) as pool:
            futures = {pool.submit(_estimate_one, cfg, i): i for i in range(cfg.n_runs)}
            for future, i in futures.items():
                results[i] = future.result()
    else:
        for i in range(cfg.n_runs):
            results[i] = _estimate_one(cfg, i)

    mse: dict[str, np.ndarray] = {}
    rel: dict[str, np.ndarray] = {}
    bias: dict[str, np.ndarray] = {}
    failures: dict[str, int] = {}
    kept: dict[str, np.ndarray] = {}
    for estimator in cfg.estimators:
        rows = [r[estimator] for r in results if not isinstance(r[estimator], str)]
        failures[estimator] = cfg.n_runs - len(rows)
        if not rows:
            raise NumericalFailure(f"every run failed for estimator {estimator!r}")
        est = np.asarray(rows)
        kept[estimator] = est
        err = est - truths[None, :]
        mse[estimator] = np.mean(err * err, axis=0)
        bias[estimator] = err.mean(axis=0)
        with np.errstate(divide="ignore"):
            rel[estimator] = np.where(
                truths != 0, 100.0 * np.sqrt(mse[estimator]) / np.abs(truths), np.inf
            )

    crlb_report = None
    if isinstance(cfg.scene, SceneSingle):
        sigma2 = cfg.sigma2_gauss if cfg.sigma2_gauss is not None else cfg.phi.sigma2
        theta = ParameterVector(w=cfg.scene.w, b=cfg.scene.b, t0=cfg.scene.t0)
        fisher = fisher_matrix(cfg.lib, theta, cfg.phi.beta, sigma2, cfg.n_bins)
        crlb_report = crlb_from_fisher(
            fisher, theta, material_names=list(cfg.lib.material_names)
        )

    return BenchReport(
        param_names=names,
        truths=truths,
        crlb=crlb_report,
        mse=mse,
        rel_err_pct=rel,
        bias=bias,
        n_runs=cfg.n_runs,
        n_failures=failures,
        material_names=list(cfg.lib.material_names),
        estimates=kept if cfg.keep_estimates else None,
    )


def report_as_dict(report: BenchReport) -> dict:
    """JSON-ready view of a benchmark report."""
    from .crlb import report_as_dict as crlb_as_dict

    return {
        "param_names": list(report.param_names),
        "truths": report.truths.tolist(),
        "crlb": crlb_as_dict(report.crlb) if report.crlb is not None else None,
        "mse": {k: v.tolist() for k, v in report.mse.items()},
        "rel_err_pct": {k: v.tolist() for k, v in report.rel_err_pct.items()},
        "bias": {k: v.tolist() for k, v in report.bias.items()},
        "n_runs": report.n_runs,
        "n_failures": dict(report.n_failures),
        "material_names": list(report.material_names),
    }


def report_from_dict(payload: dict) -> BenchReport:
    """Rebuild a benchmark report from its JSON form (round-trip safe)."""
    from .crlb import CrlbReport

    crlb = None
    if payload.get("crlb") is not None:
        c = payload["crlb"]
        crlb = CrlbReport(
            names=list(c["names"]),
            truths=np.asarray(c["truths"], dtype=float),
            variances=np.asarray(c["variances"], dtype=float),
            rel_err_pct=np.asarray(c["rel_err_pct"], dtype=float),
            condition_number=float(c["condition_number"]),
            axis_value=c.get("axis_value"),
            material_names=list(c.get("material_names", [])),
        )
    return BenchReport(
        param_names=list(payload["param_names"]),
        truths=np.asarray(payload["truths"], dtype=float),
        crlb=crlb,
        mse={k: np.asarray(v, dtype=float) for k, v in payload["mse"].items()},
        rel_err_pct={k: np.asarray(v, dtype=float) for k, v in payload["rel_err_pct"].items()},
        bias={k: np.asarray(v, dtype=float) for k, v in payload["bias"].items()},
        n_runs=int(payload["n_runs"]),
        n_failures={k: int(v) for k, v in payload["n_failures"].items()},
        material_names=list(payload.get("material_names", [])),
    )


def emit_report(report: BenchReport, csv_path, json_path=None) -> None:
    """Write the benchmark table as CSV (and optionally the full JSON report).

    One CSV row per parameter; estimator columns are blank when an estimator
    was not run.  Ordering is deterministic.
    """
    import json

    def col(d, est, i):
        return repr(float(d[est][i])) if est in d else ""

    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        fh.write(
            "param,truth,crlb,mse_bayes,mse_baseline,rel_err_bayes_pct,rel_err_baseline_pct\n"
        )
        rows = range(len(report.param_names)) if report.mse else range(0)
        for i in rows:
            name = report.param_names[i]
            crlb = repr(float(report.crlb.variances[i])) if report.crlb is not None else ""
            fh.write(
                f"{name},{report.truths[i]!r},{crlb},"
                f"{col(report.mse, 'bayes', i)},{col(report.mse, 'baseline', i)},"
                f"{col(report.rel_err_pct, 'bayes', i)},{col(report.rel_err_pct, 'baseline', i)}\n"
            )
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(report_as_dict(report), fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# Sequential baseline
# ---------------------------------------------------------------------------

_FIT_TOL = 1e-8
_FIT_MAX_ITERS = 200


def baseline_sequential(
    Y, lib: SpectralLibrary, phi: ImpulseParams, shape: str = "piecewise"
) -> ParameterVector:
    """Position, then per-band amplitudes, then areas - estimated sequentially.

    1. Continuous matched-filter argmax of the band-summed counts.
    2. Per-band Poisson ML fit of (amplitude, background) at the fixed
       position by coordinate descent.
    3. Nonnegative least squares mapping fitted amplitudes to areas.
    """
    counts = _counts(Y)
    if counts.sum() == 0:
        raise NoPeakError("all-zero waveform set: no pulse to locate")
    n_bins = counts.shape[1]
    band_sum = counts.sum(axis=0).astype(float)
    t0_hat = _matched_filter_argmax(band_sum, phi, shape, n_bins)
    amps = np.empty(lib.n_bands)
    backs = np.empty(lib.n_bands)
    kernel, lo = _kernel_at(t0_hat, phi, shape, n_bins)
    for ell in range(lib.n_bands):
        amps[ell], backs[ell] = _fit_band(counts[ell], kernel, lo)
    w_hat, _ = nnls(lib.M, amps / phi.beta)
    return ParameterVector(w=w_hat, b=backs, t0=t0_hat)


def _kernel_at(pos: float, phi: ImpulseParams, shape: str, n_bins: int):
    """Unit-peak pulse sampled on its support window around ``pos``."""
    u_lo, u_hi = pulse_support(phi, shape, WINDOW_REL_THRESHOLD)
    lo = max(1, int(math.ceil(pos + u_lo)))
    hi = min(n_bins, int(math.floor(pos + u_hi)))
    t = np.arange(lo, hi + 1, dtype=float)
    return unit_pulse(t, pos, phi, shape), lo


def _matched_filter_argmax(band_sum: np.ndarray, phi: ImpulseParams, shape: str, n_bins: int):
    """Continuous argmax of the pulse-correlation with the band-summed counts.

    The coarse pass is a discrete correlation over all integer positions
    (bins outside the histogram contribute nothing); the winner is refined
    over +-1 bin with exact real-position evaluations.
    """

    def score(pos: float) -> float:
        kernel, lo = _kernel_at(pos, phi, shape, n_bins)
        return float(band_sum[lo - 1 : lo - 1 + kernel.size] @ kernel)

    u_lo, u_hi = pulse_support(phi, shape, WINDOW_REL_THRESHOLD)
    off_lo = min(int(math.ceil(u_lo)), 0)
    off_hi = max(int(math.floor(u_hi)), 0)
    offsets = np.arange(off_lo, off_hi + 1, dtype=float)
    kernel = unit_pulse(offsets, 0.0, phi, shape)
    padded = np.concatenate([np.zeros(-off_lo), band_sum, np.zeros(off_hi)])
    coarse = np.correlate(padded, kernel, mode="valid")
    best = int(np.argmax(coarse)) + 1
    lo_bound = max(1.0 + 1e-9, best - 1.0)
    hi_bound = min(float(n_bins) - 1e-9, best + 1.0)
    res = minimize_scalar(
        lambda p: -score(p), bounds=(lo_bound, hi_bound), method="bounded",
        options={"xatol": 1e-6},
    )
    return float(np.clip(res.x, lo_bound, hi_bound))


def _fit_band(y: np.ndarray, kernel: np.ndarray, lo: int) -> tuple[float, float]:
    """Poisson ML fit of amplitude and background for one band.

    Model: lam_t = A k(t) + b with k the unit-peak pulse at the fixed
    position.  Alternating 1-D Newton steps with positivity clamps until the
    relative change drops below 1e-8.
    """
    y = y.astype(float)
    y_win = y[lo - 1 : lo - 1 + kernel.size]
    n_far = y.size - kernel.size
    y_far = y.sum() - y_win.sum()
    k = kernel
    k_sum = float(k.sum())
    b = max(float(np.median(y)), 1e-3)
    a = max(float(y_win.max() - b), 1e-3)
    for _ in range(_FIT_MAX_ITERS):
        a_prev, b_prev = a, b
        lam = np.maximum(a * k + b, 1e-12)
        grad_a = float((y_win / lam) @ k) - k_sum
        hess_a = -float((y_win / lam**2) @ (k * k))
        if hess_a < 0:
            a = max(a - grad_a / hess_a, 0.0)
        elif grad_a < 0:
            a = 0.0
        lam = np.maximum(a * k + b, 1e-12)
        grad_b = float(np.sum(y_win / lam)) - k.size + (y_far / max(b, 1e-12) - n_far)
        hess_b = -float(np.sum(y_win / lam**2)) - y_far / max(b, 1e-12) ** 2
        if hess_b < 0:
            b = max(b - grad_b / hess_b, 0.0)
        elif grad_b < 0:
            b = 0.0
        denom = max(abs(a_prev), abs(b_prev), 1.0)
        if max(abs(a - a_prev), abs(b - b_prev)) < _FIT_TOL * denom:
            break
    return a, b
