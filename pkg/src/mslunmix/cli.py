"""Batch command-line client for the unmixing service.

Every command builds a JSON request, sends it through the service API, and
writes the response to disk in the documented file formats.  By default the
service runs in-process (no network); ``--server URL`` targets a running
instance instead.  A manifest capturing the resolved configuration, input
hashes, seed, and tool version is written alongside every output, so any
result can be reproduced from its manifest alone.

Exit codes: 0 success, 1 I/O or connection failure, 2 validation failure,
3 numerical failure.
"""

from __future__ import annotations

import hashlib
import json
import pathlib
import sys

import click
import httpx

from . import __version__
from .presets import GAUSSIAN_SIGMA2, instrument_impulse

EXIT_IO = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class CliFailure(Exception):
    """Carries the exit code and message for a failed command."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fail(code: int, message: str) -> CliFailure:
    return CliFailure(code, message)


# -- service access ----------------------------------------------------------


def _post_in_process(path: str, payload: dict) -> httpx.Response:
    """Route the request through the service app without touching the network."""
    import asyncio

    from .service import app

    async def call() -> httpx.Response:
        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(
            transport=transport, base_url="http://service", timeout=None
        ) as client:
            return await client.post(path, json=payload)

    return asyncio.run(call())


def _post(server: str | None, path: str, payload: dict) -> dict:
    """POST to the service (remote URL or in-process app) and map errors."""
    try:
        if server:
            with httpx.Client(base_url=server, timeout=None) as client:
                response = client.post(path, json=payload)
        else:
            response = _post_in_process(path, payload)
    except httpx.HTTPError as exc:
        raise _fail(EXIT_IO, f"service request failed: {exc}") from exc
    if response.status_code == 200:
        return response.json()
    try:
        body = response.json()
    except ValueError:
        body = {}
    if isinstance(body.get("error"), dict):
        kind = body["error"].get("type", "error")
        message = body["error"].get("message", "")
        code = EXIT_NUMERICAL if response.status_code >= 500 else EXIT_VALIDATION
        raise _fail(code, f"{kind}: {message}")
    if response.status_code == 422:
        raise _fail(EXIT_VALIDATION, f"invalid request: {json.dumps(body.get('detail'))}")
    raise _fail(EXIT_IO, f"service returned status {response.status_code}")


# -- local file handling -----------------------------------------------------


def _require_file(path: str, what: str) -> pathlib.Path:
    p = pathlib.Path(path)
    if not p.is_file():
        raise _fail(EXIT_VALIDATION, f"{what} file not found: {path}")
    return p


def _load_json_file(path: str, what: str) -> dict:
    p = _require_file(path, what)
    try:
        with open(p, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise _fail(EXIT_VALIDATION, f"cannot parse {what} file {path}: {exc}") from exc


def _load_spectra_payload(path: str) -> list[dict]:
    from .errors import InputError
    from .spectral_library import load_spectra

    p = _require_file(path, "spectra")
    try:
        spectra = load_spectra(p)
    except InputError as exc:
        raise _fail(EXIT_VALIDATION, str(exc)) from exc
    return [
        {
            "name": s.name,
            "wavelengths_nm": s.wavelengths.tolist(),
            "reflectance": s.reflectance.tolist(),
        }
        for s in spectra
    ]


def _sha256(path: pathlib.Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def _out_dir(out: str) -> pathlib.Path:
    p = pathlib.Path(out)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise _fail(EXIT_IO, f"cannot create output directory {out}: {exc}") from exc
    return p


def _write_json(path: pathlib.Path, payload) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise _fail(EXIT_IO, f"cannot write {path}: {exc}") from exc


def _write_manifest(
    out: pathlib.Path, command: str, config: dict, inputs: dict, outputs: list[str], seed
) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": {
            name: {"path": str(path), "sha256": _sha256(pathlib.Path(path))}
            for name, path in inputs.items()
        },
        "outputs": outputs,
        "seed": seed,
        "version": __version__,
    }
    _write_json(out / "manifest.json", manifest)


# -- config-file / flag resolution -------------------------------------------


def _read_config_file(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    p = _require_file(path, "config")
    values: dict[str, str] = {}
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise _fail(EXIT_IO, f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise _fail(EXIT_VALIDATION, f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _resolve(flag_value, cfg: dict[str, str], key: str, default, cast):
    """Precedence: explicit flag > config file > default."""
    if flag_value is not None:
        return flag_value
    if key in cfg:
        try:
            return cast(cfg[key])
        except ValueError as exc:
            raise _fail(EXIT_VALIDATION, f"config key {key}: {exc}") from exc
    return default


def _phi_payload(phi_path: str | None) -> dict:
    if phi_path is None:
        phi = instrument_impulse()
        return {
            "t1": phi.t1, "t2": phi.t2, "t3": phi.t3, "tau1": phi.tau1,
            "tau2": phi.tau2, "tau3": phi.tau3, "sigma2": phi.sigma2, "beta": phi.beta,
        }
    return _load_json_file(phi_path, "pulse parameters")


def _run_command(func, *args, **kwargs) -> None:
    try:
        func(*args, **kwargs)
    except CliFailure as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.code)
    sys.exit(0)


# -- commands -----------------------------------------------------------------


@click.group()
@click.version_option(version=__version__, prog_name="mslunmix")
def main():
    """Spectral unmixing of multispectral lidar waveforms."""


_common = [
    click.option("--config", "config_path", type=str, default=None, help="Flat key=value config file."),
    click.option("--server", type=str, default=None, help="Remote service URL (default: in-process)."),
    click.option("--out", type=str, default=".", show_default=True, help="Output directory."),
    click.option("--threads", type=int, default=None, help="Worker cap for parallel sections."),
]


def _with_common(cmd):
    for option in reversed(_common):
        cmd = option(cmd)
    return cmd


@main.command()
@click.option("--scene", "scene_path", required=True, type=str, help="Scene descriptor JSON.")
@click.option("--spectra", "spectra_path", required=True, type=str, help="Spectra CSV.")
@click.option("--bands", type=int, default=None, help="Band count for resampling [32].")
@click.option("--lo", "lo_nm", type=float, default=None, help="Lowest band wavelength [400].")
@click.option("--hi", "hi_nm", type=float, default=None, help="Highest band wavelength [2500].")
@click.option("--seed", type=int, default=None, help="Override the scene seed.")
@click.option("--shape", type=click.Choice(["piecewise", "gaussian"]), default=None)
@_with_common
def simulate(scene_path, spectra_path, bands, lo_nm, hi_nm, seed, shape, config_path, server, out, threads):
    """Simulate photon-count waveforms for a scene."""

    def run():
        cfg = _read_config_file(config_path)
        bands_v = _resolve(bands, cfg, "bands", 32, int)
        lo_v = _resolve(lo_nm, cfg, "lo_nm", 400.0, float)
        hi_v = _resolve(hi_nm, cfg, "hi_nm", 2500.0, float)
        seed_v = _resolve(seed, cfg, "seed", None, int)
        scene = _load_json_file(scene_path, "scene")
        if shape is not None:
            scene["shape"] = shape
        payload = {
            "source": {
                "spectra": _load_spectra_payload(spectra_path),
                "bands": bands_v,
                "lo_nm": lo_v,
                "hi_nm": hi_v,
            },
            "scene": scene,
            "seed": seed_v,
        }
        result = _post(server, "/simulate", payload)
        out_dir = _out_dir(out)
        wf_path = out_dir / "waveforms.csv"
        _write_waveform_csv(result["waveforms"], wf_path)
        _write_manifest(
            out_dir,
            "simulate",
            {
                "bands": bands_v, "lo_nm": lo_v, "hi_nm": hi_v,
                "shape": scene.get("shape", "piecewise"), "scene": scene,
                "threads": threads, "server": server,
            },
            {"scene": scene_path, "spectra": spectra_path},
            [wf_path.name],
            result["seed"],
        )
        click.echo(f"wrote {wf_path}")

    _run_command(run)


def _write_waveform_csv(waveforms: dict, path: pathlib.Path) -> None:
    import numpy as np

    from .forward_model import WaveformSet, waveforms_to_csv

    wf = WaveformSet(
        Y=np.asarray(waveforms["counts"], dtype=np.int64),
        band_wavelengths=waveforms.get("band_wavelengths"),
    )
    try:
        waveforms_to_csv(wf, path)
    except OSError as exc:
        raise _fail(EXIT_IO, f"cannot write {path}: {exc}") from exc


@main.command()
@click.option("--waveforms", "waveforms_path", required=True, type=str, help="Waveform CSV.")
@click.option("--spectra", "spectra_path", required=True, type=str, help="Spectra CSV.")
@click.option("--lo", "lo_nm", type=float, default=None)
@click.option("--hi", "hi_nm", type=float, default=None)
@click.option("--phi", "phi_path", type=str, default=None, help="Pulse parameter JSON [bundled fit].")
@click.option("--shape", type=click.Choice(["piecewise", "gaussian"]), default="piecewise")
@click.option("--layers", type=str, default=None, help="Fixed layer positions, e.g. '1000,1500,2000'.")
@click.option("--n-mc", type=int, default=None, help="Total iterations [8000].")
@click.option("--n-bi", type=int, default=None, help="Burn-in iterations [4000].")
@click.option("--seed", type=int, default=None, help="Chain seed [0].")
@click.option("--alpha2", type=float, default=None, help="Area prior variance [1e6].")
@click.option("--gamma2", type=float, default=None, help="Background prior variance [1e6].")
@click.option("--ci-level", type=float, default=None, help="Credible level [0.9].")
@click.option("--dump-samples", is_flag=True, help="Also write raw post-burn-in samples.")
@_with_common
def unmix(waveforms_path, spectra_path, lo_nm, hi_nm, phi_path, shape, layers, n_mc, n_bi,
          seed, alpha2, gamma2, ci_level, dump_samples, config_path, server, out, threads):
    """Unmix waveforms: areas, position, and backgrounds with uncertainties."""

    def run():
        cfg = _read_config_file(config_path)
        counts = _read_waveform_counts(waveforms_path)
        layer_list = _parse_layers(layers)
        chain = {
            "n_mc": _resolve(n_mc, cfg, "n_mc", 8000, int),
            "n_bi": _resolve(n_bi, cfg, "n_bi", 4000, int),
            "seed": _resolve(seed, cfg, "seed", 0, int),
            "ci_level": _resolve(ci_level, cfg, "ci_level", 0.9, float),
        }
        payload = {
            "source": {
                "spectra": _load_spectra_payload(spectra_path),
                "bands": len(counts),
                "lo_nm": _resolve(lo_nm, cfg, "lo_nm", 400.0, float),
                "hi_nm": _resolve(hi_nm, cfg, "hi_nm", 2500.0, float),
            },
            "waveforms": {"counts": counts},
            "phi": _phi_payload(phi_path),
            "shape": shape,
            "layers": layer_list,
            "chain": chain,
            "alpha2": _resolve(alpha2, cfg, "alpha2", 1e6, float),
            "gamma2": _resolve(gamma2, cfg, "gamma2", 1e6, float),
            "keep_samples": bool(dump_samples),
        }
        result = _post(server, "/unmix", payload)
        out_dir = _out_dir(out)
        summary = {k: result[k] for k in ("mmse", "ci", "ci_level", "acceptance")}
        summary_path = out_dir / "summary.json"
        _write_json(summary_path, summary)
        outputs = [summary_path.name]
        if dump_samples and result.get("samples"):
            samples_path = out_dir / "samples.csv"
            _write_samples_csv(result["samples"], samples_path)
            outputs.append(samples_path.name)
        _write_manifest(
            out_dir,
            "unmix",
            {
                "chain": chain, "shape": shape, "layers": layer_list,
                "alpha2": payload["alpha2"], "gamma2": payload["gamma2"],
                "phi": payload["phi"], "lo_nm": payload["source"]["lo_nm"],
                "hi_nm": payload["source"]["hi_nm"], "threads": threads, "server": server,
            },
            {"waveforms": waveforms_path, "spectra": spectra_path},
            outputs,
            chain["seed"],
        )
        click.echo(f"wrote {summary_path}")

    _run_command(run)


def _read_waveform_counts(path: str) -> list[list[int]]:
    from .errors import InputError
    from .forward_model import waveforms_from_csv

    p = _require_file(path, "waveforms")
    try:
        return waveforms_from_csv(p).Y.tolist()
    except InputError as exc:
        raise _fail(EXIT_VALIDATION, str(exc)) from exc


def _parse_layers(layers: str | None) -> list[float] | None:
    if layers is None:
        return None
    try:
        values = [float(x) for x in layers.split(",") if x.strip()]
    except ValueError as exc:
        raise _fail(EXIT_VALIDATION, f"cannot parse --layers {layers!r}: {exc}") from exc
    if not values:
        raise _fail(EXIT_VALIDATION, "--layers must list at least one position")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise _fail(EXIT_VALIDATION, "--layers positions must be strictly increasing")
    return values


def _write_samples_csv(samples: dict, path: pathlib.Path) -> None:
    import numpy as np

    from .samplers import ChainOutput, samples_to_csv

    w = np.asarray(samples["w"])
    t0 = np.asarray(samples["t0"]) if samples.get("t0") is not None else None
    b = np.asarray(samples["b"])
    # only the sample arrays matter for the CSV dump
    output = ChainOutput(
        samples_w=w, samples_t0=t0, samples_b=b,
        acceptance={}, mmse={}, ci={}, ci_level=0.0,
    )
    try:
        samples_to_csv(output, path)
    except OSError as exc:
        raise _fail(EXIT_IO, f"cannot write {path}: {exc}") from exc


@main.command()
@click.option("--scene", "scene_path", required=True, type=str, help="Scene descriptor JSON.")
@click.option("--spectra", "spectra_path", required=True, type=str, help="Spectra CSV.")
@click.option("--bands", type=int, default=None, help="Band count [32].")
@click.option("--lo", "lo_nm", type=float, default=None)
@click.option("--hi", "hi_nm", type=float, default=None)
@click.option("--sigma2", type=float, default=None,
              help=f"Gaussian-pulse variance for the bounds [{GAUSSIAN_SIGMA2}].")
@_with_common
def crlb(scene_path, spectra_path, bands, lo_nm, hi_nm, sigma2, config_path, server, out, threads):
    """Cramer-Rao bound report for a single-surface scene."""

    def run():
        cfg = _read_config_file(config_path)
        bands_v = _resolve(bands, cfg, "bands", 32, int)
        sigma2_v = _resolve(sigma2, cfg, "sigma2", GAUSSIAN_SIGMA2, float)
        payload = {
            "source": {
                "spectra": _load_spectra_payload(spectra_path),
                "bands": bands_v,
                "lo_nm": _resolve(lo_nm, cfg, "lo_nm", 400.0, float),
                "hi_nm": _resolve(hi_nm, cfg, "hi_nm", 2500.0, float),
            },
            "scene": _load_json_file(scene_path, "scene"),
            "sigma2": sigma2_v,
        }
        result = _post(server, "/crlb", payload)
        out_dir = _out_dir(out)
        report_path = out_dir / "crlb.json"
        _write_json(report_path, result)
        _write_manifest(
            out_dir,
            "crlb",
            {"bands": bands_v, "sigma2": sigma2_v, "scene": payload["scene"],
             "threads": threads, "server": server},
            {"scene": scene_path, "spectra": spectra_path},
            [report_path.name],
            payload["scene"].get("seed"),
        )
        click.echo(f"wrote {report_path}")

    _run_command(run)


@main.command()
@click.option("--scene", "scene_path", required=True, type=str, help="Scene descriptor JSON.")
@click.option("--spectra", "spectra_path", required=True, type=str, help="Spectra CSV.")
@click.option("--axis", required=True, type=click.Choice(["bands", "beta", "background"]))
@click.option("--grid", required=True, type=str, help="Comma-separated axis values.")
@click.option("--bands", type=int, default=None, help="Reference band count [32].")
@click.option("--lo", "lo_nm", type=float, default=None)
@click.option("--hi", "hi_nm", type=float, default=None)
@click.option("--sigma2", type=float, default=None)
@_with_common
def sweep(scene_path, spectra_path, axis, grid, bands, lo_nm, hi_nm, sigma2, config_path, server, out, threads):
    """Bound sweeps along one design axis (bands, beta, or background)."""

    def run():
        cfg = _read_config_file(config_path)
        try:
            grid_values = [float(x) for x in grid.split(",") if x.strip()]
        except ValueError as exc:
            raise _fail(EXIT_VALIDATION, f"cannot parse --grid {grid!r}: {exc}") from exc
        if not grid_values:
            raise _fail(EXIT_VALIDATION, "--grid must list at least one value")
        payload = {
            "source": {
                "spectra": _load_spectra_payload(spectra_path),
                "bands": _resolve(bands, cfg, "bands", 32, int),
                "lo_nm": _resolve(lo_nm, cfg, "lo_nm", 400.0, float),
                "hi_nm": _resolve(hi_nm, cfg, "hi_nm", 2500.0, float),
            },
            "scene": _load_json_file(scene_path, "scene"),
            "axis": axis,
            "grid": grid_values,
            "sigma2": _resolve(sigma2, cfg, "sigma2", GAUSSIAN_SIGMA2, float),
        }
        result = _post(server, "/sweep", payload)
        out_dir = _out_dir(out)
        csv_path = out_dir / "sweep.csv"
        _write_sweep_csv(result, csv_path)
        json_path = out_dir / "sweep.json"
        _write_json(json_path, result)
        _write_manifest(
            out_dir,
            "sweep",
            {"axis": axis, "grid": grid_values, "bands": payload["source"]["bands"],
             "sigma2": payload["sigma2"], "scene": payload["scene"],
             "threads": threads, "server": server},
            {"scene": scene_path, "spectra": spectra_path},
            [csv_path.name, json_path.name],
            payload["scene"].get("seed"),
        )
        click.echo(f"wrote {csv_path}")

    _run_command(run)


def _write_sweep_csv(result: dict, path: pathlib.Path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("axis_value,param_name,crlb,rel_err_pct\n")
            for report in result["reports"]:
                names = report["material_names"]
                rows = [(f"w_{name}", i) for i, name in enumerate(names)]
                rows.append(("t0", len(report["variances"]) - 1))
                for name, i in rows:
                    fh.write(
                        f"{report['axis_value']},{name},"
                        f"{report['variances'][i]!r},{report['rel_err_pct'][i]!r}\n"
                    )
    except OSError as exc:
        raise _fail(EXIT_IO, f"cannot write {path}: {exc}") from exc


@main.command()
@click.option("--scene", "scene_path", required=True, type=str, help="Scene descriptor JSON.")
@click.option("--spectra", "spectra_path", required=True, type=str, help="Spectra CSV.")
@click.option("--bands", type=int, default=None, help="Band count [32].")
@click.option("--lo", "lo_nm", type=float, default=None)
@click.option("--hi", "hi_nm", type=float, default=None)
@click.option("--runs", type=int, default=None, help="Monte-Carlo runs [100].")
@click.option("--n-mc", type=int, default=None, help="Chain iterations per run [8000].")
@click.option("--n-bi", type=int, default=None, help="Burn-in per run [4000].")
@click.option("--seed", type=int, default=None, help="Base seed [0].")
@click.option("--estimators", type=str, default=None, help="Comma list from: bayes,baseline.")
@click.option("--sigma2", type=float, default=None)
@_with_common
def bench(scene_path, spectra_path, bands, lo_nm, hi_nm, runs, n_mc, n_bi, seed, estimators,
          sigma2, config_path, server, out, threads):
    """Monte-Carlo MSE benchmark against the bounds."""

    def run():
        cfg = _read_config_file(config_path)
        est = _resolve(estimators, cfg, "estimators", "bayes,baseline", str)
        est_list = [e.strip() for e in est.split(",") if e.strip()]
        base_seed = _resolve(seed, cfg, "seed", 0, int)
        payload = {
            "source": {
                "spectra": _load_spectra_payload(spectra_path),
                "bands": _resolve(bands, cfg, "bands", 32, int),
                "lo_nm": _resolve(lo_nm, cfg, "lo_nm", 400.0, float),
                "hi_nm": _resolve(hi_nm, cfg, "hi_nm", 2500.0, float),
            },
            "scene": _load_json_file(scene_path, "scene"),
            "chain": {
                "n_mc": _resolve(n_mc, cfg, "n_mc", 8000, int),
                "n_bi": _resolve(n_bi, cfg, "n_bi", 4000, int),
            },
            "n_runs": _resolve(runs, cfg, "runs", 100, int),
            "base_seed": base_seed,
            "estimators": est_list,
            "sigma2": _resolve(sigma2, cfg, "sigma2", GAUSSIAN_SIGMA2, float),
            "n_workers": _resolve(threads, cfg, "threads", 1, int),
        }
        result = _post(server, "/bench", payload)
        out_dir = _out_dir(out)
        csv_path = out_dir / "bench.csv"
        _write_bench_csv(result, csv_path)
        json_path = out_dir / "bench.json"
        _write_json(json_path, result)
        _write_manifest(
            out_dir,
            "bench",
            {k: payload[k] for k in ("chain", "n_runs", "estimators", "sigma2", "n_workers")}
            | {"bands": payload["source"]["bands"], "scene": payload["scene"], "server": server},
            {"scene": scene_path, "spectra": spectra_path},
            [csv_path.name, json_path.name],
            base_seed,
        )
        click.echo(f"wrote {csv_path}")

    _run_command(run)


def _write_bench_csv(result: dict, path: pathlib.Path) -> None:
    def cell(block: dict, est: str, i: int) -> str:
        if est not in block or block[est][i] is None:
            return ""
        return repr(float(block[est][i]))

    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                "param,truth,crlb,mse_bayes,mse_baseline,rel_err_bayes_pct,rel_err_baseline_pct\n"
            )
            crlb_vars = result["crlb"]["variances"] if result.get("crlb") else None
            for i, name in enumerate(result["param_names"]):
                crlb_cell = repr(float(crlb_vars[i])) if crlb_vars is not None else ""
                fh.write(
                    f"{name},{result['truths'][i]!r},{crlb_cell},"
                    f"{cell(result['mse'], 'bayes', i)},{cell(result['mse'], 'baseline', i)},"
                    f"{cell(result['rel_err_pct'], 'bayes', i)},"
                    f"{cell(result['rel_err_pct'], 'baseline', i)}\n"
                )
    except OSError as exc:
        raise _fail(EXIT_IO, f"cannot write {path}: {exc}") from exc


@main.command(name="synth-spectra")
@click.option("--materials", type=int, default=3, show_default=True)
@click.option("--bands", type=int, default=None, help="Wavelength samples [211].")
@click.option("--corr", type=str, default=None,
              help="Target correlation matrix as JSON, e.g. '[[1,0.9],[0.9,1]]'.")
@click.option("--names", type=str, default=None, help="Comma-separated material names.")
@click.option("--seed", type=int, default=None, help="Generator seed [0].")
@click.option("--lo", "lo_nm", type=float, default=None)
@click.option("--hi", "hi_nm", type=float, default=None)
@_with_common
def synth_spectra(materials, bands, corr, names, seed, lo_nm, hi_nm, config_path, server, out, threads):
    """Synthesize a spectra library with a prescribed correlation structure."""

    def run():
        cfg = _read_config_file(config_path)
        if corr is None:
            target = [[1.0 if i == j else 0.0 for j in range(materials)] for i in range(materials)]
        else:
            try:
                target = json.loads(corr)
            except json.JSONDecodeError as exc:
                raise _fail(EXIT_VALIDATION, f"cannot parse --corr: {exc}") from exc
        payload = {
            "materials": materials,
            "bands": _resolve(bands, cfg, "bands", 211, int),
            "target_corr": target,
            "seed": _resolve(seed, cfg, "seed", 0, int),
            "lo_nm": _resolve(lo_nm, cfg, "lo_nm", 400.0, float),
            "hi_nm": _resolve(hi_nm, cfg, "hi_nm", 2500.0, float),
            "names": [n.strip() for n in names.split(",")] if names else None,
        }
        result = _post(server, "/synth-spectra", payload)
        out_dir = _out_dir(out)
        csv_path = out_dir / "spectra.csv"
        _write_library_csv(result["library"], csv_path)
        json_path = out_dir / "library.json"
        _write_json(json_path, result["library"])
        _write_manifest(
            out_dir,
            "synth-spectra",
            {k: payload[k] for k in ("materials", "bands", "target_corr", "lo_nm", "hi_nm", "names")}
            | {"threads": threads, "server": server},
            {},
            [csv_path.name, json_path.name],
            payload["seed"],
        )
        click.echo(f"wrote {csv_path}")

    _run_command(run)


def _write_library_csv(library: dict, path: pathlib.Path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("wavelength_nm," + ",".join(library["material_names"]) + "\n")
            for wl, row in zip(library["band_wavelengths"], library["M"]):
                fh.write(repr(float(wl)) + "," + ",".join(repr(float(v)) for v in row) + "\n")
    except OSError as exc:
        raise _fail(EXIT_IO, f"cannot write {path}: {exc}") from exc


@main.command()
@click.option("--host", type=str, default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Run the unmixing service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
