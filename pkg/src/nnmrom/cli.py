"""Command-line interface: ``nnmrom <subcommand> ...``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure, 4 I/O error,
130 interrupted.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autoencoder import ae_train, reconstruction_report
from .config import config_schema, load_config, preset, resolve_seed
from .dynamics import build_chain, calibrate_forcing, element_force_histories, generate_forcing, simulate
from .errors import ConfigInconsistent, CorruptFile, InvalidParams, NnmRomError, VersionMismatch
from .pipeline import (
    evaluate, fit_rom, load_artifact, load_autoencoder, rom_predict, save_artifact,
    save_autoencoder, save_regressor,
)
from .regressor import RegressorConfig, RegressorTrainConfig, train_teacher_forced
from .series import MultiChannelSeries, forcing_dofs, read_dataset, write_dataset, write_series_csv
from .spectral import correlation_matrix, multicoherence

logger = logging.getLogger("nnmrom")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
EXIT_INTERRUPTED = 130
PARTIAL_MARKER = ".partial"
REFERENCE_MSE = {"x1": 0.025, "x10": 0.048}


class UsageError(NnmRomError):
    """Bad combination of command-line arguments."""


# ---------------------------------------------------------------- helpers

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o))


def _experiment(args):
    """Experiment config from ``--config`` or ``--preset``, with seed precedence applied."""
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = preset(getattr(args, "preset", None) or "full")
    return resolve_seed(cfg, getattr(args, "seed", None))


def _override(cfg, section: str, **values):
    """Copy of ``cfg`` with non-None ``values`` replacing fields of ``section`` (re-validated)."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    data = cfg.model_dump()
    data[section].update(values)
    return type(cfg).model_validate(data)


def _load_dataset(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset {path} not found")
    return read_dataset(path)


def _match_dataset(cfg, forcing, response):
    """Align the config's DOF count and drive DOFs with a dataset's columns."""
    data = cfg.model_dump()
    data["system"]["n_dof"] = response.channels
    data["forcing"]["drive_dofs"] = forcing_dofs(forcing)
    if data == cfg.model_dump():
        return cfg
    return type(cfg).model_validate(data)


def _system_for_dataset(cfg, data_path, **changes):
    """Chain parameters recorded in the dataset's metadata sidecar, else from the config."""
    meta_path = Path(str(data_path) + ".json")
    if meta_path.exists():
        system = json.loads(meta_path.read_text()).get("system")
        if system:
            cfg = _override(cfg, "system", **system)
    return build_chain(cfg.chain_params(**changes))


def _noise_std(cfg) -> float:
    if cfg.forcing.calibrate_ratio is None:
        return cfg.forcing.noise_std
    system = build_chain(cfg.chain_params())
    std = calibrate_forcing(system, cfg.forcing_spec(), cfg.forcing.calibrate_ratio, cfg.forcing.calibrate_dof,
                            duration=min(100.0, cfg.forcing.duration))
    logger.info("calibrated forcing std %.4f", std)
    return std


def _simulate_to(cfg, out: Path) -> tuple[MultiChannelSeries, MultiChannelSeries, dict]:
    std = _noise_std(cfg)
    forcing = generate_forcing(cfg.forcing_spec(std), cfg.system.n_dof)
    response = simulate(build_chain(cfg.chain_params()), forcing)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, forcing, response)
    meta = {
        "kind": "dataset",
        "version": __version__,
        "seed": cfg.seed,
        "component_seeds": cfg.seeds(),
        "noise_std": std,
        "duration": cfg.forcing.duration,
        "n_steps": forcing.n_steps,
        "system": cfg.system.model_dump(),
        "forcing": cfg.forcing.model_dump(),
        "sha256": sha256_file(out),
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    _write_json(str(out) + ".json", meta)
    return forcing, response, meta


def _report_summary(report) -> str:
    lines = [f"window [{report.start}, {report.start + report.horizon}) warmup {report.warmup} "
             f"in_sample={report.in_sample} bounded={report.bounded} "
             f"early-window wins {report.early_wins}/{len(report.mse)}",
             "dof        mse        nmse   early_mse  baseline"]
    for k in range(len(report.mse)):
        lines.append(f"x{k + 1:<4d} {report.mse[k]:10.4g} {report.nmse[k]:10.4g} "
                     f"{report.early_mse[k]:10.4g} {report.early_baseline_mse[k]:10.4g}")
    refs = ", ".join(f"{k} {v}" for k, v in REFERENCE_MSE.items())
    lines.append(f"reference MSE ({refs}); the reference's units and normalisation are unstated")
    return "\n".join(lines)


# ---------------------------------------------------------------- subcommands

def cmd_simulate(args) -> int:
    cfg = _override(_experiment(args), "forcing", duration=args.duration, noise_std=args.noise_std)
    _, _, meta = _simulate_to(cfg, Path(args.out))
    print(f"wrote {args.out} ({meta['n_steps']} rows, noise std {meta['noise_std']:.4g})")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _experiment(args)
    system = build_chain(cfg.chain_params())
    std = calibrate_forcing(system, cfg.forcing_spec(), args.ratio, args.dof, duration=args.duration)
    print(json.dumps({"noise_std": std, "ratio": args.ratio, "dof": args.dof}))
    return EXIT_OK


def cmd_train_ae(args) -> int:
    cfg = _override(_experiment(args), "autoencoder", latent=args.latent, split=args.split, epochs=args.epochs,
                    hidden=args.hidden)
    forcing, response = _load_dataset(args.data)
    cfg = _match_dataset(cfg, forcing, response)
    pc = cfg.pipeline_config()
    model = ae_train(response, pc.architecture, pc.ae_split, pc.ae_train)
    save_autoencoder(model, args.out)
    rep = reconstruction_report(model, response)
    print(f"autoencoder: best epoch {model.best_epoch} train {model.train_loss:.4g} test {model.test_loss:.4g} "
          f"max NMSE {rep.nmse.max():.4g} -> {args.out}")
    return EXIT_OK


def cmd_train_lstm(args) -> int:
    cfg = _override(_experiment(args), "regressor", lag=args.lag, hidden=args.hidden, train_fraction=args.train_frac,
                    epochs=args.epochs, streams=args.streams, window=args.window)
    forcing, response = _load_dataset(args.data)
    ae = load_autoencoder(args.ae)
    r, seeds = cfg.regressor, cfg.seeds()
    rc = RegressorConfig(r.lag, r.hidden, forcing.channels, ae.architecture.bottleneck, r.train_fraction, r.horizon)
    tc = RegressorTrainConfig(r.epochs, r.window, r.streams, r.lr, r.patience, r.val_fraction, seeds["regressor"])
    model = train_teacher_forced(forcing.values, ae.encode_array(response.values), rc, tc)
    save_regressor(model, args.out)
    best = model.history[model.best_epoch]
    print(f"regressor: best epoch {model.best_epoch} train {best['train']:.4g} val {best['val']:.4g} -> {args.out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    forcing, response = _load_dataset(args.data)
    cfg = _match_dataset(_experiment(args), forcing, response)
    ae = load_autoencoder(args.ae) if args.ae else None
    artifact = fit_rom(forcing, response, cfg.pipeline_config(), autoencoder=ae)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_artifact(artifact, args.out)
    print(f"wrote {args.out} (sha256 {sha256_file(args.out)[:16]})")
    return EXIT_OK


def cmd_predict(args) -> int:
    artifact = load_artifact(args.rom)
    rc = artifact.config.regressor
    horizon = rc.horizon if args.horizon is None else args.horizon
    if args.warmup:
        wf, wx = _load_dataset(args.warmup)
        future = _load_dataset(args.forcing)[0]
    else:
        ff, fx = _load_dataset(args.forcing)
        if fx.channels == 0:
            raise UsageError("--forcing has no displacement columns; pass --warmup with a dataset")
        start = artifact.config.warmup_factor * rc.lag if args.start is None else args.start
        if start < rc.lag:
            raise UsageError(f"--start must be at least the lag ({rc.lag})")
        first = max(0, start - artifact.config.warmup_factor * rc.lag)
        wf, wx = ff.window(first, start), fx.window(first, start)
        future = ff.window(start, ff.n_steps)
    if future.n_steps < horizon:
        raise UsageError(f"forcing provides {future.n_steps} future steps, horizon is {horizon}")
    pred = rom_predict(artifact, future.values[:horizon], wf.values, wx.values, horizon, t0=future.t0)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_series_csv(out, pred.series())
    _write_json(str(out) + ".json", {"kind": "prediction", "horizon": horizon, "failed_step": pred.failed_step,
                                     "rom_sha256": sha256_file(args.rom)})
    if not pred.finite:
        print(f"prediction diverged at step {pred.failed_step}; wrote finite prefix to {out}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"wrote {out} ({horizon} steps)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    artifact = load_artifact(args.rom)
    forcing, response = _load_dataset(args.data)
    report = evaluate(artifact, forcing, response, args.horizon, args.start, args.out_dir)
    if args.report:
        data = report.to_dict()
        data["reference_mse"] = REFERENCE_MSE
        _write_json(args.report, data)
    print(_report_summary(report))
    return EXIT_OK


def cmd_analyze(args) -> int:
    if args.latent_corr and not args.ae:
        raise UsageError("--latent-corr requires --ae MODEL")
    return _analyze(args, _experiment(args))


def _analyze(args, cfg) -> int:
    a = cfg.analysis
    segment = args.segment or a.segment
    overlap = a.overlap if args.overlap is None else args.overlap
    window = args.window or a.window
    dof = a.force_dof if args.dof is None else args.dof
    forcing, response = _load_dataset(args.data)
    cfg = _match_dataset(cfg, forcing, response)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    band = tuple(a.band)
    summary = {"band_hz": band, "segment": segment, "overlap": overlap, "window": window}

    def coherence_set(resp, tag):
        means = []
        sub = out / f"multicoherence{tag}"
        sub.mkdir(exist_ok=True)
        for k in range(resp.channels):
            est = multicoherence(forcing.values, resp.values[:, k], forcing.fs, segment, overlap, window)
            est.to_csv(sub / f"{resp.labels[k]}.csv")
            means.append(est.band_mean(*band))
        return means

    summary["multicoherence_band_mean"] = coherence_set(response, "")
    system = _system_for_dataset(cfg, args.data)
    if args.linear_baseline:
        linear = simulate(system.linearized(), forcing)
        summary["linear_multicoherence_band_mean"] = coherence_set(linear, "_linear")
    forces = element_force_histories(system, response, dof)
    write_series_csv(out / f"restoring_force_{response.labels[dof]}.csv", forces)
    rms = np.sqrt(np.mean(forces.values ** 2, axis=0))
    summary["restoring_force"] = {"dof": dof, "rms_linear": rms[0], "rms_cubic": rms[1],
                                  "ratio": rms[1] / rms[0] if rms[0] > 0 else 0.0}
    if args.latent_corr:
        ae = load_autoencoder(args.ae)
        corr = correlation_matrix(ae.encode_array(response.values))
        labels = [f"y{k + 1}" for k in range(corr.shape[0])]
        np.savetxt(out / "latent_correlation.csv", corr, fmt="%.12e", delimiter=",", header=",".join(labels),
                   comments="")
        summary["latent_max_offdiag"] = float(np.max(np.abs(corr - np.eye(len(corr)))))
    _write_json(out / "analysis.json", summary)
    print(json.dumps({k: v for k, v in summary.items() if "band_mean" not in k}, default=_json_default))
    nl = np.mean(summary["multicoherence_band_mean"])
    msg = f"mean multicoherence {band[0]}-{band[1]} Hz: {nl:.4f}"
    if args.linear_baseline:
        msg += f" (linear twin {np.mean(summary['linear_multicoherence_band_mean']):.4f})"
    print(msg)
    return EXIT_OK


def write_manifest(out_dir: Path) -> Path:
    """List every file under ``out_dir`` (except the manifest and marker) with its digest."""
    files = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name not in ("manifest.json", PARTIAL_MARKER):
            files[str(p.relative_to(out_dir))] = {"sha256": sha256_file(p), "bytes": p.stat().st_size}
    return _write_json(out_dir / "manifest.json", {"version": __version__, "files": files})


def cmd_full_run(args) -> int:
    cfg = _experiment(args)
    out = Path(args.out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / PARTIAL_MARKER
    marker.write_text("incomplete run; outputs in this directory may be missing or stale\n")
    (out / "config.yaml").write_text(cfg.to_yaml())
    logger.info("simulating")
    forcing, response, _ = _simulate_to(cfg, out / "data.csv")
    forcing, response = read_dataset(out / "data.csv")
    logger.info("fitting reduced-order model")
    artifact = fit_rom(forcing, response, cfg.pipeline_config())
    save_artifact(artifact, out / "rom.bin")
    logger.info("evaluating")
    report = evaluate(artifact, forcing, response, out_dir=out / "evaluation")
    data = report.to_dict()
    data["reference_mse"] = REFERENCE_MSE
    data["artifact_sha256"] = sha256_file(out / "rom.bin")
    _write_json(out / "evaluation" / "report.json", data)
    if args.analyze:
        ns = argparse.Namespace(data=str(out / "data.csv"), out_dir=str(out / "analysis"), linear_baseline=True,
                                latent_corr=False, ae=None, dof=None, segment=None, overlap=None, window=None)
        _analyze(ns, cfg)
    write_manifest(out)
    marker.unlink()
    print(_report_summary(report))
    print(f"artifact sha256 {data['artifact_sha256']}")
    return EXIT_OK


def cmd_schema(args) -> int:
    print(json.dumps(config_schema(), indent=2))
    return EXIT_OK


def cmd_init_config(args) -> int:
    text = preset(args.preset).to_yaml()
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _add_config(p, seed=True):
    p.add_argument("--config", help="experiment config (YAML); defaults to the chosen preset")
    p.add_argument("--preset", choices=("full", "smoke"), help="built-in config used when --config is absent "
                                                                 "(default: full)")
    if seed:
        p.add_argument("--seed", type=int, help="global seed; overrides NNMROM_SEED and the config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nnmrom", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"nnmrom {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", help="generate a forcing/response dataset CSV")
    _add_config(p)
    p.add_argument("--out", required=True, help="output CSV path (metadata goes to OUT.json)")
    p.add_argument("--duration", type=float, help="simulated seconds (overrides config)")
    p.add_argument("--noise-std", type=float, help="forcing std in N (overrides config)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="find the forcing std for a cubic/linear restoring-force RMS ratio")
    _add_config(p)
    p.add_argument("--ratio", type=float, default=1.0, help="target RMS(cubic)/RMS(linear) (default 1.0)")
    p.add_argument("--dof", type=int, default=9, help="zero-based DOF index (default 9)")
    p.add_argument("--duration", type=float, default=100.0, help="seconds simulated per trial (default 100)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("train-ae", help="train the autoencoder on a dataset")
    _add_config(p)
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--latent", type=int, help="bottleneck width (config default 10)")
    p.add_argument("--hidden", type=int, help="hidden layer width (config default 20)")
    p.add_argument("--split", type=float, help="leading fraction used for training (config default 0.5)")
    p.add_argument("--epochs", type=int, help="maximum epochs")
    p.add_argument("--out", required=True, help="model file (sidecar OUT.json holds the architecture)")
    p.set_defaults(func=cmd_train_ae)

    p = sub.add_parser("train-lstm", help="train the latent regressor using a trained autoencoder")
    _add_config(p)
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--ae", required=True, help="autoencoder model file")
    p.add_argument("--lag", type=int, help="number of past samples fed to the model (config default 100)")
    p.add_argument("--hidden", type=int, help="LSTM hidden units (config default 64)")
    p.add_argument("--train-frac", type=float, help="leading fraction used for training (config default 0.6)")
    p.add_argument("--epochs", type=int, help="maximum epochs")
    p.add_argument("--streams", type=int, help="parallel truncated-BPTT streams")
    p.add_argument("--window", type=int, help="truncated-BPTT window length")
    p.add_argument("--out", required=True, help="model file")
    p.set_defaults(func=cmd_train_lstm)

    p = sub.add_parser("fit", help="train the full reduced-order model and save an artifact")
    _add_config(p)
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--ae", help="reuse a trained autoencoder instead of training one")
    p.add_argument("--out", required=True, help="artifact path")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="forecast the displacement field from forcing")
    p.add_argument("--rom", required=True, help="artifact path")
    p.add_argument("--forcing", required=True,
                   help="CSV with future forcing; without --warmup it must also hold displacements, and the rows "
                        "before --start serve as warmup")
    p.add_argument("--warmup", help="dataset CSV (forcing + displacement) preceding the forecast")
    p.add_argument("--start", type=int, help="first forecast row of --forcing when --warmup is absent")
    p.add_argument("--horizon", type=int, help="steps to forecast (default: artifact horizon)")
    p.add_argument("--out", required=True, help="prediction CSV (t,x1..)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a forecast on a held-out window")
    p.add_argument("--rom", required=True, help="artifact path")
    p.add_argument("--data", required=True, help="dataset CSV the artifact was trained on")
    p.add_argument("--horizon", type=int, help="steps to forecast (default: artifact horizon)")
    p.add_argument("--start", type=int, help="first forecast row (default: end of the training spans)")
    p.add_argument("--report", help="write the report as JSON here")
    p.add_argument("--out-dir", help="write prediction/overlay CSVs here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="coherence, restoring-force and latent-correlation data")
    _add_config(p, seed=False)
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--linear-baseline", action="store_true", help="also analyse the k_nl=0 twin under the same forcing")
    p.add_argument("--latent-corr", action="store_true", help="latent correlation matrix (requires --ae)")
    p.add_argument("--ae", help="autoencoder model file")
    p.add_argument("--dof", type=int, help="zero-based DOF for the restoring-force export (default 9)")
    p.add_argument("--segment", type=int, help="Welch segment length")
    p.add_argument("--overlap", type=float, help="Welch overlap fraction")
    p.add_argument("--window", help="Welch window name")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("full-run", help="simulate, fit, evaluate and write a manifest")
    _add_config(p)
    p.add_argument("--out-dir", help="output directory (default: config output_dir)")
    p.add_argument("--analyze", action="store_true", help="also run the analysis stage")
    p.set_defaults(func=cmd_full_run)

    p = sub.add_parser("schema", help="print the config JSON schema")
    p.set_defaults(func=cmd_schema)

    p = sub.add_parser("init-config", help="print or write a preset config")
    p.add_argument("--preset", choices=("full", "smoke"), default="full")
    p.add_argument("--out", help="write here instead of stdout")
    p.set_defaults(func=cmd_init_config)
    return parser


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, KeyboardInterrupt):
        return EXIT_INTERRUPTED
    if isinstance(exc, (CorruptFile, VersionMismatch, OSError)):
        return EXIT_IO
    if isinstance(exc, (UsageError, InvalidParams, ConfigInconsistent)):
        return EXIT_USAGE
    if isinstance(exc, (ArithmeticError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, (NnmRomError, ValueError)):
        return EXIT_USAGE
    raise exc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        code = args.func(args)
        sys.stdout.flush()
        return code
    except BrokenPipeError:
        # Output was piped into a reader that closed early (e.g. ``| head``); not an error.
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except (Exception, KeyboardInterrupt) as exc:  # noqa: BLE001 - mapped to exit codes
        code = exit_code_for(exc)
        print(f"nnmrom {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
