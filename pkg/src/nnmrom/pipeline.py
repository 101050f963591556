"""Reduced-order model pipeline: extract latents, regress them on forcing, reconstruct.

``fit_rom`` trains the autoencoder and then the latent regressor; ``rom_predict`` forecasts
the full displacement field by decoding a free-run latent forecast; ``evaluate`` scores a
forecast on a window outside both training spans. Artifacts persist as one checksummed file.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .autoencoder import (
    AeArchitecture, AeTrainConfig, AutoencoderModel, Normalizer, ae_train,
)
from .errors import ConfigInconsistent, CorruptFile, DimensionMismatch, SeriesTooShort, VersionMismatch
from .nn.dense import DenseLayer
from .nn.lstm import LstmCellParams
from .nn.serialize import dumps_params, load_params, loads_params, save_params
from .regressor import (
    FreeRunResult, LatentRegressor, RegressorConfig, RegressorTrainConfig, free_run_predict,
    train_teacher_forced,
)
from .series import CSV_FMT, MultiChannelSeries
from .spectral import mse, nmse

logger = logging.getLogger(__name__)

MAGIC = b"NNMROM"
SCHEMA_VERSION = 1
# MIGRATIONS[k] upgrades a schema-k header dict to schema k+1.
MIGRATIONS: dict[int, Callable[[dict], dict]] = {}


@dataclass(frozen=True)
class PipelineConfig:
    architecture: AeArchitecture = field(default_factory=AeArchitecture)
    ae_train: AeTrainConfig = field(default_factory=AeTrainConfig)
    ae_split: float = 0.5
    regressor: RegressorConfig = field(default_factory=RegressorConfig)
    regressor_train: RegressorTrainConfig = field(default_factory=RegressorTrainConfig)
    warmup_factor: int = 2  # evaluation warmup length, in multiples of the lag
    early_steps: int = 200  # span of the early-horizon score

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        arch = dict(d["architecture"])
        arch["encoder"] = tuple(tuple(x) for x in arch["encoder"])
        arch["decoder"] = tuple(tuple(x) for x in arch["decoder"])
        return cls(AeArchitecture(**arch), AeTrainConfig(**d["ae_train"]), d["ae_split"],
                   RegressorConfig(**d["regressor"]), RegressorTrainConfig(**d["regressor_train"]),
                   d.get("warmup_factor", 2), d.get("early_steps", 200))

    def digest(self) -> str:
        return _sha256(json.dumps(self.to_dict(), sort_keys=True).encode())

    def check(self, n_forcing: int | None = None, n_dof: int | None = None) -> None:
        """Cross-component consistency; raises ``ConfigInconsistent``."""
        self.architecture.validate()
        self.regressor.validate()
        if self.architecture.bottleneck != self.regressor.n_latent:
            raise ConfigInconsistent(
                f"autoencoder bottleneck {self.architecture.bottleneck} != regressor n_latent {self.regressor.n_latent}")
        if n_dof is not None and n_dof != self.architecture.input_dim:
            raise ConfigInconsistent(f"data has {n_dof} DOFs, autoencoder expects {self.architecture.input_dim}")
        if n_forcing is not None and n_forcing != self.regressor.n_forcing:
            raise ConfigInconsistent(f"data has {n_forcing} forcing channels, regressor expects {self.regressor.n_forcing}")
        if self.warmup_factor < 1:
            raise ConfigInconsistent("warmup_factor must be >= 1")


@dataclass(eq=False)
class RomArtifact:
    autoencoder: AutoencoderModel
    regressor: LatentRegressor
    config: PipelineConfig
    provenance: dict

    @property
    def n_dof(self) -> int:
        return self.autoencoder.architecture.input_dim


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def data_digest(forcing: MultiChannelSeries, response: MultiChannelSeries) -> str:
    h = hashlib.sha256()
    for s in (forcing, response):
        h.update(struct.pack("<d", s.dt))
        h.update(",".join(s.labels).encode())
        h.update(np.ascontiguousarray(s.values, dtype="<f8").tobytes())
    return h.hexdigest()


def training_spans(n_samples: int, cfg: PipelineConfig) -> dict[str, tuple[int, int]]:
    """Sample index ranges ``[start, stop)`` each component trains on."""
    return {"autoencoder": (0, int(round(cfg.ae_split * n_samples))),
            "regressor": (0, int(cfg.regressor.train_fraction * n_samples))}


def _check_dataset(forcing: MultiChannelSeries, response: MultiChannelSeries):
    if forcing.n_steps != response.n_steps:
        raise DimensionMismatch("forcing and response lengths differ")
    if not np.isclose(forcing.dt, response.dt, rtol=1e-12, atol=0):
        raise ConfigInconsistent("forcing and response sampling intervals differ")


def fit_rom(forcing: MultiChannelSeries, response: MultiChannelSeries, cfg: PipelineConfig | None = None,
            autoencoder: AutoencoderModel | None = None) -> RomArtifact:
    """Train (or reuse) the autoencoder, encode the full record, then train the regressor.

    A supplied ``autoencoder`` skips the first stage; its bottleneck must match the
    regressor's latent count.
    """
    cfg = cfg or PipelineConfig()
    _check_dataset(forcing, response)
    if autoencoder is not None and autoencoder.architecture != cfg.architecture:
        if autoencoder.architecture.bottleneck != cfg.regressor.n_latent:
            raise ConfigInconsistent(f"supplied autoencoder has {autoencoder.architecture.bottleneck} latents, "
                                     f"regressor expects {cfg.regressor.n_latent}")
        cfg = dataclasses.replace(cfg, architecture=autoencoder.architecture)
    cfg.check(forcing.channels, response.channels)
    if autoencoder is None:
        logger.info("training autoencoder on %d samples", response.n_steps)
        autoencoder = ae_train(response, cfg.architecture, cfg.ae_split, cfg.ae_train)
    latents = autoencoder.encode_array(response.values)
    logger.info("training latent regressor")
    regressor = train_teacher_forced(forcing.values, latents, cfg.regressor, cfg.regressor_train)
    provenance = {
        "version": __version__,
        "config_digest": cfg.digest(),
        "data_digest": data_digest(forcing, response),
        "seeds": {"autoencoder": cfg.ae_train.seed, "regressor": cfg.regressor_train.seed},
        "n_samples": response.n_steps,
        "dt": response.dt,
        "forcing_labels": list(forcing.labels),
        "response_labels": list(response.labels),
        "training_spans": training_spans(response.n_steps, cfg),
        "notes": [],
    }
    return RomArtifact(autoencoder, regressor, cfg, provenance)


# ---------------------------------------------------------------- prediction

LatentPredictor = Callable[[RomArtifact, np.ndarray, np.ndarray, np.ndarray, int], FreeRunResult]


def lstm_predictor(artifact: RomArtifact, forcing_future, warmup_forcing, warmup_latents, horizon) -> FreeRunResult:
    return free_run_predict(artifact.regressor, forcing_future, warmup_forcing, warmup_latents, horizon)


@dataclass(frozen=True)
class RomPrediction:
    """Physical (``values``) and latent forecasts; rows from ``failed_step`` on are NaN."""

    values: np.ndarray
    latent: np.ndarray
    dt: float
    t0: float
    labels: tuple[str, ...]
    failed_step: int | None = None

    @property
    def finite(self) -> bool:
        return self.failed_step is None

    def series(self) -> MultiChannelSeries:
        stop = len(self.values) if self.failed_step is None else self.failed_step
        return MultiChannelSeries(self.dt, self.values[:stop], self.labels, self.t0)


def rom_predict(artifact: RomArtifact, forcing_future, warmup_forcing, warmup_response, horizon: int,
                predictor: LatentPredictor = lstm_predictor, t0: float = 0.0) -> RomPrediction:
    """Forecast ``horizon`` steps of the displacement field.

    The warmup displacements are encoded to latents, the latent trajectory is forecast in
    free run, and the forecast is decoded back to physical coordinates.
    """
    ff = np.asarray(getattr(forcing_future, "values", forcing_future), dtype=np.float64)
    wf = np.asarray(getattr(warmup_forcing, "values", warmup_forcing), dtype=np.float64)
    wx = np.asarray(getattr(warmup_response, "values", warmup_response), dtype=np.float64)
    ae = artifact.autoencoder
    dt = artifact.provenance.get("dt", getattr(forcing_future, "dt", 1.0))
    labels = tuple(artifact.provenance.get("response_labels") or (f"x{i + 1}" for i in range(artifact.n_dof)))
    if horizon == 0:
        return RomPrediction(np.empty((0, artifact.n_dof)), np.empty((0, ae.architecture.bottleneck)), dt, t0, labels)
    latent_warm = ae.encode_array(wx)
    run = predictor(artifact, ff, wf, latent_warm, horizon)
    stop = horizon if run.failed_step is None else run.failed_step
    physical = np.full((horizon, artifact.n_dof), np.nan)
    physical[:stop] = ae.decode_array(run.values[:stop])
    return RomPrediction(physical, run.values, dt, t0, labels, run.failed_step)


# ---------------------------------------------------------------- evaluation

@dataclass
class EvaluationReport:
    start: int
    horizon: int
    warmup: int
    in_sample: bool
    training_spans: dict
    mse: np.ndarray
    nmse: np.ndarray
    early_mse: np.ndarray
    early_baseline_mse: np.ndarray
    latent_nmse: np.ndarray
    rms_ratio: np.ndarray
    max_abs_ratio: np.ndarray
    bounded: bool
    failed_step: int | None
    bound_factor: float = 5.0
    files: dict = field(default_factory=dict)

    @property
    def early_wins(self) -> int:
        """DOFs whose early-horizon MSE beats predicting the training mean."""
        return int(np.sum(self.early_mse < self.early_baseline_mse))

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        out["early_wins"] = self.early_wins
        return out


def evaluate(artifact: RomArtifact, forcing: MultiChannelSeries, response: MultiChannelSeries,
             horizon: int | None = None, start: int | None = None, out_dir=None,
             predictor: LatentPredictor = lstm_predictor, bound_factor: float = 5.0,
             overlay_dofs: tuple[int, ...] = (0, 9)) -> EvaluationReport:
    """Forecast ``horizon`` steps from ``start`` and score them against ``response``.

    ``start`` defaults to the end of the later training span so the window is out of sample
    for both components; the report's ``in_sample`` flag is set whenever the window overlaps
    a training span. Warmup is taken from the samples right before ``start``. With
    ``out_dir``, overlay CSVs and ``report.json`` are written there.
    """
    _check_dataset(forcing, response)
    cfg = artifact.config
    horizon = cfg.regressor.horizon if horizon is None else int(horizon)
    spans = {k: tuple(v) for k, v in artifact.provenance.get(
        "training_spans", training_spans(response.n_steps, cfg)).items()}
    start = max(stop for _, stop in spans.values()) if start is None else int(start)
    lag = cfg.regressor.lag
    warm = min(start, cfg.warmup_factor * lag)
    if warm < lag:
        raise SeriesTooShort(f"need {lag} warmup samples before start={start}")
    if start + horizon > response.n_steps:
        raise SeriesTooShort(f"window [{start}, {start + horizon}) exceeds {response.n_steps} samples")
    in_sample = any(start < stop and lo < start + horizon for lo, stop in spans.values())

    f, x = forcing.values, response.values
    pred = rom_predict(artifact, f[start:start + horizon], f[start - warm:start], x[start - warm:start], horizon,
                       predictor, t0=forcing.t0 + start * forcing.dt)
    truth = x[start:start + horizon]
    ok = horizon if pred.finite else pred.failed_step
    n_dof = artifact.n_dof
    if ok:
        per_mse, _ = mse(truth[:ok], pred.values[:ok])
        per_nmse, _ = nmse(truth[:ok], pred.values[:ok])
        early = min(cfg.early_steps, ok)
        early_mse, _ = mse(truth[:early], pred.values[:early])
        baseline = np.broadcast_to(artifact.autoencoder.norm.mean, (early, n_dof))
        early_base, _ = mse(truth[:early], baseline)
        latent_true = artifact.autoencoder.encode_array(truth[:ok])
        latent_nmse, _ = nmse(latent_true, pred.latent[:ok])
        rms_true = np.sqrt(np.mean(truth ** 2, axis=0))
        rms_ratio = np.sqrt(np.mean(pred.values[:ok] ** 2, axis=0)) / rms_true
        max_abs_ratio = np.max(np.abs(pred.values[:ok]), axis=0) / rms_true
    else:
        nan = np.full(n_dof, np.nan)
        per_mse = per_nmse = early_mse = early_base = rms_ratio = max_abs_ratio = nan
        latent_nmse = np.full(artifact.autoencoder.architecture.bottleneck, np.nan)
    bounded = bool(pred.finite and np.all(max_abs_ratio <= bound_factor))
    report = EvaluationReport(start, horizon, warm, in_sample, spans, per_mse, per_nmse, early_mse, early_base,
                              latent_nmse, rms_ratio, max_abs_ratio, bounded, pred.failed_step, bound_factor)
    if out_dir is not None:
        report.files = write_evaluation_files(out_dir, artifact, pred, truth, report, overlay_dofs)
    return report


def _write_csv(path: Path, columns: list[np.ndarray], header: list[str]) -> Path:
    np.savetxt(path, np.column_stack(columns), fmt=CSV_FMT, delimiter=",", header=",".join(header), comments="")
    return path


def write_evaluation_files(out_dir, artifact: RomArtifact, pred: RomPrediction, truth: np.ndarray,
                           report: EvaluationReport, overlay_dofs=(0, 9)) -> dict[str, str]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t = pred.t0 + pred.dt * np.arange(len(truth))
    n_lat = pred.latent.shape[1]
    latent_true = artifact.autoencoder.encode_array(truth)
    files = {}
    files["latent"] = _write_csv(
        out_dir / "latent_prediction.csv", [t, pred.latent, latent_true],
        ["t"] + [f"y{k + 1}_pred" for k in range(n_lat)] + [f"y{k + 1}_true" for k in range(n_lat)])
    files["physical"] = _write_csv(
        out_dir / "physical_prediction.csv", [t, pred.values, truth],
        ["t"] + [f"{lab}_pred" for lab in pred.labels] + [f"{lab}_true" for lab in pred.labels])
    for dof in overlay_dofs:
        if dof < artifact.n_dof:
            lab = pred.labels[dof]
            files[f"overlay_{lab}"] = _write_csv(out_dir / f"overlay_{lab}.csv", [t, pred.values[:, dof], truth[:, dof]],
                                                 ["t", f"{lab}_pred", f"{lab}_true"])
    files = {k: str(v) for k, v in files.items()}
    report.files = files
    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True, default=_json_default))
    files["report"] = str(report_path)
    return files


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


# ---------------------------------------------------------------- persistence

def _artifact_arrays(a: RomArtifact) -> dict[str, np.ndarray]:
    return {**_ae_arrays(a.autoencoder, "ae."), **_reg_arrays(a.regressor, "reg.")}


def _ae_arrays(ae: AutoencoderModel, prefix: str = "") -> dict[str, np.ndarray]:
    arrays = {f"{prefix}{k}": v for k, v in ae.params().items()}
    arrays[f"{prefix}norm.mean"], arrays[f"{prefix}norm.std"] = ae.norm.mean, ae.norm.std
    return arrays


def _reg_arrays(reg: LatentRegressor, prefix: str = "") -> dict[str, np.ndarray]:
    arrays = {f"{prefix}{k}": v for k, v in reg.params().items()}
    for name in ("forcing_norm", "latent_norm"):
        norm = getattr(reg, name)
        arrays[f"{prefix}{name}.mean"], arrays[f"{prefix}{name}.std"] = norm.mean, norm.std
    return arrays


def dumps_artifact(artifact: RomArtifact) -> bytes:
    """Container: magic | u16 schema | u32 header length | JSON header | u64 blob length |
    parameter blob | u32 CRC32 of everything before it."""
    header = {
        "schema": SCHEMA_VERSION,
        "config": artifact.config.to_dict(),
        "provenance": artifact.provenance,
        "ae_history": artifact.autoencoder.history,
        "ae_best_epoch": artifact.autoencoder.best_epoch,
        "reg_history": artifact.regressor.history,
        "reg_best_epoch": artifact.regressor.best_epoch,
    }
    head = json.dumps(header, sort_keys=True, default=_json_default).encode()
    blob = dumps_params(_artifact_arrays(artifact))
    body = MAGIC + struct.pack("<HI", SCHEMA_VERSION, len(head)) + head + struct.pack("<Q", len(blob)) + blob
    return body + struct.pack("<I", zlib.crc32(body))


def artifact_digest(artifact: RomArtifact) -> str:
    return _sha256(dumps_artifact(artifact))


def loads_artifact(data: bytes) -> RomArtifact:
    fixed = len(MAGIC) + 6
    if len(data) < fixed + 12 or not data.startswith(MAGIC):
        raise CorruptFile("not an artifact file")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptFile("artifact checksum mismatch")
    schema, head_len = struct.unpack_from("<HI", data, len(MAGIC))
    if schema > SCHEMA_VERSION:
        raise VersionMismatch(f"artifact schema {schema} is newer than supported {SCHEMA_VERSION}")
    try:
        header = json.loads(data[fixed:fixed + head_len])
        (blob_len,) = struct.unpack_from("<Q", data, fixed + head_len)
    except (ValueError, struct.error) as exc:
        raise CorruptFile(f"unreadable artifact header: {exc}") from exc
    start = fixed + head_len + 8
    if start + blob_len != len(body):
        raise CorruptFile("artifact length mismatch")
    arrays = loads_params(data[start:start + blob_len])
    while schema < SCHEMA_VERSION:
        if schema not in MIGRATIONS:
            raise VersionMismatch(f"no migration from artifact schema {schema}")
        header = MIGRATIONS[schema](header)
        header.setdefault("provenance", {}).setdefault("notes", []).append(
            f"migrated from schema {schema} to {schema + 1}")
        schema += 1
    return _build_artifact(header, arrays)


def _build_autoencoder(arch: AeArchitecture, arrays: dict, prefix: str, history, best_epoch) -> AutoencoderModel:
    norm = Normalizer(arrays[f"{prefix}norm.mean"], arrays[f"{prefix}norm.std"])
    ae = AutoencoderModel.init(arch, norm, 0)
    ae.load_state({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix) and ".norm." not in f".{k}"})
    ae.history, ae.best_epoch = history, best_epoch
    return ae


def _build_regressor(rc: RegressorConfig, arrays: dict, prefix: str, history, best_epoch) -> LatentRegressor:
    reg = LatentRegressor(
        LstmCellParams(np.zeros((4 * rc.hidden, rc.input_width + rc.hidden)), np.zeros(4 * rc.hidden)),
        DenseLayer(np.zeros((rc.n_latent, rc.hidden)), np.zeros(rc.n_latent)), rc,
        Normalizer(arrays[f"{prefix}forcing_norm.mean"], arrays[f"{prefix}forcing_norm.std"]),
        Normalizer(arrays[f"{prefix}latent_norm.mean"], arrays[f"{prefix}latent_norm.std"]),
        history, best_epoch)
    reg.load_state({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix) and "_norm." not in k})
    return reg


def _build_artifact(header: dict, arrays: dict) -> RomArtifact:
    cfg = PipelineConfig.from_dict(header["config"])
    try:
        ae = _build_autoencoder(cfg.architecture, arrays, "ae.", header["ae_history"], header["ae_best_epoch"])
        reg = _build_regressor(cfg.regressor, arrays, "reg.", header["reg_history"], header["reg_best_epoch"])
    except (KeyError, ValueError) as exc:
        raise CorruptFile(f"artifact parameters do not match its configuration: {exc}") from exc
    return RomArtifact(ae, reg, cfg, header["provenance"])


def save_artifact(artifact: RomArtifact, path) -> Path:
    path = Path(path)
    path.write_bytes(dumps_artifact(artifact))
    return path


def load_artifact(path) -> RomArtifact:
    return loads_artifact(Path(path).read_bytes())


# Stand-alone component files: parameter blob plus a JSON sidecar describing the model.

def save_autoencoder(model: AutoencoderModel, path) -> Path:
    meta = {"kind": "autoencoder", "schema": SCHEMA_VERSION, "architecture": dataclasses.asdict(model.architecture),
            "history": model.history, "best_epoch": model.best_epoch}
    return save_params(path, _ae_arrays(model), meta)


def load_autoencoder(path) -> AutoencoderModel:
    arrays, meta = load_params(path)
    if meta.get("kind") != "autoencoder":
        raise CorruptFile(f"{path} is not an autoencoder file")
    if meta.get("schema", 0) > SCHEMA_VERSION:
        raise VersionMismatch(f"autoencoder file schema {meta['schema']} is newer than supported")
    a = meta["architecture"]
    arch = AeArchitecture(a["input_dim"], tuple(map(tuple, a["encoder"])), a["bottleneck"],
                          tuple(map(tuple, a["decoder"])), a["bottleneck_activation"], a["output_activation"])
    try:
        return _build_autoencoder(arch, arrays, "", meta["history"], meta["best_epoch"])
    except (KeyError, ValueError) as exc:
        raise CorruptFile(f"{path}: parameters do not match the architecture: {exc}") from exc


def save_regressor(model: LatentRegressor, path) -> Path:
    meta = {"kind": "regressor", "schema": SCHEMA_VERSION, "config": dataclasses.asdict(model.config),
            "history": model.history, "best_epoch": model.best_epoch}
    return save_params(path, _reg_arrays(model), meta)


def load_regressor(path) -> LatentRegressor:
    arrays, meta = load_params(path)
    if meta.get("kind") != "regressor":
        raise CorruptFile(f"{path} is not a regressor file")
    if meta.get("schema", 0) > SCHEMA_VERSION:
        raise VersionMismatch(f"regressor file schema {meta['schema']} is newer than supported")
    try:
        return _build_regressor(RegressorConfig(**meta["config"]), arrays, "", meta["history"], meta["best_epoch"])
    except (KeyError, ValueError) as exc:
        raise CorruptFile(f"{path}: parameters do not match the configuration: {exc}") from exc
