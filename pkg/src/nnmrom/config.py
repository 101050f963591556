"""Experiment configuration: a YAML document validated against a strict schema.

Unknown keys are rejected. Component seeds are derived from one global seed, which the
``NNMROM_SEED`` environment variable overrides and a command-line flag overrides in turn.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .autoencoder import AeArchitecture, AeTrainConfig
from .dynamics import ChainParams, ForcingSpec
from .errors import InvalidParams
from .pipeline import PipelineConfig
from .regressor import RegressorConfig, RegressorTrainConfig

SEED_ENV = "NNMROM_SEED"
COMPONENTS = ("forcing", "autoencoder", "regressor")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SystemConfig(_Strict):
    n_dof: int = Field(20, ge=1)
    mass: float = Field(0.1, gt=0)
    k_lin: float = Field(100.0, ge=0)
    c_lin: float = Field(0.1, ge=0)
    k_nl: float = Field(2500.0, ge=0)
    grounded: tuple[bool, bool] = (True, True)


class ForcingConfig(_Strict):
    drive_dofs: tuple[int, ...] = (0, 19)
    noise_std: float = Field(19.0, ge=0, description="Std of the filtered noise, N")
    calibrate_ratio: float | None = Field(
        None, gt=0, description="If set, noise_std is replaced by the value giving this cubic/linear RMS ratio")
    calibrate_dof: int = Field(9, ge=0)
    cutoff_hz: float = Field(8.0, gt=0)
    fs: float = Field(100.0, gt=0)
    duration: float = Field(1000.0, gt=0)
    n_taps: int = Field(101, ge=3)


class AeConfig(_Strict):
    latent: int = Field(10, ge=1)
    hidden: int = Field(20, ge=1)
    split: float = Field(0.5, gt=0, lt=1)
    epochs: int = Field(200, ge=1)
    batch_size: int = Field(256, ge=1)
    lr: float = Field(1e-3, gt=0)
    patience: int = Field(20, ge=1)


class LstmConfig(_Strict):
    lag: int = Field(100, ge=1)
    hidden: int = Field(64, ge=1)
    train_fraction: float = Field(0.6, gt=0, lt=1)
    horizon: int = Field(1000, ge=1)
    epochs: int = Field(40, ge=1)
    window: int = Field(200, ge=1)
    streams: int = Field(8, ge=1)
    lr: float = Field(1e-3, gt=0)
    patience: int = Field(10, ge=1)
    val_fraction: float = Field(0.1, ge=0, lt=1)
    warmup_factor: int = Field(2, ge=1)
    early_steps: int = Field(200, ge=1)


class AnalysisConfig(_Strict):
    segment: int = Field(4096, ge=8)
    overlap: float = Field(0.5, ge=0, lt=1)
    window: str = "hann"
    force_dof: int = Field(9, ge=0)
    band: tuple[float, float] = (0.5, 8.0)


class ExperimentConfig(_Strict):
    seed: int = Field(0, ge=0)
    output_dir: str = "nnmrom-out"
    system: SystemConfig = SystemConfig()
    forcing: ForcingConfig = ForcingConfig()
    autoencoder: AeConfig = AeConfig()
    regressor: LstmConfig = LstmConfig()
    analysis: AnalysisConfig = AnalysisConfig()

    @model_validator(mode="after")
    def _cross_checks(self):
        n = self.system.n_dof
        if any(not 0 <= d < n for d in self.forcing.drive_dofs) or not self.forcing.drive_dofs:
            raise ValueError(f"forcing.drive_dofs must be non-empty indices in [0, {n})")
        if self.autoencoder.latent > n:
            raise ValueError("autoencoder.latent cannot exceed system.n_dof")
        if self.forcing.cutoff_hz >= self.forcing.fs / 2:
            raise ValueError("forcing.cutoff_hz must be below fs/2")
        if not 0 <= self.analysis.force_dof < n:
            raise ValueError("analysis.force_dof must lie in [0, n_dof)")
        if self.forcing.calibrate_ratio is not None and not 0 <= self.forcing.calibrate_dof < n:
            raise ValueError("forcing.calibrate_dof must lie in [0, n_dof)")
        return self

    # -- conversion to component configs

    def seeds(self) -> dict[str, int]:
        return derive_seeds(self.seed)

    def chain_params(self, **changes) -> ChainParams:
        d = self.system.model_dump()
        d.update(changes)
        return ChainParams(**d)

    def forcing_spec(self, noise_std: float | None = None) -> ForcingSpec:
        f = self.forcing
        return ForcingSpec(tuple(f.drive_dofs), f.noise_std if noise_std is None else noise_std, f.cutoff_hz, f.fs,
                           f.duration, self.seeds()["forcing"], f.n_taps)

    def pipeline_config(self) -> PipelineConfig:
        a, r, seeds = self.autoencoder, self.regressor, self.seeds()
        arch = AeArchitecture(self.system.n_dof, ((a.hidden, "linear"), (a.hidden, "tanh")), a.latent,
                              ((a.hidden, "tanh"), (a.hidden, "linear")))
        return PipelineConfig(
            arch, AeTrainConfig(a.epochs, a.batch_size, a.lr, a.patience, seeds["autoencoder"]), a.split,
            RegressorConfig(r.lag, r.hidden, len(self.forcing.drive_dofs), a.latent, r.train_fraction, r.horizon),
            RegressorTrainConfig(r.epochs, r.window, r.streams, r.lr, r.patience, r.val_fraction, seeds["regressor"]),
            r.warmup_factor, r.early_steps)

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        return self if seed is None else self.model_copy(update={"seed": int(seed)})

    def to_yaml(self) -> str:
        return yaml.safe_dump(json.loads(self.model_dump_json()), sort_keys=False)


def derive_seeds(seed: int) -> dict[str, int]:
    """Independent per-component seeds spawned from one global seed."""
    children = np.random.SeedSequence(seed).spawn(len(COMPONENTS))
    return {name: int(child.generate_state(1)[0]) for name, child in zip(COMPONENTS, children)}


PRESETS: dict[str, dict] = {
    "full": {},
    "smoke": {
        "forcing": {"duration": 100.0},
        "autoencoder": {"epochs": 50, "patience": 10},
        "regressor": {"epochs": 10, "streams": 4, "horizon": 1000},
        "analysis": {"segment": 1024},
    },
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise InvalidParams(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ExperimentConfig.model_validate(PRESETS[name])


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise InvalidParams(f"config is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidParams("config must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise InvalidParams(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def resolve_seed(config: ExperimentConfig, flag: int | None = None) -> ExperimentConfig:
    """Apply seed precedence: flag, then ``NNMROM_SEED``, then the config value."""
    if flag is not None:
        return config.with_seed(flag)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return config.with_seed(int(env))
        except ValueError as exc:
            raise InvalidParams(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    return config


def config_schema() -> dict:
    return ExperimentConfig.model_json_schema()


__all__ = ["ExperimentConfig", "PRESETS", "config_schema", "derive_seeds", "load_config",
           "parse_config", "preset", "resolve_seed"]
