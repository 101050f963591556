"""Autoregressive LSTM forecasting of latent trajectories from forcing.

Each step's input is ``[F(t), F(t-1), ..., F(t-lag), Y(t-1), ..., Y(t-lag)]`` (standardized,
flattened lag-major); the target is ``Y(t)``. Training feeds true past latents (teacher
forcing); free-run prediction feeds back the model's own outputs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .autoencoder import Normalizer
from .errors import DimensionMismatch, InvalidParams, NonFiniteLoss, NonFinitePrediction, SeriesTooShort
from .nn.dense import DenseLayer, dense_forward
from .nn.lstm import LstmCellParams, lstm_bptt, lstm_forward, lstm_step
from .nn.optim import AdamState, adam_update, flatten

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegressorConfig:
    lag: int = 100
    hidden: int = 64
    n_forcing: int = 2
    n_latent: int = 10
    train_fraction: float = 0.6
    horizon: int = 1000

    def validate(self) -> None:
        if self.lag < 1 or self.hidden < 1 or self.horizon < 1 or self.n_forcing < 1 or self.n_latent < 1:
            raise InvalidParams("lag, hidden, horizon and channel counts must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise InvalidParams("train_fraction must lie in (0, 1)")

    @property
    def input_width(self) -> int:
        return self.lag * (self.n_forcing + self.n_latent) + self.n_forcing


@dataclass(frozen=True)
class RegressorTrainConfig:
    epochs: int = 40
    window: int = 200
    streams: int = 8
    lr: float = 1e-3
    patience: int = 10
    val_fraction: float = 0.1
    seed: int = 2


@dataclass(eq=False)
class LatentRegressor:
    lstm: LstmCellParams
    readout: DenseLayer
    config: RegressorConfig
    forcing_norm: Normalizer
    latent_norm: Normalizer
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1

    def params(self) -> dict[str, np.ndarray]:
        return flatten({"lstm": self.lstm.params(), "readout": self.readout.params()})

    def bump(self) -> None:
        self.lstm.version += 1
        self.readout.version += 1

    def load_state(self, state: dict) -> None:
        for name, p in self.params().items():
            p[...] = state[name]
        self.bump()


def feature_rows(fz: np.ndarray, yz: np.ndarray, rows, lag: int) -> np.ndarray:
    """Feature vectors for time indices ``rows`` (each must be >= lag)."""
    rows = np.asarray(rows)
    shape = rows.shape
    rows = rows.ravel()
    fk = rows[:, None] - np.arange(lag + 1)
    yk = rows[:, None] - np.arange(1, lag + 1)
    feats = np.concatenate([fz[fk].reshape(len(rows), -1), yz[yk].reshape(len(rows), -1)], axis=1)
    return feats.reshape(shape + (feats.shape[1],))


def build_features(forcing, latents, lag: int, forcing_norm: Normalizer | None = None,
                   latent_norm: Normalizer | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Aligned ``(inputs[n-lag, width], targets[n-lag, n_latent])`` for steps ``t = lag..n-1``."""
    f = np.asarray(getattr(forcing, "values", forcing), dtype=np.float64)
    y = np.asarray(getattr(latents, "values", latents), dtype=np.float64)
    if f.shape[0] != y.shape[0]:
        raise DimensionMismatch("forcing and latent series must have equal length")
    if f.shape[0] <= lag:
        raise SeriesTooShort(f"need more than lag={lag} samples, got {f.shape[0]}")
    fz = forcing_norm.standardize(f) if forcing_norm else f
    yz = latent_norm.standardize(y) if latent_norm else y
    rows = np.arange(lag, f.shape[0])
    return feature_rows(fz, yz, rows, lag), yz[lag:]


def init_regressor(config: RegressorConfig, forcing_norm: Normalizer, latent_norm: Normalizer,
                   rng=None) -> LatentRegressor:
    """Glorot LSTM (forget bias +1) and a zero readout, so initial predictions equal the latent mean."""
    config.validate()
    rng = np.random.default_rng(rng)
    lstm = LstmCellParams.init(config.input_width, config.hidden, rng)
    readout = DenseLayer(np.zeros((config.n_latent, config.hidden)), np.zeros(config.n_latent), "linear")
    return LatentRegressor(lstm, readout, config, forcing_norm, latent_norm)


def _one_step_loss(model, fz, yz, rows, warm_rows):
    lag = model.config.lag
    h0 = c0 = None
    if len(warm_rows):
        hs, cache = lstm_forward(model.lstm, feature_rows(fz, yz, warm_rows, lag))
        h0, c0 = hs[-1], cache.cs[-1]
    hs, _ = lstm_forward(model.lstm, feature_rows(fz, yz, rows, lag), h0, c0)
    pred = dense_forward(model.readout, hs[:, 0])[0]
    return float(np.mean((pred - yz[rows]) ** 2))


def train_teacher_forced(forcing, latents, config: RegressorConfig | None = None,
                         train_cfg: RegressorTrainConfig | None = None) -> LatentRegressor:
    """Fit the regressor on the leading ``train_fraction`` of the histories.

    The fitted span's last ``val_fraction`` of feature rows is held out for early stopping.
    The rest is cut into ``streams`` contiguous pieces processed in parallel by truncated
    BPTT over ``window`` steps; hidden state carries across windows and resets each epoch.
    """
    f = np.asarray(getattr(forcing, "values", forcing), dtype=np.float64)
    y = np.asarray(getattr(latents, "values", latents), dtype=np.float64)
    config = config or RegressorConfig(n_forcing=f.shape[1], n_latent=y.shape[1])
    train_cfg = train_cfg or RegressorTrainConfig()
    config.validate()
    if f.shape[0] != y.shape[0]:
        raise DimensionMismatch("forcing and latent series must have equal length")
    if f.shape[1] != config.n_forcing or y.shape[1] != config.n_latent:
        raise DimensionMismatch("channel counts disagree with the regressor config")
    lag = config.lag
    n_fit = int(config.train_fraction * f.shape[0])
    rows = np.arange(lag, n_fit)
    n_val = int(round(train_cfg.val_fraction * len(rows)))
    train_rows, val_rows = rows[:len(rows) - n_val], rows[len(rows) - n_val:]
    streams = max(1, min(train_cfg.streams, len(train_rows) // max(train_cfg.window, 1)))
    seg = len(train_rows) // streams
    if seg < 1:
        raise SeriesTooShort("not enough samples to train the regressor")

    forcing_norm = Normalizer.fit(f[:n_fit])
    latent_norm = Normalizer.fit(y[:n_fit])
    fz, yz = forcing_norm.standardize(f), latent_norm.standardize(y)
    model = init_regressor(config, forcing_norm, latent_norm, train_cfg.seed)
    params = model.params()
    opt = AdamState(lr=train_cfg.lr)
    starts = train_rows[0] + seg * np.arange(streams)
    warm_val = rows[max(0, len(rows) - n_val - train_cfg.window):len(rows) - n_val] if n_val else rows[:0]
    best, best_state, since_best = np.inf, None, 0
    H = config.hidden
    for epoch in range(train_cfg.epochs):
        h = np.zeros((streams, H))
        c = np.zeros((streams, H))
        total, count = 0.0, 0
        for w in range(0, seg, train_cfg.window):
            offs = np.arange(w, min(w + train_cfg.window, seg))
            idx = (starts[None, :] + offs[:, None])  # [T, B]
            xs = feature_rows(fz, yz, idx, lag)
            res = lstm_bptt(model.lstm, xs, h, c, yz[idx], model.readout)
            if not np.isfinite(res.loss):
                raise NonFiniteLoss(step=epoch)
            adam_update(opt, params, flatten(res.grads))
            model.bump()
            h, c = res.h_last, res.c_last
            total += res.loss * idx.size
            count += idx.size
        train_loss = total / count
        val_loss = _one_step_loss(model, fz, yz, val_rows, warm_val) if n_val else train_loss
        if not np.isfinite(val_loss):
            raise NonFiniteLoss(step=epoch)
        model.history.append({"epoch": epoch, "train": train_loss, "val": val_loss})
        logger.info("lstm epoch %d train %.4e val %.4e", epoch, train_loss, val_loss)
        if val_loss < best:
            best, since_best, model.best_epoch = val_loss, 0, epoch
            best_state = {k: v.copy() for k, v in params.items()}
        else:
            since_best += 1
            if since_best >= train_cfg.patience:
                break
    if best_state is not None:
        model.load_state(best_state)
    return model


@dataclass(frozen=True)
class FreeRunResult:
    """Latent predictions in physical latent units; rows after a failure are NaN."""

    values: np.ndarray
    failed_step: int | None = None

    @property
    def finite(self) -> bool:
        return self.failed_step is None


def _warm_state(model, fz, yz, n_warm):
    lag = model.config.lag
    H = model.config.hidden
    if n_warm <= lag:
        return np.zeros((1, H)), np.zeros((1, H))
    hs, cache = lstm_forward(model.lstm, feature_rows(fz, yz, np.arange(lag, n_warm), lag))
    return hs[-1], cache.cs[-1]


def free_run_predict(model: LatentRegressor, forcing_future, warmup_forcing, warmup_latents,
                     horizon: int | None = None, strict: bool = False) -> FreeRunResult:
    """Simulation-mode forecast of ``horizon`` latent steps.

    The warmup (true forcing and latents, at least ``lag`` samples) seeds the lag window; any
    warmup samples beyond the first ``lag`` are run teacher-forced to set the LSTM state.
    Each predicted latent is then fed back into the lag window. A non-finite prediction stops
    the run: with ``strict`` it raises ``NonFinitePrediction``, otherwise the partial result
    is returned with ``failed_step`` set.
    """
    cfg = model.config
    ff = np.asarray(getattr(forcing_future, "values", forcing_future), dtype=np.float64)
    wf = np.asarray(getattr(warmup_forcing, "values", warmup_forcing), dtype=np.float64)
    wy = np.asarray(getattr(warmup_latents, "values", warmup_latents), dtype=np.float64)
    horizon = cfg.horizon if horizon is None else int(horizon)
    if wf.shape[0] != wy.shape[0]:
        raise DimensionMismatch("warmup forcing and latents differ in length")
    if wf.shape[0] < cfg.lag:
        raise SeriesTooShort(f"warmup needs at least lag={cfg.lag} samples")
    if ff.shape[0] < horizon:
        raise SeriesTooShort(f"future forcing has {ff.shape[0]} steps, horizon is {horizon}")
    if ff.ndim != 2 or ff.shape[1] != cfg.n_forcing or wf.shape[1] != cfg.n_forcing or wy.shape[1] != cfg.n_latent:
        raise DimensionMismatch("channel counts disagree with the regressor config")
    n_warm = wf.shape[0]
    fz = model.forcing_norm.standardize(np.vstack([wf, ff[:horizon]]))
    yz = np.vstack([model.latent_norm.standardize(wy), np.full((horizon, cfg.n_latent), np.nan)])
    h, c = _warm_state(model, fz, yz, n_warm)
    failed = None
    for k in range(horizon):
        t = n_warm + k
        x = feature_rows(fz, yz, np.array([t]), cfg.lag)
        h, c, _ = lstm_step(model.lstm, x, h, c)
        pred = dense_forward(model.readout, h)[0][0]
        if not np.all(np.isfinite(pred)):
            failed = k
            if strict:
                partial = model.latent_norm.destandardize(yz[n_warm:n_warm + k])
                raise NonFinitePrediction(step=k, partial=partial)
            break
        yz[t] = pred
    return FreeRunResult(model.latent_norm.destandardize(yz[n_warm:]), failed)


def predict_teacher_forced(model: LatentRegressor, forcing, latents, start: int, stop: int,
                           warm: int | None = None) -> np.ndarray:
    """One-step-ahead predictions for steps ``[start, stop)`` given the true history.

    The LSTM state is warmed over up to ``warm`` (default ``lag``) preceding steps.
    """
    cfg = model.config
    f = np.asarray(getattr(forcing, "values", forcing), dtype=np.float64)
    y = np.asarray(getattr(latents, "values", latents), dtype=np.float64)
    if start < cfg.lag:
        raise SeriesTooShort("start must be >= lag")
    warm = cfg.lag if warm is None else warm
    fz, yz = model.forcing_norm.standardize(f), model.latent_norm.standardize(y)
    warm_rows = np.arange(max(cfg.lag, start - warm), start)
    h0 = c0 = None
    if len(warm_rows):
        hs, cache = lstm_forward(model.lstm, feature_rows(fz, yz, warm_rows, cfg.lag))
        h0, c0 = hs[-1], cache.cs[-1]
    hs, _ = lstm_forward(model.lstm, feature_rows(fz, yz, np.arange(start, stop), cfg.lag), h0, c0)
    return model.latent_norm.destandardize(dense_forward(model.readout, hs[:, 0])[0])
