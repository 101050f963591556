"""Snapshot autoencoder: extraction (encoder) and nonlinear superposition (decoder) of
NNM-like latent coordinates from displacement histories."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidParams, NonFiniteLoss, ZeroVariance
from .nn.activations import ACTIVATIONS
from .nn.dense import DenseLayer, dense_backward, dense_forward
from .nn.optim import AdamState, adam_update
from .series import MultiChannelSeries
from .spectral import correlation_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AeArchitecture:
    """Layer widths/activations. The decoder must list the encoder's hidden layers in reverse."""

    input_dim: int = 20
    encoder: tuple[tuple[int, str], ...] = ((20, "linear"), (20, "tanh"))
    bottleneck: int = 10
    decoder: tuple[tuple[int, str], ...] = ((20, "tanh"), (20, "linear"))
    bottleneck_activation: str = "linear"
    output_activation: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "encoder", tuple((int(n), str(a)) for n, a in self.encoder))
        object.__setattr__(self, "decoder", tuple((int(n), str(a)) for n, a in self.decoder))

    def validate(self) -> None:
        if self.input_dim < 1 or self.bottleneck < 1:
            raise InvalidParams("dimensions must be positive")
        if self.bottleneck > self.input_dim:
            raise InvalidParams("bottleneck cannot exceed input_dim")
        if tuple(reversed(self.encoder)) != self.decoder:
            raise InvalidParams("decoder must mirror the encoder in reverse")
        for _, act in self.encoder + self.decoder + ((0, self.bottleneck_activation), (0, self.output_activation)):
            if act not in ACTIVATIONS:
                raise InvalidParams(f"unknown activation {act!r}")

    def layer_specs(self) -> tuple[list, list]:
        """``(n_in, n_out, activation)`` triples for encoder and decoder stacks."""
        widths = [self.input_dim] + [n for n, _ in self.encoder]
        enc = [(widths[k], widths[k + 1], self.encoder[k][1]) for k in range(len(self.encoder))]
        enc.append((widths[-1], self.bottleneck, self.bottleneck_activation))
        dwidths = [self.bottleneck] + [n for n, _ in self.decoder]
        dec = [(dwidths[k], dwidths[k + 1], self.decoder[k][1]) for k in range(len(self.decoder))]
        dec.append((dwidths[-1], self.input_dim, self.output_activation))
        return enc, dec

    @classmethod
    def standard(cls, input_dim: int = 20, bottleneck: int = 10) -> "AeArchitecture":
        return cls(input_dim, ((20, "linear"), (20, "tanh")), bottleneck, ((20, "tanh"), (20, "linear")))


@dataclass(frozen=True)
class AeTrainConfig:
    epochs: int = 200
    batch_size: int = 256
    lr: float = 1e-3
    patience: int = 20
    seed: int = 1


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "Normalizer":
        values = np.asarray(values, dtype=np.float64)
        std = values.std(axis=0)
        for ch in np.flatnonzero(~(std > 0)):
            raise ZeroVariance(int(ch))
        return cls(values.mean(axis=0), std)

    def standardize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def destandardize(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


@dataclass(eq=False)
class AutoencoderModel:
    architecture: AeArchitecture
    encoder: list[DenseLayer]
    decoder: list[DenseLayer]
    norm: Normalizer
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1

    @classmethod
    def init(cls, arch: AeArchitecture, norm: Normalizer, rng=None) -> "AutoencoderModel":
        arch.validate()
        rng = np.random.default_rng(rng)
        enc_specs, dec_specs = arch.layer_specs()
        encoder = [DenseLayer.init(i, o, a, rng) for i, o, a in enc_specs]
        decoder = [DenseLayer.init(i, o, a, rng) for i, o, a in dec_specs]
        return cls(arch, encoder, decoder, norm)

    @property
    def layers(self) -> list[DenseLayer]:
        return self.encoder + self.decoder

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, stack in (("encoder", self.encoder), ("decoder", self.decoder)):
            for k, layer in enumerate(stack):
                out[f"{prefix}.{k}.weights"] = layer.weights
                out[f"{prefix}.{k}.bias"] = layer.bias
        return out

    def bump(self) -> None:
        for layer in self.layers:
            layer.version += 1

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.params().items():
            p[...] = state[name]
        self.bump()

    def _run(self, stack, z):
        for layer in stack:
            z = dense_forward(layer, z)[0]
        return z

    def encode_array(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.architecture.input_dim:
            raise DimensionMismatch(f"expected {self.architecture.input_dim} channels, got {x.shape[-1]}")
        return self._run(self.encoder, self.norm.standardize(x))

    def decode_array(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape[-1] != self.architecture.bottleneck:
            raise DimensionMismatch(f"expected {self.architecture.bottleneck} latent channels, got {y.shape[-1]}")
        return self.norm.destandardize(self._run(self.decoder, y))

    def reconstruct_standardized(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Standardized input and its reconstruction, the pair the training loss compares."""
        z = self.norm.standardize(x)
        return z, self._run(self.decoder, self._run(self.encoder, z))

    @property
    def train_loss(self) -> float:
        return self.history[self.best_epoch]["train"] if self.history else float("nan")

    @property
    def test_loss(self) -> float:
        return self.history[self.best_epoch]["test"] if self.history else float("nan")


def encode(model: AutoencoderModel, series: MultiChannelSeries) -> MultiChannelSeries:
    labels = tuple(f"y{k + 1}" for k in range(model.architecture.bottleneck))
    return MultiChannelSeries(series.dt, model.encode_array(series.values), labels, series.t0)


def decode(model: AutoencoderModel, latent: MultiChannelSeries, labels=None) -> MultiChannelSeries:
    labels = labels or tuple(f"x{k + 1}" for k in range(model.architecture.input_dim))
    return MultiChannelSeries(latent.dt, model.decode_array(latent.values), labels, latent.t0)


def ae_loss_and_grads(model: AutoencoderModel, z: np.ndarray) -> tuple[float, dict]:
    """Reconstruction MSE on standardized samples ``z`` and its gradient for every layer."""
    caches = []
    out = z
    for layer in model.layers:
        out, cache = dense_forward(layer, out)
        caches.append(cache)
    err = out - z
    loss = float(np.mean(err * err))
    grad = 2.0 * err / err.size
    grads = {}
    names = [f"encoder.{k}" for k in range(len(model.encoder))] + [f"decoder.{k}" for k in range(len(model.decoder))]
    for idx in range(len(model.layers) - 1, -1, -1):
        g, grad = dense_backward(model.layers[idx], caches[idx], grad, need_input_grad=idx > 0)
        grads[f"{names[idx]}.weights"] = g["weights"]
        grads[f"{names[idx]}.bias"] = g["bias"]
    return loss, grads


def _mse_std(model, z):
    return float(np.mean((model._run(model.decoder, model._run(model.encoder, z)) - z) ** 2))


def ae_train(data: MultiChannelSeries, arch: AeArchitecture | None = None, split: float = 0.5,
             cfg: AeTrainConfig | None = None) -> AutoencoderModel:
    """Train on the leading ``split`` fraction of samples, early-stopping on the remainder.

    Channels are standardized with training-split statistics. Samples are individual time
    steps, shuffled each epoch. The returned model holds the parameters of the epoch with the
    lowest test loss; ``history`` keeps every epoch's full-split train and test MSE.
    """
    arch = arch or AeArchitecture.standard(data.channels)
    cfg = cfg or AeTrainConfig()
    arch.validate()
    if data.channels != arch.input_dim:
        raise DimensionMismatch(f"data has {data.channels} channels, architecture expects {arch.input_dim}")
    if not 0 < split < 1:
        raise InvalidParams("split must lie in (0, 1)")
    n_train = int(round(split * data.n_steps))
    if n_train < 2 or n_train >= data.n_steps:
        raise InvalidParams("split leaves an empty train or test set")
    x = data.values
    norm = Normalizer.fit(x[:n_train])
    z_train = norm.standardize(x[:n_train])
    z_test = norm.standardize(x[n_train:])
    rng = np.random.default_rng(cfg.seed)
    model = AutoencoderModel.init(arch, norm, rng)
    params = model.params()
    opt = AdamState(lr=cfg.lr)
    best, best_state, since_best = np.inf, None, 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n_train)
        for start in range(0, n_train, cfg.batch_size):
            batch = z_train[perm[start:start + cfg.batch_size]]
            loss, grads = ae_loss_and_grads(model, batch)
            if not np.isfinite(loss):
                raise NonFiniteLoss(step=epoch)
            adam_update(opt, params, grads)
            model.bump()
        train_loss, test_loss = _mse_std(model, z_train), _mse_std(model, z_test)
        if not (np.isfinite(train_loss) and np.isfinite(test_loss)):
            raise NonFiniteLoss(step=epoch)
        model.history.append({"epoch": epoch, "train": train_loss, "test": test_loss})
        logger.debug("ae epoch %d train %.3e test %.3e", epoch, train_loss, test_loss)
        if test_loss < best:
            best, since_best = test_loss, 0
            best_state = {k: v.copy() for k, v in params.items()}
            model.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    if best_state is not None:
        model.load_state(best_state)
    return model


@dataclass(frozen=True)
class ReconstructionReport:
    nmse: np.ndarray
    nmse_mean: float
    mse: np.ndarray
    mse_mean: float
    latent_correlation: np.ndarray


def reconstruction_report(model: AutoencoderModel, data: MultiChannelSeries) -> ReconstructionReport:
    """Per-channel reconstruction error (raw MSE and variance-normalised NMSE) and latent correlations."""
    from .spectral import mse, nmse

    latent = model.encode_array(data.values)
    recon = model.decode_array(latent)
    per_mse, agg_mse = mse(data.values, recon)
    per_nmse, agg_nmse = nmse(data.values, recon)
    return ReconstructionReport(per_nmse, agg_nmse, per_mse, agg_mse, correlation_matrix(latent))
