"""Fully connected autoencoder for channel magnitudes, numpy forward/backward.

Encoder ``L -> 150 -> 80 -> A`` and mirrored decoder, rectifier on hidden
layers, linear latent and output.  Trained with mini-batch SGD + momentum on
the mean squared reconstruction error.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, msg: str = "training diverged"):
        super().__init__(f"{msg} at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class AeConfig:
    input_dim: int = 128
    hidden_dims: tuple[int, ...] = (150, 80)
    latent_dim: int = 8
    activation: str = "relu"
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 50
    batch_size: int = 16
    rng_seed: int = 0
    train_fraction: float = 0.8
    normalize_input: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim <= 0 or self.latent_dim <= 0 or any(h <= 0 for h in self.hidden_dims):
            raise ValueError("layer sizes must be positive")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.hidden_dims and self.latent_dim >= self.hidden_dims[-1]:
            raise ValueError("latent_dim must be smaller than the last hidden layer")
        if self.activation != "relu":
            raise ValueError("only the rectifier activation is supported")

    @property
    def layer_sizes(self) -> list[int]:
        enc = [self.input_dim, *self.hidden_dims, self.latent_dim]
        return enc + enc[-2::-1]

    def to_dict(self):
        d = dict(self.__dict__)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


@dataclass
class AeModel:
    config: AeConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    history: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def n_encoder_layers(self) -> int:
        return len(self.config.hidden_dims) + 1

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "AeModel":
        return AeModel(self.config, [w.copy() for w in self.weights],
                       [b.copy() for b in self.biases], list(self.history))


def init(config: AeConfig) -> AeModel:
    rng = np.random.default_rng(config.rng_seed)
    sizes = config.layer_sizes
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-lim, lim, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return AeModel(config, weights, biases)


def prepare(model: AeModel, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, float))
    if x.shape[1] != model.config.input_dim:
        raise ValueError(f"expected input length {model.config.input_dim}, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    if model.config.normalize_input:
        peak = x.max(axis=1, keepdims=True)
        x = x / np.where(peak > 0, peak, 1.0)
    return x


def _forward(model: AeModel, x: np.ndarray):
    """Pre-activations and activations of every layer for a prepared batch."""
    acts, pres = [x], []
    n = len(model.weights)
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ W + b
        pres.append(z)
        linear = i == model.n_encoder_layers - 1 or i == n - 1
        acts.append(z if linear else np.maximum(z, 0.0))
    return pres, acts


def forward(model: AeModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Reconstruction and latent code; 1-D input gives 1-D outputs."""
    single = np.ndim(x) == 1
    _, acts = _forward(model, prepare(model, x))
    recon, latent = acts[-1], acts[model.n_encoder_layers]
    return (recon[0], latent[0]) if single else (recon, latent)


def encode(model: AeModel, x) -> np.ndarray:
    return forward(model, x)[1]


def loss_and_gradients(model: AeModel, batch) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean squared error over batch and samples, with gradients for weights and biases."""
    x = prepare(model, batch)
    if len(x) == 0:
        raise ValueError("empty batch")
    pres, acts = _forward(model, x)
    diff = acts[-1] - x
    loss = float(np.mean(diff ** 2))
    delta = 2.0 * diff / diff.size
    n = len(model.weights)
    gw, gb = [None] * n, [None] * n
    for i in range(n - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ model.weights[i].T
            if i - 1 != model.n_encoder_layers - 1:
                delta = delta * (pres[i - 1] > 0)
    return loss, gw, gb


def split(n: int, config: AeConfig) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(config.rng_seed).permutation(n)
    n_train = int(round(config.train_fraction * n))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _mse(model, x) -> float:
    return float(np.mean((forward(model, x)[0] - prepare(model, x)) ** 2))


def train(model: AeModel, data, config: AeConfig | None = None) -> AeModel:
    """Mini-batch SGD with momentum; returns the parameters with the best validation loss."""
    config = config or model.config
    data = np.asarray(data, float)
    if len(data) < 10:
        raise ValueError("need at least 10 training vectors")
    tr, va = split(len(data), config)
    x_tr, x_va = data[tr], data[va]
    model = model.copy()
    rng = np.random.default_rng(config.rng_seed + 1)
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    best = model.copy()
    best_val = _mse(model, x_va)
    if not model.history:
        model.history.append((0, _mse(model, x_tr), best_val))
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(len(x_tr))
        for start in range(0, len(perm), config.batch_size):
            _, gw, gb = loss_and_gradients(model, x_tr[perm[start:start + config.batch_size]])
            for i in range(len(gw)):
                vel_w[i] = config.momentum * vel_w[i] - config.learning_rate * gw[i]
                vel_b[i] = config.momentum * vel_b[i] - config.learning_rate * gb[i]
                model.weights[i] += vel_w[i]
                model.biases[i] += vel_b[i]
        tr_loss, va_loss = _mse(model, x_tr), _mse(model, x_va)
        if not (np.isfinite(tr_loss) and np.isfinite(va_loss)):
            raise TrainingError(epoch)
        model.history.append((epoch, tr_loss, va_loss))
        logger.debug("epoch %d train %.5f val %.5f", epoch, tr_loss, va_loss)
        if va_loss < best_val:
            best_val = va_loss
            best = model.copy()
    best.history = list(model.history)
    return best


# --- serialisation ----------------------------------------------------------

def to_dict(model: AeModel) -> dict:
    return {
        "config": model.config.to_dict(),
        "layer_sizes": model.config.layer_sizes,
        "dtype": "<f8",
        "order": "C",
        "weights": [w.ravel().tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }


def from_dict(d: dict) -> AeModel:
    cfg = AeConfig(**d["config"])
    sizes = cfg.layer_sizes
    weights = [np.asarray(w, "<f8").reshape(n_in, n_out)
               for w, n_in, n_out in zip(d["weights"], sizes[:-1], sizes[1:])]
    biases = [np.asarray(b, "<f8") for b in d["biases"]]
    return AeModel(cfg, weights, biases)


def save(model: AeModel, path, history_path=None):
    with open(path, "w") as fh:
        json.dump(to_dict(model), fh)
    if history_path is not None:
        with open(history_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            w.writerows(model.history)


def load(path) -> AeModel:
    with open(path) as fh:
        return from_dict(json.load(fh))
