"""Bottleneck autoencoder used as a learned dimensionality reducer.

Six dense ELU layers ``in -> 512 -> 512 -> bottleneck -> 512 -> 512 -> in``
with 10 % dropout after each 512-unit layer. The output layer is linear so
z-scored targets below -1 stay reachable.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import InputError, ShapeError
from ..featmat import FeatureMatrix, as_array
from ..nn_core import AdamState, Dense, Dropout, adam_update, load_checkpoint, mse_loss, save_checkpoint


@dataclass
class AeConfig:
    hidden: int = 512
    bottleneck: int = 32
    dropout: float = 0.1
    lr: float = 1e-4
    batch_size: int = 1024
    patience: int = 300
    max_epochs: int = 2000
    val_fraction: float = 0.2


class AeModel:
    def __init__(self, layers: list[Dense], config: AeConfig):
        self.layers = layers
        self.config = config
        # dropout follows the four wide layers only
        self.drops = [Dropout(config.dropout if i in (0, 1, 3, 4) else 0.0) for i in range(len(layers))]

    @classmethod
    def init(cls, in_dim: int, config: AeConfig, rng: np.random.Generator) -> "AeModel":
        h, b = config.hidden, config.bottleneck
        dims = [in_dim, h, h, b, h, h, in_dim]
        acts = ["elu"] * 5 + ["identity"]
        layers = [Dense.init(i, o, a, rng) for i, o, a in zip(dims[:-1], dims[1:], acts)]
        return cls(layers, config)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads()]

    def _run(self, x, layers, rng=None, train=False):
        for layer, drop in layers:
            x = drop.forward(layer.forward(x), rng, train)
        return x

    def encode(self, x: np.ndarray) -> np.ndarray:
        return self._run(x, list(zip(self.layers[:3], self.drops[:3])))

    def reconstruct(self, x: np.ndarray, rng=None, train: bool = False) -> np.ndarray:
        return self._run(x, list(zip(self.layers, self.drops)), rng, train)

    def train_step(self, x: np.ndarray, rng, state: AdamState) -> float:
        loss, g = mse_loss(self.reconstruct(x, rng, train=True), x)
        for layer, drop in zip(reversed(self.layers), reversed(self.drops)):
            g = layer.backward(drop.backward(g))
        adam_update(state, self.params(), self.grads())
        return loss

    def state_dict(self):
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"layer.{i}.weights"] = layer.weights
            out[f"layer.{i}.bias"] = layer.bias
        return out

    def save(self, path) -> None:
        save_checkpoint(path, self.state_dict(), {"kind": "autoencoder", "in_dim": self.in_dim, **asdict(self.config)})

    @classmethod
    def load(cls, path) -> "AeModel":
        state, arch = load_checkpoint(path)
        if arch.get("kind") != "autoencoder":
            raise InputError(f"{path} does not hold an autoencoder")
        config = AeConfig(**{k: v for k, v in arch.items() if k not in ("kind", "in_dim")})
        acts = ["elu"] * 5 + ["identity"]
        layers = [Dense(state[f"layer.{i}.weights"], state[f"layer.{i}.bias"], acts[i]) for i in range(6)]
        return cls(layers, config)


def ae_train(matrix, seed: int = 0, config: AeConfig | None = None) -> tuple[AeModel, dict]:
    """Fit on an 80:20 row split with MSE; keep the best-validation weights.

    Stops after ``patience`` epochs without validation improvement or at
    ``max_epochs``.
    """
    config = config or AeConfig()
    x = as_array(matrix)
    N = x.shape[0]
    if N < 10:
        raise InputError(f"autoencoder training needs at least 10 rows, got {N}")
    rng = np.random.default_rng(seed)
    model = AeModel.init(x.shape[1], config, rng)
    order = rng.permutation(N)
    n_val = max(1, int(round(config.val_fraction * N)))
    val, train = x[order[:n_val]], x[order[n_val:]]
    state = AdamState.for_params(model.params(), lr=config.lr)
    history = {"train_mse": [], "val_mse": []}
    best, best_state, bad = np.inf, None, 0
    for epoch in range(config.max_epochs):
        perm = rng.permutation(train.shape[0])
        losses = [model.train_step(train[perm[s : s + config.batch_size]], rng, state)
                  for s in range(0, len(perm), config.batch_size)]
        v, _ = mse_loss(model.reconstruct(val), val)
        history["train_mse"].append(float(np.mean(losses)))
        history["val_mse"].append(v)
        if v < best:
            best, best_state, bad = v, copy.deepcopy(model.state_dict()), 0
            history["best_epoch"] = epoch
        else:
            bad += 1
            if bad >= config.patience:
                break
    for i, layer in enumerate(model.layers):
        layer.weights[...] = best_state[f"layer.{i}.weights"]
        layer.bias[...] = best_state[f"layer.{i}.bias"]
    history["best_val_mse"] = best
    history["val_rows"] = order[:n_val].tolist()
    return model, history


def ae_encode(model: AeModel, matrix):
    x = as_array(matrix)
    if x.ndim != 2 or x.shape[1] != model.in_dim:
        raise ShapeError(f"autoencoder expects {model.in_dim} columns, got {x.shape}")
    out = model.encode(x)
    return matrix.with_values(out) if isinstance(matrix, FeatureMatrix) else out
