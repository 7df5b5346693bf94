"""Small float64 neural-network engine with hand-written gradients.

Only what the CPC and autoencoder models need: dense layers with ELU,
inverted dropout, a GRU layer with backpropagation through time, Adam,
MSE, a finite-difference gradient checker, and a flat binary checkpoint
format. Layers cache their last forward inputs; call ``backward`` right
after the matching ``forward``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import InputError, NumericError, ShapeError

ACTIVATIONS = ("elu", "identity")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split to avoid overflow in exp for large |x|
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Dense:
    """Fully connected layer ``act(x @ W + b)`` over the last axis."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray, activation: str = "elu"):
        weights = np.asarray(weights, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weights.ndim != 2 or bias.shape != (weights.shape[1],):
            raise ShapeError(f"inconsistent dense parameters {weights.shape} / {bias.shape}")
        if activation not in ACTIVATIONS:
            raise InputError(f"unknown activation {activation!r}")
        self.weights = weights
        self.bias = bias
        self.activation = activation
        self.grad_weights = np.zeros_like(weights)
        self.grad_bias = np.zeros_like(bias)
        self._x = None
        self._pre = None

    @classmethod
    def init(cls, in_dim: int, out_dim: int, activation: str, rng: np.random.Generator) -> "Dense":
        return cls(glorot_uniform(rng, in_dim, out_dim), np.zeros(out_dim), activation)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"dense layer expects {self.in_dim} input features, got {x.shape[-1]}")
        pre = x @ self.weights + self.bias
        self._x, self._pre = x, pre
        return elu(pre) if self.activation == "elu" else pre

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        g = grad_out
        if self.activation == "elu":
            # d/dx elu = 1 for x > 0, exp(x) otherwise
            g = g * np.where(self._pre > 0, 1.0, np.exp(np.minimum(self._pre, 0.0)))
        x2 = self._x.reshape(-1, self.in_dim)
        g2 = g.reshape(-1, self.out_dim)
        self.grad_weights = x2.T @ g2
        self.grad_bias = g2.sum(axis=0)
        return g @ self.weights.T

    def params(self) -> list[np.ndarray]:
        return [self.weights, self.bias]

    def grads(self) -> list[np.ndarray]:
        return [self.grad_weights, self.grad_bias]


def dense_forward(layer: Dense, x: np.ndarray) -> np.ndarray:
    return layer.forward(x)


class Dropout:
    """Inverted dropout: survivors are scaled by ``1/(1-rate)`` at train time."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise InputError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x: np.ndarray, rng: np.random.Generator | None = None, train: bool = False) -> np.ndarray:
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise InputError("training-mode dropout needs an rng")
        self._mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out if self._mask is None else grad_out * self._mask


class GRU:
    """Single-layer GRU (Cho et al. formulation).

    Gate blocks are stacked along the last axis in the order
    update, reset, candidate::

        u = sigmoid(x Wx_u + h Wh_u + b_u)
        r = sigmoid(x Wx_r + h Wh_r + b_r)
        n = tanh(x Wx_n + (r * h) Wh_n + b_n)
        h' = u * h + (1 - u) * n
    """

    def __init__(self, w_input: np.ndarray, w_hidden: np.ndarray, bias: np.ndarray):
        w_input = np.asarray(w_input, dtype=np.float64)
        w_hidden = np.asarray(w_hidden, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        hidden = w_hidden.shape[0]
        if w_hidden.shape != (hidden, 3 * hidden) or w_input.shape[1] != 3 * hidden or bias.shape != (3 * hidden,):
            raise ShapeError(
                f"inconsistent GRU parameters {w_input.shape} / {w_hidden.shape} / {bias.shape}"
            )
        self.w_input = w_input
        self.w_hidden = w_hidden
        self.bias = bias
        self.grad_w_input = np.zeros_like(w_input)
        self.grad_w_hidden = np.zeros_like(w_hidden)
        self.grad_bias = np.zeros_like(bias)
        self._cache = None

    @classmethod
    def init(cls, in_dim: int, hidden: int, rng: np.random.Generator) -> "GRU":
        w_input = np.concatenate([glorot_uniform(rng, in_dim, hidden) for _ in range(3)], axis=1)
        w_hidden = np.concatenate([glorot_uniform(rng, hidden, hidden) for _ in range(3)], axis=1)
        return cls(w_input, w_hidden, np.zeros(3 * hidden))

    @property
    def in_dim(self) -> int:
        return self.w_input.shape[0]

    @property
    def hidden(self) -> int:
        return self.w_hidden.shape[0]

    def _gates(self, xw: np.ndarray, h: np.ndarray):
        H = self.hidden
        hw = h @ self.w_hidden[:, : 2 * H]
        u = sigmoid(xw[..., :H] + hw[..., :H])
        r = sigmoid(xw[..., H : 2 * H] + hw[..., H:])
        n = np.tanh(xw[..., 2 * H :] + (r * h) @ self.w_hidden[:, 2 * H :])
        return u, r, n

    def step(self, x: np.ndarray, h: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        h = np.asarray(h, dtype=np.float64)
        if x.shape[-1] != self.in_dim or h.shape[-1] != self.hidden:
            raise ShapeError(
                f"GRU step expects input {self.in_dim} / hidden {self.hidden}, got {x.shape[-1]} / {h.shape[-1]}"
            )
        u, r, n = self._gates(x @ self.w_input + self.bias, h)
        return u * h + (1.0 - u) * n

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Scan a (B, T, in) sequence from a zero hidden state; returns (B, T, hidden)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[-1] != self.in_dim:
            raise ShapeError(f"GRU expects (B, T, {self.in_dim}) input, got {x.shape}")
        B, T, _ = x.shape
        H = self.hidden
        xw = x @ self.w_input + self.bias
        hs = np.empty((B, T, H))
        us, rs, ns = np.empty_like(hs), np.empty_like(hs), np.empty_like(hs)
        h = np.zeros((B, H))
        for t in range(T):
            u, r, n = self._gates(xw[:, t], h)
            h = u * h + (1.0 - u) * n
            hs[:, t], us[:, t], rs[:, t], ns[:, t] = h, u, r, n
        self._cache = (x, hs, us, rs, ns)
        return hs

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x, hs, us, rs, ns = self._cache
        B, T, H = hs.shape
        wh_ur = self.w_hidden[:, : 2 * H]
        wh_n = self.w_hidden[:, 2 * H :]
        dxw = np.empty((B, T, 3 * H))
        dwh = np.zeros_like(self.w_hidden)
        dh_next = np.zeros((B, H))
        zeros = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            h_prev = hs[:, t - 1] if t > 0 else zeros
            u, r, n = us[:, t], rs[:, t], ns[:, t]
            dh = grad_out[:, t] + dh_next
            dn_pre = dh * (1.0 - u) * (1.0 - n * n)
            du_pre = dh * (h_prev - n) * u * (1.0 - u)
            drh = dn_pre @ wh_n.T
            dr_pre = drh * h_prev * r * (1.0 - r)
            d_ur = np.concatenate([du_pre, dr_pre], axis=1)
            dwh[:, : 2 * H] += h_prev.T @ d_ur
            dwh[:, 2 * H :] += (r * h_prev).T @ dn_pre
            dh_next = dh * u + drh * r + d_ur @ wh_ur.T
            dxw[:, t, :H] = du_pre
            dxw[:, t, H : 2 * H] = dr_pre
            dxw[:, t, 2 * H :] = dn_pre
        flat = dxw.reshape(-1, 3 * H)
        self.grad_w_input = x.reshape(-1, self.in_dim).T @ flat
        self.grad_w_hidden = dwh
        self.grad_bias = flat.sum(axis=0)
        return dxw @ self.w_input.T

    def params(self) -> list[np.ndarray]:
        return [self.w_input, self.w_hidden, self.bias]

    def grads(self) -> list[np.ndarray]:
        return [self.grad_w_input, self.grad_w_hidden, self.grad_bias]


def gru_step(cell: GRU, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    return cell.step(x, h)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all entries and its gradient w.r.t. ``pred``."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


@dataclass
class AdamState:
    """Per-parameter moment accumulators for Adam."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float = 1e-4, **kw) -> "AdamState":
        return cls(lr=lr, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


def adam_update(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> Sequence[np.ndarray]:
    """Apply one bias-corrected Adam step to ``params`` in place and return them."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("parameter, gradient and state lists differ in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"parameter {p.shape} / gradient {g.shape} / moment {m.shape} mismatch")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def grad_check(
    closure: Callable[[], tuple[float, Sequence[np.ndarray]]],
    params: Sequence[np.ndarray],
    epsilon: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    abs_floor: float = 1e-6,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``closure`` evaluates the loss and analytic gradients at the current
    contents of ``params``, which are perturbed in place and restored.
    Relative error per coordinate is ``|a - n| / max(|a|, |n|, abs_floor)``.
    With ``max_coords`` set, that many coordinates per array are sampled.
    """
    if not 1e-6 <= epsilon <= 1e-4:
        raise InputError(f"epsilon must lie in [1e-6, 1e-4], got {epsilon}")
    loss, grads = closure()
    if not np.isfinite(loss):
        raise NumericError("closure returned a non-finite loss")
    analytic = [np.array(g, dtype=np.float64, copy=True) for g in grads]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + epsilon
            lp, _ = closure()
            flat[i] = orig - epsilon
            lm, _ = closure()
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericError("closure returned a non-finite loss")
            num = (lp - lm) / (2.0 * epsilon)
            ai = a.reshape(-1)[i]
            err = abs(ai - num) / max(abs(ai), abs(num), abs_floor)
            worst = max(worst, err)
    return worst


# -- checkpoints ------------------------------------------------------------

MAGIC = b"CPCMALCK"
VERSION = 1


def save_checkpoint(path, params: dict[str, np.ndarray], architecture: dict) -> None:
    """Write ``params`` as little-endian f64 blocks plus a JSON architecture sidecar."""
    path = Path(path)
    manifest = [{"name": k, "shape": list(np.shape(v))} for k, v in params.items()]
    head = json.dumps(manifest).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(head)))
        fh.write(head)
        for v in params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    Path(str(path) + ".json").write_text(json.dumps(architecture, indent=2, sort_keys=True))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    data = path.read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise InputError(f"{path} is not a cpcmal checkpoint")
    off = len(MAGIC)
    version, head_len = struct.unpack_from("<II", data, off)
    if version != VERSION:
        raise InputError(f"unsupported checkpoint version {version}")
    off += 8
    manifest = json.loads(data[off : off + head_len])
    off += head_len
    params = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        params[entry["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += 8 * count
    if off != len(data):
        raise InputError(f"{path} has {len(data) - off} trailing bytes")
    sidecar = Path(str(path) + ".json")
    architecture = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return params, architecture
