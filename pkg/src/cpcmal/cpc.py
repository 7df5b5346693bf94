"""Contrastive predictive coding over log-mel frames.

The encoder maps each frame to ``z_t`` (three ELU dense layers with
dropout), a GRU summarizes ``z_<=t`` into ``c_t``, and step ``k`` scores a
candidate future latent with ``z^T W_k c_t``. For each anchor the
candidates are the latents at the same offset ``t + k`` in every utterance
of the batch, so the softmax always has ``B`` entries with one positive.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .audio import SEGMENT_FRAMES, LogMelFrames, UtteranceFeatures, segment_5s
from .errors import InputError, ShapeError
from .featmat import FeatureMatrix
from .nn_core import GRU, AdamState, Dense, Dropout, adam_update, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


@dataclass
class CpcConfig:
    in_dim: int = 40
    enc_dim: int = 256
    ctx_dim: int = 256
    enc_layers: int = 3
    n_steps: int = 12
    dropout: float = 0.2


@dataclass
class TrainSchedule:
    lr: float = 1e-4
    lr_factor: float = 0.7
    lr_patience: int = 20
    stop_patience: int = 100
    max_epochs: int = 1000
    batch_size: int = 8
    segment_frames: int = SEGMENT_FRAMES
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.lr_patience < 0 or self.stop_patience < 0:
            raise InputError("patience values must be non-negative")
        if not 0.0 < self.lr_factor < 1.0:
            raise InputError("lr_factor must be in (0, 1)")
        if self.batch_size < 2:
            raise InputError("batch_size must be at least 2 so negatives exist")


@dataclass
class CpcBatch:
    frames: np.ndarray  # (B, T, in_dim)
    lengths: np.ndarray | None = None  # real frames per utterance
    ids: list = field(default_factory=list)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3:
            raise ShapeError(f"batch frames must be (B, T, D), got {self.frames.shape}")
        B, T, _ = self.frames.shape
        if self.lengths is None:
            self.lengths = np.full(B, T)
        self.lengths = np.asarray(self.lengths, dtype=int)
        if self.lengths.shape != (B,):
            raise ShapeError(f"{self.lengths.shape[0]} lengths for {B} utterances")

    @classmethod
    def from_segments(cls, segments: Sequence[LogMelFrames], ids=()) -> "CpcBatch":
        return cls(np.stack([s.frames for s in segments]), np.array([s.n_valid for s in segments]), list(ids))


class CpcModel:
    def __init__(self, config: CpcConfig, encoder: list[Dense], gru: GRU, predictors: np.ndarray):
        self.config = config
        self.encoder = encoder
        self.drops = [Dropout(config.dropout) for _ in encoder]
        self.gru = gru
        self.predictors = np.asarray(predictors, dtype=np.float64)
        if self.predictors.shape != (config.n_steps, config.enc_dim, config.ctx_dim):
            raise ShapeError(f"predictor stack has shape {self.predictors.shape}")
        self.grad_predictors = np.zeros_like(self.predictors)

    @classmethod
    def init(cls, config: CpcConfig, rng: np.random.Generator) -> "CpcModel":
        dims = [config.in_dim] + [config.enc_dim] * config.enc_layers
        encoder = [Dense.init(a, b, "elu", rng) for a, b in zip(dims[:-1], dims[1:])]
        gru = GRU.init(config.enc_dim, config.ctx_dim, rng)
        limit = np.sqrt(6.0 / (config.enc_dim + config.ctx_dim))
        predictors = rng.uniform(-limit, limit, size=(config.n_steps, config.enc_dim, config.ctx_dim))
        return cls(config, encoder, gru, predictors)

    def params(self) -> list[np.ndarray]:
        out = [p for layer in self.encoder for p in layer.params()]
        return out + self.gru.params() + [self.predictors]

    def grads(self) -> list[np.ndarray]:
        out = [g for layer in self.encoder for g in layer.grads()]
        return out + self.gru.grads() + [self.grad_predictors]

    def encode(self, x: np.ndarray, rng: np.random.Generator | None = None, train: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.config.in_dim:
            raise ShapeError(f"model expects {self.config.in_dim}-dim frames, got {x.shape[-1]}")
        h = x
        for layer, drop in zip(self.encoder, self.drops):
            h = drop.forward(layer.forward(h), rng, train)
        return h

    def forward(self, batch: CpcBatch, rng=None, train: bool = False) -> tuple[np.ndarray, np.ndarray]:
        z = self.encode(batch.frames, rng, train)
        return z, self.gru.forward(z)

    def loss_and_grads(self, batch: CpcBatch, rng=None, train: bool = False) -> float:
        """InfoNCE loss; gradients are left in ``grads()``."""
        z, c = self.forward(batch, rng, train)
        loss, dz, dc, dw = infonce_from_latents(z, c, self.predictors, batch.lengths, need_grad=True)
        self.grad_predictors = dw
        dz = dz + self.gru.backward(dc)
        for layer, drop in zip(reversed(self.encoder), reversed(self.drops)):
            dz = layer.backward(drop.backward(dz))
        return loss

    # -- persistence -----------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.encoder):
            out[f"encoder.{i}.weights"] = layer.weights
            out[f"encoder.{i}.bias"] = layer.bias
        out["gru.w_input"] = self.gru.w_input
        out["gru.w_hidden"] = self.gru.w_hidden
        out["gru.bias"] = self.gru.bias
        out["predictors"] = self.predictors
        return out

    @classmethod
    def from_state_dict(cls, config: CpcConfig, state: dict[str, np.ndarray]) -> "CpcModel":
        encoder = [
            Dense(state[f"encoder.{i}.weights"], state[f"encoder.{i}.bias"], "elu") for i in range(config.enc_layers)
        ]
        gru = GRU(state["gru.w_input"], state["gru.w_hidden"], state["gru.bias"])
        return cls(config, encoder, gru, state["predictors"])

    def copy(self) -> "CpcModel":
        return CpcModel.from_state_dict(self.config, copy.deepcopy(self.state_dict()))

    def save(self, path) -> None:
        save_checkpoint(path, self.state_dict(), {"kind": "cpc", **asdict(self.config)})

    @classmethod
    def load(cls, path) -> "CpcModel":
        state, arch = load_checkpoint(path)
        if arch.get("kind") != "cpc":
            raise InputError(f"{path} does not hold a CPC model")
        arch = {k: v for k, v in arch.items() if k != "kind"}
        return cls.from_state_dict(CpcConfig(**arch), state)


def infonce_from_latents(z, c, predictors, lengths, need_grad=False):
    B, T, _ = z.shape
    K = predictors.shape[0]
    if T <= K:
        raise InputError(f"sequence length {T} must exceed the {K} prediction steps")
    A = T - K
    # anchor (b, t) counts when every one of its K positives is a real frame
    valid = (np.arange(A)[None, :] + K < np.asarray(lengths)[:, None]).astype(np.float64)
    n_valid = valid.sum()
    if n_valid == 0:
        raise InputError("batch has no valid anchors: every utterance is too short")
    scale = 1.0 / (K * n_valid)
    ca = c[:, :A]
    mask = valid.astype(bool)
    terms = []
    if need_grad:
        dz = np.zeros_like(z)
        dc = np.zeros_like(c)
        dw = np.zeros_like(predictors)
    idx = np.arange(B)
    for k in range(1, K + 1):
        w = predictors[k - 1]
        pred = ca @ w.T  # (B, A, Dz)
        zk = z[:, k : k + A]
        scores = np.einsum("bad,cad->bac", pred, zk)
        scores -= scores.max(axis=2, keepdims=True)
        logsm = scores - np.log(np.exp(scores).sum(axis=2, keepdims=True))
        terms.append(-logsm[idx, :, idx][mask])
        if need_grad:
            g = np.exp(logsm)
            g[idx, :, idx] -= 1.0
            g *= (valid * scale)[:, :, None]
            dpred = np.einsum("bac,cad->bad", g, zk)
            dz[:, k : k + A] += np.einsum("bac,bad->cad", g, pred)
            dw[k - 1] = np.einsum("bad,bae->de", dpred, ca)
            dc[:, :A] += dpred @ w
    # mean shifted by the first term: exact when all terms agree (uniform scores give ln B)
    t = np.concatenate(terms)
    loss = float(t[0] + np.sum(t - t[0]) / t.size)
    if need_grad:
        return loss, dz, dc, dw
    return loss


def cpc_forward(model: CpcModel, batch: CpcBatch) -> tuple[np.ndarray, np.ndarray]:
    """Evaluation-mode latents ``z`` and contexts ``c``, both (B, T, dim)."""
    return model.forward(batch, train=False)


def infonce_loss(model: CpcModel, batch: CpcBatch, rng=None, train: bool = False) -> float:
    if batch.frames.shape[0] < 2:
        raise InputError("InfoNCE needs at least 2 utterances per batch")
    z, c = model.forward(batch, rng, train)
    return infonce_from_latents(z, c, model.predictors, batch.lengths)


def _as_frames(u) -> LogMelFrames:
    return u if isinstance(u, LogMelFrames) else LogMelFrames(np.asarray(u, dtype=np.float64))


def _batched_loss(model, segments, batch_size) -> float:
    chunks = [segments[i : i + batch_size] for i in range(0, len(segments), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = chunks[-2] + chunks.pop()
    total = sum(infonce_loss(model, CpcBatch.from_segments(ch)) * len(ch) for ch in chunks)
    return total / len(segments)


def train_cpc(
    utterances: Sequence,
    schedule: TrainSchedule | None = None,
    seed: int = 0,
    config: CpcConfig | None = None,
) -> tuple[CpcModel, dict]:
    """Train with an 80:20 utterance split; return the best-validation model.

    ``utterances`` holds LogMelFrames or (T, in_dim) arrays of any length;
    each epoch draws fresh random crops of ``segment_frames`` frames, and
    validation uses one fixed crop per utterance with dropout off. The
    learning rate is multiplied by ``lr_factor`` once validation loss has
    not improved for more than ``lr_patience`` epochs, and training stops
    after more than ``stop_patience`` non-improving epochs.
    """
    schedule = schedule or TrainSchedule()
    config = config or CpcConfig()
    utts = [_as_frames(u) for u in utterances]
    if len(utts) < 10:
        raise InputError(f"CPC training needs at least 10 utterances, got {len(utts)}")
    for i, u in enumerate(utts):
        if u.n_valid <= config.n_steps:
            raise InputError(f"utterance {i} has {u.n_valid} frames; need more than {config.n_steps}")
    rng = np.random.default_rng(seed)
    model = CpcModel.init(config, rng)
    order = rng.permutation(len(utts))
    n_val = max(2, int(round(schedule.val_fraction * len(utts))))
    val_idx, train_idx = order[:n_val], order[n_val:]
    val_rng = np.random.default_rng([seed, 1])
    val_segments = [segment_5s(utts[i], val_rng, schedule.segment_frames) for i in val_idx]
    bs = min(schedule.batch_size, len(train_idx))

    state = AdamState.for_params(model.params(), lr=schedule.lr)
    history = {"train_loss": [], "val_loss": [], "lr": []}
    best_loss, best_state, best_epoch = np.inf, None, -1
    bad = plateau_bad = 0
    for epoch in range(schedule.max_epochs):
        perm = rng.permutation(train_idx)
        losses = []
        for start in range(0, len(perm) - bs + 1, bs):
            segs = [segment_5s(utts[i], rng, schedule.segment_frames) for i in perm[start : start + bs]]
            losses.append(model.loss_and_grads(CpcBatch.from_segments(segs), rng, train=True))
            adam_update(state, model.params(), model.grads())
        val = _batched_loss(model, val_segments, schedule.batch_size)
        history["train_loss"].append(float(np.mean(losses)))
        history["val_loss"].append(val)
        history["lr"].append(state.lr)
        log.debug("epoch %d train %.4f val %.4f lr %.2e", epoch, history["train_loss"][-1], val, state.lr)
        if val < best_loss:
            best_loss, best_epoch = val, epoch
            best_state = copy.deepcopy(model.state_dict())
            bad = plateau_bad = 0
            continue
        bad += 1
        plateau_bad += 1
        if bad > schedule.stop_patience:
            break
        if plateau_bad > schedule.lr_patience:
            state.lr *= schedule.lr_factor
            plateau_bad = 0
    history["best_epoch"] = best_epoch
    history["best_val_loss"] = best_loss
    history["split"] = {"train": train_idx.tolist(), "val": val_idx.tolist()}
    return CpcModel.from_state_dict(config, best_state), history


def extract_cpc_features(model: CpcModel, frames, n_valid: int | None = None, utterance_id: str = "") -> UtteranceFeatures:
    """Mean encoder output over the real frames (dropout off)."""
    frames = _as_frames(frames)
    n = frames.n_valid if n_valid is None else n_valid
    if n < 1:
        raise InputError("utterance has no real frames")
    z = model.encode(frames.frames[:n], train=False)
    return UtteranceFeatures(z.mean(axis=0), "cpc256" if z.shape[1] == 256 else "cpc", utterance_id)


def cpc_feature_matrix(model: CpcModel, utterances: Sequence, ids: Sequence | None = None) -> FeatureMatrix:
    rows = [extract_cpc_features(model, u).vector for u in utterances]
    return FeatureMatrix.from_array(np.vstack(rows), ids)
