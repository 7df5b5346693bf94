"""Exact t-SNE (no Barnes-Hut) with PCA initialization."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError
from ..featmat import as_array


@dataclass
class TsneConfig:
    perplexity: float = 30.0
    n_components: int = 2
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: float = 200.0
    n_iter: int = 1000
    momentum_early: float = 0.5
    momentum_late: float = 0.8
    min_gain: float = 0.01
    init_std: float = 1e-4
    seed: int = 0


@dataclass
class TsneResult:
    embedding: np.ndarray
    kl: list = field(default_factory=list)  # KL(P || Q) after each iteration


def _sq_dists(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def conditional_p(sq_dists: np.ndarray, perplexity: float, tol: float = 1e-5, max_iter: int = 200) -> np.ndarray:
    """Row-stochastic P_{j|i} whose entropies equal log(perplexity), by bisection on the precisions."""
    N = sq_dists.shape[0]
    target = np.log(perplexity)
    d = sq_dists.copy()
    np.fill_diagonal(d, np.inf)
    d -= d.min(axis=1, keepdims=True)  # shift for stability; P is shift-invariant per row
    beta = np.ones(N)
    lo = np.zeros(N)
    hi = np.full(N, np.inf)
    for _ in range(max_iter):
        p = np.exp(-d * beta[:, None])
        sp = p.sum(axis=1)
        h = np.log(sp) + beta * np.sum(np.where(np.isfinite(d), d, 0.0) * p, axis=1) / sp
        diff = h - target
        if np.all(np.abs(diff) < tol):
            break
        up = diff > 0  # entropy too high -> sharpen
        lo = np.where(up, beta, lo)
        hi = np.where(up, hi, beta)
        beta = np.where(up, np.where(np.isinf(hi), beta * 2.0, (beta + hi) / 2.0), (beta + lo) / 2.0)
    p = np.exp(-d * beta[:, None])
    return p / p.sum(axis=1, keepdims=True)


def joint_p(x: np.ndarray, perplexity: float) -> np.ndarray:
    cond = conditional_p(_sq_dists(x), perplexity)
    p = (cond + cond.T) / (2.0 * x.shape[0])
    return np.maximum(p, 1e-12)


def pca_init(x: np.ndarray, n_components: int, std: float) -> np.ndarray:
    xc = x - x.mean(axis=0)
    u, s, vt = np.linalg.svd(xc, full_matrices=False)
    y = xc @ vt[:n_components].T
    pivot = np.argmax(np.abs(vt[:n_components]), axis=1)
    y *= np.sign(vt[np.arange(n_components), pivot])
    return y / y[:, 0].std() * std


def tsne_embed(matrix, config: TsneConfig | None = None) -> TsneResult:
    config = config or TsneConfig()
    x = as_array(matrix)
    N = x.shape[0]
    if N < 10:
        raise InputError(f"t-SNE needs at least 10 samples, got {N}")
    if config.perplexity >= N / 3:
        raise InputError(f"perplexity {config.perplexity} too large for {N} samples (must be < N/3)")
    p = joint_p(x, config.perplexity)
    log_p = np.log(p)
    np.fill_diagonal(p, 0.0)
    y = pca_init(x, config.n_components, config.init_std)
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    kl = []
    off = ~np.eye(N, dtype=bool)
    for it in range(config.n_iter):
        early = it < config.exaggeration_iters
        pe = p * config.early_exaggeration if early else p
        momentum = config.momentum_early if early else config.momentum_late
        num = 1.0 / (1.0 + _sq_dists(y))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)
        w = (pe - q) * num
        grad = 4.0 * (w.sum(axis=1)[:, None] * y - w @ y)
        gains = np.where(np.sign(grad) != np.sign(update), gains + 0.2, gains * 0.8)
        np.maximum(gains, config.min_gain, out=gains)
        update = momentum * update - config.learning_rate * gains * grad
        y = y + update
        y -= y.mean(axis=0)
        kl.append(float(np.sum(p[off] * (log_p[off] - np.log(q[off])))))
    return TsneResult(y, kl)
