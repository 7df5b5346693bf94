"""Small-instance oracles runnable in seconds: ``cpcmal selfcheck``."""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cpc import CpcBatch, CpcConfig, CpcModel, cpc_forward, infonce_loss
from .dimred import pca_fit, pca_inverse, pca_transform
from .evaluation import ConfusionCounts, mcc, svm_predict, svm_train
from .mal import affinity, farthest_first, k_medoids
from .nn_core import GRU, grad_check


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _kmedoids_exhaustive() -> str:
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(50):
        n, k = int(rng.integers(3, 9)), int(rng.integers(1, 4))
        d = affinity(rng.normal(size=(n, 2)), "euclidean").distances
        res = k_medoids(d, k, seed=int(rng.integers(1 << 30)))
        best = min(d[:, list(s)].min(axis=1).sum() for s in itertools.combinations(range(n), k))
        assert res.converged, "k-medoids did not terminate"
        assert all(b <= a + 1e-12 for a, b in zip(res.cost_history, res.cost_history[1:])), "cost increased"
        ratio = res.cost / best if best > 0 else 1.0
        worst = max(worst, ratio)
        assert ratio <= 1.2 + 1e-12, f"cost ratio {ratio:.3f}"
    return f"worst cost / optimum = {worst:.4f} over 50 instances"


def _farthest_first_replay() -> str:
    rng = np.random.default_rng(12)
    for _ in range(100):
        n = int(rng.integers(2, 30))
        d = affinity(rng.normal(size=(n, 3)), "euclidean").distances
        picks = farthest_first(d, int(rng.integers(1, n + 1)), seed=int(rng.integers(1 << 30)))
        for j in range(1, picks.size):
            gaps = d[:, picks[:j]].min(axis=1)
            gaps[picks[:j]] = -np.inf
            assert gaps[picks[j]] == gaps.max(), f"pick {j} is not farthest"
    return "100 instances replayed exactly"


def _brute_infonce(model: CpcModel, batch: CpcBatch) -> float:
    z, c = cpc_forward(model, batch)
    B, T = batch.frames.shape[:2]
    K = model.config.n_steps
    terms = []
    for k in range(1, K + 1):
        for b in range(B):
            for t in range(T - K):
                if t + K >= batch.lengths[b]:
                    continue
                logits = [float(z[j, t + k] @ model.predictors[k - 1] @ c[b, t]) for j in range(B)]
                top = max(logits)
                terms.append(top + math.log(sum(math.exp(s - top) for s in logits)) - logits[b])
    return sum(terms) / len(terms)


def _infonce_oracle() -> str:
    rng = np.random.default_rng(13)
    worst = 0.0
    for B in (2, 3, 4):
        cfg = CpcConfig(in_dim=5, enc_dim=6, ctx_dim=4, enc_layers=2, n_steps=3, dropout=0.0)
        model = CpcModel.init(cfg, rng)
        T = int(rng.integers(8, 21))
        lengths = rng.integers(cfg.n_steps + 1, T + 1, size=B)
        lengths[0] = T
        frames = rng.normal(size=(B, T, cfg.in_dim))
        batch = CpcBatch(frames, lengths)
        worst = max(worst, abs(infonce_loss(model, batch) - _brute_infonce(model, batch)))
        model.predictors[:] = 0.0  # every score equal
        uniform = infonce_loss(model, batch)
        assert uniform == math.log(B), f"uniform scores gave {uniform!r}, expected ln {B}"
    assert worst < 1e-10, f"brute-force gap {worst:.2e}"
    return f"max |loss - brute force| = {worst:.1e}; uniform scores give ln B"


def _mcc_formula() -> str:
    rng = np.random.default_rng(14)
    worst = 0.0
    for _ in range(1000):
        tp, tn, fp, fn = (int(v) for v in rng.integers(0, 200, size=4))
        if tp + tn + fp + fn == 0:
            continue
        den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
        ref = 0.0 if den == 0 else (tp * tn - fp * fn) / math.sqrt(den)
        worst = max(worst, abs(mcc(ConfusionCounts(tp, tn, fp, fn)) - ref))
    assert worst <= 1e-12
    assert mcc(ConfusionCounts(10, 5, 0, 0)) == 1.0
    assert mcc(ConfusionCounts(0, 0, 5, 10)) == -1.0
    assert mcc(ConfusionCounts(25, 25, 25, 25)) == 0.0
    assert mcc(ConfusionCounts(5, 0, 3, 0)) == 0.0
    return f"max deviation {worst:.1e} over 1000 matrices"


def _pca_contract() -> str:
    rng = np.random.default_rng(15)
    x = rng.normal(size=(60, 12)) @ rng.normal(size=(12, 12))
    model = pca_fit(x, 12)
    gram = model.components @ model.components.T
    ortho = float(np.abs(gram - np.eye(12)).max())
    err = float(np.abs(pca_inverse(model, pca_transform(model, x)) - x).max())
    assert ortho < 1e-8 and err < 1e-8
    assert np.all(np.diff(model.explained_variance) <= 0)
    return f"orthonormality {ortho:.1e}, reconstruction {err:.1e}"


def _gru_gradients() -> str:
    rng = np.random.default_rng(16)
    gru = GRU.init(3, 4, rng)
    x = rng.normal(size=(2, 5, 3))
    target = rng.normal(size=(2, 5, 4))

    def closure():
        h = gru.forward(x)
        diff = h - target
        gru.backward(diff)
        return 0.5 * float(np.sum(diff**2)), gru.grads()

    err = grad_check(closure, gru.params(), epsilon=1e-5, rng=rng)
    assert err < 1e-4, f"relative error {err:.2e}"
    return f"max relative error {err:.1e}"


def _svm_xor() -> str:
    x = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    y = np.array([1, 1, -1, -1])
    model = svm_train(x, y, C=10.0, gamma=1.0)
    assert np.array_equal(svm_predict(model, x), y)
    return "XOR separated with gamma=1, C=10"


CHECKS: list[tuple[str, Callable[[], str]]] = [
    ("k-medoids vs exhaustive optimum", _kmedoids_exhaustive),
    ("farthest-first replay", _farthest_first_replay),
    ("InfoNCE vs brute force", _infonce_oracle),
    ("MCC formula", _mcc_formula),
    ("PCA contract", _pca_contract),
    ("GRU finite differences", _gru_gradients),
    ("RBF SVM on XOR", _svm_xor),
]


def run_selfcheck() -> list[CheckResult]:
    out = []
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            detail, ok = fn(), True
        except Exception as exc:  # a failing check reports, it does not abort the rest
            detail, ok = f"{type(exc).__name__}: {exc}", False
        out.append(CheckResult(name, ok, detail, time.perf_counter() - t0))
    return out
