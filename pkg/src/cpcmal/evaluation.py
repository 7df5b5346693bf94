"""Downstream scoring: RBF-kernel SVM, grid search, MCC."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InputError, ShapeError

DEFAULT_C = (0.1, 1.0, 10.0, 100.0)


@dataclass
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_labels(cls, y_true, y_pred, positive=1) -> "ConfusionCounts":
        t = np.asarray(y_true) == positive
        p = np.asarray(y_pred) == positive
        return cls(int(np.sum(t & p)), int(np.sum(~t & ~p)), int(np.sum(~t & p)), int(np.sum(t & ~p)))


def mcc(counts: ConfusionCounts) -> float:
    """Matthews correlation coefficient; 0 when any marginal is empty."""
    if counts.total <= 0:
        raise InputError("MCC of an empty confusion matrix")
    tp, tn, fp, fn = counts.tp, counts.tn, counts.fp, counts.fn
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def mcc_score(y_true, y_pred, positive=1) -> float:
    return mcc(ConfusionCounts.from_labels(y_true, y_pred, positive))


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * cdist(a, b, "sqeuclidean"))


@dataclass
class SmoResult:
    alphas: np.ndarray
    bias: float
    n_iter: int
    converged: bool
    kkt_gap: float
    objective: list = field(default_factory=list)  # dual objective per iteration


def smo_solve(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3, max_iter: int = 100_000,
              record: bool = False, alpha0: np.ndarray | None = None) -> SmoResult:
    """Soft-margin SVM dual on a precomputed kernel.

    SMO with second-order working-set selection, as in libsvm.
    Stops when the maximal KKT violation ``m(a) - M(a)`` drops below ``tol``.
    ``alpha0`` warm-starts from any feasible point, e.g. the solution for a
    smaller C.
    """
    n = y.size
    y = y.astype(np.float64)
    diag = np.diag(K).copy()
    if alpha0 is None:
        alpha = np.zeros(n)
        score = y.copy()  # -y * gradient of 0.5 a'Qa - e'a, Q = yy' * K
    else:
        alpha = np.clip(np.asarray(alpha0, dtype=np.float64), 0.0, C)
        if abs(alpha @ y) > 1e-9 * max(1.0, C):
            raise InputError("warm start violates sum(alpha * y) = 0")
        score = y - K @ (alpha * y)
    pos = y > 0
    up = np.where(pos, alpha < C, alpha > 0)
    low = np.where(pos, alpha > 0, alpha < C)
    objective = []
    gap = np.inf
    it = 0
    converged = False
    while it < max_iter:
        su = np.where(up, score, -np.inf)
        i = int(np.argmax(su))
        m_up = su[i]
        m_low = np.where(low, score, np.inf).min()
        if not np.isfinite(m_up) or not np.isfinite(m_low):
            converged, gap = True, 0.0
            break
        gap = m_up - m_low
        if gap < tol:
            converged = True
            break
        Ki = K[i]
        b = m_up - score
        a = np.maximum(diag[i] + diag - 2.0 * Ki, 1e-12)
        j = int(np.argmin(np.where(low & (b > 0), -(b * b) / a, np.inf)))
        Kj = K[j]
        yi, yj = y[i], y[j]
        ai_old, aj_old = alpha[i], alpha[j]
        quad = max(diag[i] + diag[j] - 2.0 * Ki[j], 1e-12)
        # gradient entries recovered from scores: g = -y * score
        gi, gj = -yi * score[i], -yj * score[j]
        if yi != yj:
            delta = (-gi - gj) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            delta = (gi - gj) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
                if aj > C:
                    aj, ai = C, total - C
            else:
                if aj < 0:
                    aj, ai = 0.0, total
                if ai < 0:
                    ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        score -= Ki * (yi * (ai - ai_old)) + Kj * (yj * (aj - aj_old))
        for t in (i, j):
            up[t] = alpha[t] < C if pos[t] else alpha[t] > 0
            low[t] = alpha[t] > 0 if pos[t] else alpha[t] < C
        it += 1
        if record:
            # dual objective e'a - 0.5 a'Qa, using Qa = 1 - y * score
            objective.append(float(alpha.sum() - 0.5 * alpha @ (1.0 - y * score)))
    # bias from free vectors, otherwise the midpoint of the feasible interval
    yg = -score
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(np.mean(yg[free]))
    else:
        ub_mask = np.where(pos, alpha <= 0, alpha >= C)
        lb_mask = np.where(pos, alpha >= C, alpha <= 0)
        ub = np.min(yg[ub_mask]) if ub_mask.any() else np.inf
        lb = np.max(yg[lb_mask]) if lb_mask.any() else -np.inf
        rho = float((ub + lb) / 2.0) if np.isfinite(ub) and np.isfinite(lb) else float(ub if np.isfinite(ub) else lb)
    return SmoResult(alpha, -rho, it, converged, float(gap), objective)


@dataclass
class SvmModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i for each support vector
    bias: float
    C: float
    gamma: float
    constant: int | None = None  # set when training saw a single class
    n_iter: int = 0
    converged: bool = True
    kkt_gap: float = 0.0

    @property
    def n_features(self) -> int:
        return self.support_vectors.shape[1]


def _check_labels(labels) -> np.ndarray:
    y = np.asarray(labels)
    if not np.all(np.isin(y, (-1, 1))):
        raise InputError("labels must be -1 or +1")
    return y.astype(int)


def svm_train(features, labels, C: float, gamma: float, seed: int | None = None, tol: float = 1e-3,
              max_iter: int = 100_000) -> SvmModel:
    """RBF SVM, ``k(a, b) = exp(-gamma |a - b|^2)``; a single-class set gives a constant predictor.

    ``seed`` is accepted for call-site symmetry only: the solver is deterministic.
    """
    x = np.asarray(features, dtype=np.float64)
    y = _check_labels(labels)
    if x.ndim != 2 or x.shape[0] != y.size or y.size == 0:
        raise ShapeError(f"{x.shape} features for {y.size} labels")
    if not np.all(np.isfinite(x)):
        raise InputError("features must be finite")
    if np.unique(y).size == 1:
        return SvmModel(x[:0], np.zeros(0), 0.0, C, gamma, constant=int(y[0]))
    res = smo_solve(rbf_kernel(x, x, gamma), y, C, tol, max_iter)
    sv = res.alphas > 0
    return SvmModel(x[sv], (res.alphas * y)[sv], res.bias, C, gamma, None, res.n_iter, res.converged, res.kkt_gap)


def svm_decision(model: SvmModel, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or (model.constant is None and x.shape[1] != model.n_features):
        raise ShapeError(f"model expects {model.n_features} features, got {x.shape}")
    if model.constant is not None:
        return np.full(x.shape[0], float(model.constant))
    return rbf_kernel(x, model.support_vectors, model.gamma) @ model.dual_coef + model.bias


def svm_predict(model: SvmModel, features) -> np.ndarray:
    """Sign of the decision function; exact zeros go to +1."""
    return np.where(svm_decision(model, features) >= 0, 1, -1)


def make_folds(n: int, folds: int = 5, seed: int | np.random.Generator = 0) -> np.ndarray:
    """Fold id per sample from a seeded permutation; sizes differ by at most one."""
    if n < folds:
        raise InputError(f"cannot split {n} samples into {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    out = np.empty(n, dtype=int)
    out[perm] = np.arange(n) % folds
    return out


@dataclass
class GridSpec:
    C: Sequence[float] = DEFAULT_C
    gamma: Sequence[float] = (0.1, 1.0, 10.0)
    folds: int = 5

    def __post_init__(self):
        if not self.C or not self.gamma:
            raise InputError("grid needs at least one C and one gamma")
        if min(self.C) <= 0 or min(self.gamma) <= 0:
            raise InputError("grid values must be positive")

    @property
    def midpoint(self) -> tuple[float, float]:
        c, g = sorted(self.C), sorted(self.gamma)
        return c[(len(c) - 1) // 2], g[(len(g) - 1) // 2]


def default_grid(features) -> GridSpec:
    """C in {0.1, 1, 10, 100}; gamma one decade either side of 1 / (D * var)."""
    x = np.asarray(features, dtype=np.float64)
    var = float(x.var())
    g0 = 1.0 / (x.shape[1] * var) if var > 0 else 1.0
    return GridSpec(DEFAULT_C, (g0 / 10.0, g0, g0 * 10.0))


def grid_search(features, labels, grid: GridSpec | None = None, seed: int = 0) -> tuple[float, float]:
    """(C, gamma) with the best mean per-fold MCC; ties favor smaller C, then smaller gamma."""
    x = np.asarray(features, dtype=np.float64)
    y = _check_labels(labels)
    grid = grid or default_grid(x)
    if y.size < 10 or np.unique(y).size < 2:
        return grid.midpoint
    folds = make_folds(y.size, grid.folds, seed)
    splits = [(np.flatnonzero(folds != f), np.flatnonzero(folds == f)) for f in range(grid.folds)]
    scores: dict[tuple[float, float], float] = {}
    for g in sorted(grid.gamma):
        K = rbf_kernel(x, x, g)
        per_fold = {C: [] for C in grid.C}
        for tr, te in splits:
            alpha = None
            # ascending C: each solution is a feasible start for the next box
            for C in sorted(grid.C):
                if np.unique(y[tr]).size == 1:
                    pred = np.full(te.size, y[tr][0])
                else:
                    res = smo_solve(K[np.ix_(tr, tr)], y[tr], C, alpha0=alpha)
                    alpha = res.alphas
                    dec = K[np.ix_(te, tr)] @ (alpha * y[tr]) + res.bias
                    pred = np.where(dec >= 0, 1, -1)
                per_fold[C].append(mcc_score(y[te], pred))
        for C in grid.C:
            scores[(C, g)] = float(np.mean(per_fold[C]))
    best = max(scores.values())
    # ties: smaller C first, then smaller gamma
    return min(k for k, v in scores.items() if v == best)
