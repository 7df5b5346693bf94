import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from cpcmal.errors import InputError, ShapeError
from cpcmal.evaluation import (
    ConfusionCounts,
    GridSpec,
    default_grid,
    grid_search,
    make_folds,
    mcc,
    mcc_score,
    rbf_kernel,
    smo_solve,
    svm_decision,
    svm_predict,
    svm_train,
)


def direct_mcc(tp, tn, fp, fn):
    d = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    return 0.0 if d == 0 else (tp * tn - fp * fn) / math.sqrt(d)


class TestMcc:
    def test_examples(self):
        assert mcc(ConfusionCounts(tp=10, tn=5, fp=0, fn=0)) == 1.0
        assert mcc(ConfusionCounts(25, 25, 25, 25)) == 0.0
        assert mcc(ConfusionCounts(tp=6, tn=3, fp=1, fn=2)) == pytest.approx(16 / math.sqrt(1120), abs=1e-15)
        assert mcc(ConfusionCounts(tp=6, tn=3, fp=1, fn=2)) == pytest.approx(0.4781, abs=1e-4)
        assert mcc(ConfusionCounts(tp=0, tn=0, fp=4, fn=6)) == -1.0
        assert mcc(ConfusionCounts(tp=5, tn=0, fp=3, fn=0)) == 0.0

    def test_empty(self):
        with pytest.raises(InputError):
            mcc(ConfusionCounts())

    @settings(max_examples=200, deadline=None)
    @given(st.tuples(*[st.integers(0, 1000)] * 4).filter(lambda c: sum(c) > 0))
    def test_symmetries(self, c):
        tp, tn, fp, fn = c
        v = mcc(ConfusionCounts(tp, tn, fp, fn))
        assert -1 <= v <= 1
        assert v == pytest.approx(direct_mcc(tp, tn, fp, fn), abs=1e-12)
        assert mcc(ConfusionCounts(tn, tp, fn, fp)) == pytest.approx(v, abs=1e-12)
        # inverting predictions swaps TP<->FN and TN<->FP
        assert mcc(ConfusionCounts(fn, fp, tn, tp)) == pytest.approx(-v, abs=1e-12)

    def test_from_labels(self):
        y = np.array([1, 1, -1, -1, 1])
        p = np.array([1, -1, -1, 1, 1])
        c = ConfusionCounts.from_labels(y, p)
        assert (c.tp, c.tn, c.fp, c.fn) == (2, 1, 1, 1)
        assert mcc_score(y, -p) == pytest.approx(-mcc_score(y, p), abs=1e-12)


def qp_oracle(K, y, C):
    """Solve the SVM dual with a generic constrained optimizer."""
    Q = np.outer(y, y) * K
    res = minimize(
        lambda a: 0.5 * a @ Q @ a - a.sum(),
        np.full(y.size, C / 2),
        jac=lambda a: Q @ a - 1.0,
        bounds=[(0, C)] * y.size,
        constraints=[{"type": "eq", "fun": lambda a: a @ y, "jac": lambda a: y.astype(float)}],
        method="SLSQP",
        options={"ftol": 1e-14, "maxiter": 500},
    )
    return res.x


def check_kkt(K, y, res, C, tol):
    f = K @ (res.alphas * y) + res.bias
    yf = y * f
    a = res.alphas
    assert np.all(yf[a <= 0] >= 1 - tol)
    assert np.all(yf[a >= C] <= 1 + tol)
    free = (a > 0) & (a < C)
    assert np.all(np.abs(yf[free] - 1) <= tol)


class TestSvm:
    def test_two_points(self):
        x = np.array([[0.0, 0.0], [2.0, 0.0]])
        model = svm_train(x, [1, -1], C=1.0, gamma=0.5)
        assert model.support_vectors.shape[0] == 2
        assert svm_decision(model, [[1.0, 0.0]])[0] == pytest.approx(0.0, abs=1e-12)
        assert svm_predict(model, [[1.0, 0.0]])[0] == 1
        assert svm_predict(model, x).tolist() == [1, -1]

    def test_separable_blobs(self, rng):
        x = np.vstack([rng.normal(size=(40, 3)) - 3, rng.normal(size=(40, 3)) + 3])
        y = np.repeat([1, -1], 40)
        model = svm_train(x, y, C=100.0, gamma=0.1)
        assert np.all(svm_predict(model, x) == y)
        assert model.converged

    def test_xor_against_qp(self):
        x = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
        y = np.array([1, 1, -1, -1])
        model = svm_train(x, y, C=10.0, gamma=1.0)
        assert np.all(svm_predict(model, x) == y)
        K = rbf_kernel(x, x, 1.0)
        res = smo_solve(K, y, 10.0, tol=1e-8)
        np.testing.assert_allclose(res.alphas, qp_oracle(K, y, 10.0), atol=1e-5)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_problems_against_qp(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(25, 2))
        y = np.where(x[:, 0] * x[:, 1] + 0.3 * rng.normal(size=25) > 0, 1, -1)
        K = rbf_kernel(x, x, 0.7)
        res = smo_solve(K, y, 2.0, tol=1e-9, record=True)
        oracle = qp_oracle(K, y, 2.0)
        Q = np.outer(y, y) * K
        dual = lambda a: a.sum() - 0.5 * a @ Q @ a
        assert dual(res.alphas) == pytest.approx(dual(oracle), abs=1e-6)
        assert all(b >= a - 1e-12 for a, b in zip(res.objective, res.objective[1:]))
        check_kkt(K, y, res, 2.0, 1e-6)
        assert np.all(res.alphas >= 0) and np.all(res.alphas <= 2.0)
        assert abs(res.alphas @ y) < 1e-10

    def test_kkt_at_default_tolerance(self, rng):
        x = rng.normal(size=(60, 4))
        y = np.where(x[:, 0] + 0.5 * rng.normal(size=60) > 0, 1, -1)
        K = rbf_kernel(x, x, 0.3)
        res = smo_solve(K, y, 1.0)
        assert res.converged and res.kkt_gap < 1e-3
        check_kkt(K, y, res, 1.0, 2e-3)

    def test_single_class_is_constant(self, rng):
        model = svm_train(rng.normal(size=(5, 2)), [-1] * 5, C=1.0, gamma=1.0)
        assert model.constant == -1
        assert svm_predict(model, rng.normal(size=(7, 2))).tolist() == [-1] * 7

    def test_decision_matches_kernel_sum(self, rng):
        x = rng.normal(size=(30, 3))
        y = np.where(x[:, 1] > 0, 1, -1)
        model = svm_train(x, y, C=1.0, gamma=0.5)
        q = rng.normal(size=(6, 3))
        expected = [
            sum(c * math.exp(-0.5 * float(np.sum((qi - s) ** 2))) for c, s in zip(model.dual_coef, model.support_vectors))
            + model.bias
            for qi in q
        ]
        np.testing.assert_allclose(svm_decision(model, q), expected, atol=1e-10)

    def test_hard_margin_support_vector_keeps_label(self, rng):
        x = np.vstack([rng.normal(size=(10, 2)) - 2, rng.normal(size=(10, 2)) + 2])
        y = np.repeat([1, -1], 10)
        model = svm_train(x, y, C=1e6, gamma=0.2)
        sv_labels = np.sign(model.dual_coef).astype(int)
        assert np.all(svm_predict(model, model.support_vectors) == sv_labels)

    def test_errors(self, rng):
        with pytest.raises(InputError):
            svm_train(rng.normal(size=(4, 2)), [0, 1, 0, 1], 1.0, 1.0)
        with pytest.raises(ShapeError):
            svm_train(rng.normal(size=(4, 2)), [1, -1, 1], 1.0, 1.0)
        model = svm_train(rng.normal(size=(4, 2)), [1, -1, 1, -1], 1.0, 1.0)
        with pytest.raises(ShapeError):
            svm_predict(model, np.zeros((2, 3)))


class TestFolds:
    def test_sizes(self):
        assert np.bincount(make_folds(10, 5, 0)).tolist() == [2] * 5
        assert np.bincount(make_folds(11, 5, 0)).tolist() == [3, 2, 2, 2, 2]

    def test_deterministic(self):
        assert make_folds(37, 5, 9).tolist() == make_folds(37, 5, 9).tolist()
        assert make_folds(37, 5, 9).tolist() != make_folds(37, 5, 10).tolist()

    def test_too_small(self):
        with pytest.raises(InputError):
            make_folds(4, 5, 0)


class TestGridSearch:
    def test_single_cell(self, rng):
        x = rng.normal(size=(30, 2))
        y = np.where(x[:, 0] > 0, 1, -1)
        assert grid_search(x, y, GridSpec([3.0], [0.2])) == (3.0, 0.2)

    def test_fallback_midpoint(self, rng):
        grid = GridSpec([0.1, 1, 10, 100], [0.01, 0.1, 1])
        x = rng.normal(size=(9, 2))
        assert grid_search(x, [1, -1] * 4 + [1], grid) == (1, 0.1)
        assert grid_search(rng.normal(size=(20, 2)), [1] * 20, grid) == (1, 0.1)

    def test_picks_the_right_scale(self):
        grid = GridSpec([1.0, 10.0], [1e-4, 1.0, 1e4])
        hits = 0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            # alternating labels along a line of blobs spaced at unit scale
            centers = np.arange(6) * 2.0
            idx = rng.integers(0, 6, size=90)
            x = np.c_[centers[idx] + 0.3 * rng.normal(size=90), 0.3 * rng.normal(size=90)]
            y = np.where(idx % 2 == 0, 1, -1)
            C, g = grid_search(x, y, grid, seed=seed)
            assert C in grid.C and g in grid.gamma
            hits += g == 1.0
        assert hits >= 9

    def test_default_grid(self, rng):
        x = rng.normal(size=(50, 4)) * 2
        grid = default_grid(x)
        g0 = 1 / (4 * x.var())
        np.testing.assert_allclose(grid.gamma, [g0 / 10, g0, 10 * g0])
        assert tuple(grid.C) == (0.1, 1.0, 10.0, 100.0)

    def test_invalid_grid(self):
        with pytest.raises(InputError):
            GridSpec([], [1.0])
        with pytest.raises(InputError):
            GridSpec([1.0], [-1.0])
