import math

import numpy as np
import pytest

from mec.learners import (FittedKRR, LearnerError, LearnerSpec, Standardizer, fit_krr,
                          fit_learner, fit_predict_knn, predict_krr)


def brute_knn(X, Y, Q, k):
    s = Standardizer.fit(X)
    Xs, Qs = s.transform(X), s.transform(Q)
    out = []
    for q in Qs:
        dist = np.sqrt(((Xs - q) ** 2).sum(axis=1))
        radius = np.sort(dist)[min(k, len(Y)) - 1]
        out.append(Y[dist <= radius].mean())
    return np.array(out)


class TestSpec:
    def test_defaults(self):
        spec = LearnerSpec()
        assert (spec.kind, spec.c_lambda, spec.alpha, spec.k) == ("krr", 0.01, 0.5, 15)

    @pytest.mark.parametrize("kwargs", [
        {"kind": "rf"}, {"kind": "krr", "c_lambda": 0}, {"kind": "krr", "alpha": 0},
        {"kind": "krr", "alpha": 1.5}, {"kind": "knn", "k": 0}, {"kind": "knn", "k": 2.5},
        {"kind": "external"},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            LearnerSpec(**kwargs)

    def test_dict_round_trip(self):
        for spec in (LearnerSpec("krr", lengthscale=2.0), LearnerSpec("knn", k=3),
                     LearnerSpec("external", predictions_path="p.csv")):
            assert LearnerSpec.from_dict(spec.to_dict()) == spec
        assert LearnerSpec.from_dict("knn") == LearnerSpec("knn")
        with pytest.raises(ValueError):
            LearnerSpec.from_dict({"kind": "knn", "neighbours": 3})


class TestStandardizer:
    def test_ddof_and_zero_variance(self):
        X = np.array([[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]])
        s = Standardizer.fit(X)
        np.testing.assert_allclose(s.mean, [3.0, 5.0])
        np.testing.assert_allclose(s.scale, [2.0, 1.0])
        np.testing.assert_allclose(s.transform(X)[:, 1], 0.0)


class TestKRR:
    def test_hyperparameters(self, rng):
        model = fit_krr(rng.normal(size=(100, 10)), rng.normal(size=100))
        assert model.lengthscale == pytest.approx(math.sqrt(20))
        assert model.ridge == pytest.approx(0.001)
        assert model.w.sum() == pytest.approx(1.0, abs=1e-12)

    def test_matches_dense_formula(self, rng):
        X = rng.normal(size=(40, 3))
        Y = np.sin(X[:, 0]) + rng.normal(size=40)
        Q = rng.normal(size=(7, 3))
        model = fit_krr(X, Y)
        s = Standardizer.fit(X)
        Xs, Qs = s.transform(X), s.transform(Q)
        ell = math.sqrt(6)
        K = np.exp(-((Xs[:, None, :] - Xs[None, :, :]) ** 2).sum(-1) / (2 * ell**2))
        A = K + 40 * 0.01 * 40 ** -0.5 * np.eye(40)
        Ainv = np.linalg.inv(A)
        one = np.ones(40)
        w = Ainv @ one / (one @ Ainv @ one)
        kq = np.exp(-((Qs[:, None, :] - Xs[None, :, :]) ** 2).sum(-1) / (2 * ell**2))
        expected = kq @ Ainv @ (np.eye(40) - np.outer(one, w)) @ Y + w @ Y
        np.testing.assert_allclose(model.predict(Q), expected, rtol=1e-9, atol=1e-10)

    def test_constant_target(self):
        X = np.array([[0.0], [1.0], [3.0]])
        model = fit_krr(X, np.full(3, 4.25))
        np.testing.assert_allclose(model.predict(np.array([[-5.0], [0.5], [9.0]])), 4.25, rtol=1e-13)

    def test_noiseless_linear_target(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(200, 2))
        Y = 1.0 + 2.0 * X[:, 0] - X[:, 1]
        model = fit_krr(X, Y, LearnerSpec("krr", c_lambda=1e-6))
        assert np.max(np.abs(model.predict(X[:10]) - Y[:10])) < 0.05

    def test_translation_equivariance(self, rng):
        X, Y = rng.normal(size=(50, 4)), rng.normal(size=50)
        Q = rng.normal(size=(9, 4))
        np.testing.assert_allclose(fit_krr(X, Y + 7.5).predict(Q), fit_krr(X, Y).predict(Q) + 7.5,
                                   atol=1e-10)

    def test_standardization_idempotent(self, rng):
        X = rng.normal(loc=3.0, scale=5.0, size=(60, 3))
        Y, Q = rng.normal(size=60), rng.normal(loc=3.0, scale=5.0, size=(5, 3))
        s = Standardizer.fit(X)
        raw = fit_krr(X, Y).predict(Q)
        pre = fit_krr(s.transform(X), Y).predict(s.transform(Q))
        np.testing.assert_allclose(raw, pre, atol=1e-10)

    def test_hat_trace_bounds(self, rng):
        model = fit_krr(rng.normal(size=(30, 2)), rng.normal(size=30))
        df = model.hat_trace()
        assert 1.0 <= df <= 30.0

    def test_errors(self, rng):
        with pytest.raises(LearnerError):
            fit_krr(np.zeros((1, 2)), [1.0])
        model = fit_krr(rng.normal(size=(10, 2)), rng.normal(size=10))
        with pytest.raises(ValueError):
            predict_krr(model, np.zeros((3, 3)))
        assert predict_krr(model, np.zeros((0, 2))).shape == (0,)
        with pytest.raises(ValueError):
            fit_krr(np.full((3, 1), np.nan), [1.0, 2.0, 3.0])


class TestKNN:
    def test_examples(self):
        X = np.array([[0.0], [10.0]])
        Y = np.array([1.0, 3.0])
        assert fit_predict_knn(X, Y, [[0.1]], LearnerSpec("knn", k=1))[0] == 1.0
        assert fit_predict_knn(X, Y, [[0.1]], LearnerSpec("knn", k=2))[0] == 2.0

    def test_k_clipped_to_n(self, rng):
        X, Y = rng.normal(size=(10, 2)), rng.normal(size=10)
        out = fit_predict_knn(X, Y, rng.normal(size=(4, 2)), LearnerSpec("knn", k=15))
        np.testing.assert_allclose(out, Y.mean(), rtol=1e-14)

    def test_inclusive_ties(self):
        X = np.array([[-1.0], [1.0], [5.0], [-5.0]])
        Y = np.array([0.0, 6.0, 30.0, 30.0])
        # both points at distance 1 from the origin share the k=1 radius
        assert fit_predict_knn(X, Y, [[0.0]], LearnerSpec("knn", k=1))[0] == 3.0

    def test_matches_brute_force(self, rng, backend):
        X = rng.normal(size=(300, 5))
        X[:40] = np.round(X[:40], 1)
        Y = rng.normal(size=300)
        Q = np.vstack([rng.normal(size=(200, 5)), X[:20]])
        for k in (1, 3, 15):
            got = fit_predict_knn(X, Y, Q, LearnerSpec("knn", k=k), backend=backend)
            np.testing.assert_allclose(got, brute_knn(X, Y, Q, k), rtol=1e-13, atol=1e-15)

    def test_translation_equivariance(self, rng):
        X, Y, Q = rng.normal(size=(40, 3)), rng.normal(size=40), rng.normal(size=(6, 3))
        spec = LearnerSpec("knn", k=4)
        np.testing.assert_allclose(fit_predict_knn(X, Y + 3.0, Q, spec),
                                   fit_predict_knn(X, Y, Q, spec) + 3.0, atol=1e-10)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            fit_predict_knn(rng.normal(size=(5, 2)), np.ones(5), np.zeros((1, 3)))

    def test_fit_learner_dispatch(self, rng):
        X, Y = rng.normal(size=(20, 2)), rng.normal(size=20)
        assert isinstance(fit_learner(LearnerSpec("krr"), X, Y), FittedKRR)
        assert fit_learner(LearnerSpec("knn", k=2), X, Y).predict(X[:3]).shape == (3,)
        with pytest.raises(LearnerError):
            fit_learner(LearnerSpec("external", predictions_path="x.csv"), X, Y)
