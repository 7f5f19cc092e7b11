import numpy as np
import pytest

from mec.crossfit import (PredictionSet, assign_folds, cross_predict, full_fit_predict,
                          read_predictions_csv, write_predictions_csv)
from mec.estimators import Dataset
from mec.learners import LearnerError, LearnerSpec, fit_learner


def make_data(rng, n=40, N_u=60, d=3):
    X = rng.normal(size=(n, d))
    return Dataset(X, X[:, 0] ** 2 + rng.normal(size=n), rng.normal(size=(N_u, d)))


class TestFolds:
    def test_balance(self):
        assert sorted(assign_folds(4, 2, seed=11).sizes()) == [2, 2]
        assert sorted(assign_folds(5, 2, seed=3).sizes()) == [2, 3]
        for n, K in [(17, 5), (100, 10), (9, 9)]:
            f = assign_folds(n, K, seed=1)
            assert f.sizes().max() - f.sizes().min() <= 1
            assert sorted(np.concatenate([f.members(k) for k in range(1, K + 1)])) == list(range(n))

    def test_deterministic(self):
        a, b = assign_folds(50, 5, seed=7), assign_folds(50, 5, seed=7)
        np.testing.assert_array_equal(a.kappa, b.kappa)
        assert not np.array_equal(a.kappa, assign_folds(50, 5, seed=8).kappa)

    @pytest.mark.parametrize("n,K", [(10, 1), (3, 4), (5, 0)])
    def test_rejects(self, n, K):
        with pytest.raises(ValueError):
            assign_folds(n, K)


class TestCrossPredict:
    @pytest.mark.parametrize("kind", ["krr", "knn"])
    def test_no_leakage(self, rng, kind):
        data = make_data(rng)
        folds = assign_folds(data.n, 5, seed=2)
        base = cross_predict(data, folds, LearnerSpec(kind, k=3)).labeled_oof
        for j in (0, 7, 23):
            Y = data.labeled_Y.copy()
            Y[j] += 1000.0
            moved = Dataset(data.labeled_X, Y, data.unlabeled_X)
            again = cross_predict(moved, folds, LearnerSpec(kind, k=3)).labeled_oof
            assert again[j] == base[j]
            same_fold = folds.kappa == folds.kappa[j]
            np.testing.assert_array_equal(again[same_fold], base[same_fold])

    def test_deterministic(self, rng):
        data = make_data(rng)
        folds = assign_folds(data.n, 5, seed=2)
        a = cross_predict(data, folds, LearnerSpec("krr"))
        b = cross_predict(data, folds, LearnerSpec("krr"))
        np.testing.assert_array_equal(a.labeled_oof, b.labeled_oof)
        np.testing.assert_array_equal(a.unlabeled_agg, b.unlabeled_agg)

    def test_aggregate_is_fold_average(self, rng):
        data = make_data(rng)
        folds = assign_folds(data.n, 4, seed=5)
        preds = cross_predict(data, folds, LearnerSpec("krr"))
        per_fold = [fit_learner(LearnerSpec("krr"), data.labeled_X[folds.kappa != k],
                                data.labeled_Y[folds.kappa != k]).predict(data.unlabeled_X)
                    for k in range(1, 5)]
        np.testing.assert_allclose(preds.unlabeled_agg, np.mean(per_fold, axis=0), atol=1e-12)

    def test_constant_outcome(self, rng):
        data = make_data(rng)
        data = Dataset(data.labeled_X, np.full(data.n, 2.5), data.unlabeled_X)
        preds = cross_predict(data, assign_folds(data.n, 5), LearnerSpec("krr"))
        np.testing.assert_allclose(preds.labeled_oof, 2.5, rtol=1e-12)
        np.testing.assert_allclose(preds.unlabeled_agg, 2.5, rtol=1e-12)

    def test_leave_one_out_1nn(self, rng):
        X = rng.normal(size=(12, 1))
        Y = rng.normal(size=12)
        data = Dataset(X, Y, rng.normal(size=(3, 1)))
        preds = cross_predict(data, assign_folds(12, 12, seed=0), LearnerSpec("knn", k=1))
        for j in range(12):
            dist = np.abs(X[:, 0] - X[j, 0])
            dist[j] = np.inf
            assert preds.labeled_oof[j] == Y[np.argmin(dist)]

    def test_learner_failure_names_fold(self, rng):
        data = make_data(rng, n=2)
        with pytest.raises(LearnerError, match="fold 1"):
            cross_predict(data, assign_folds(2, 2), LearnerSpec("krr"))

    def test_fold_size_mismatch(self, rng):
        data = make_data(rng)
        with pytest.raises(ValueError):
            cross_predict(data, assign_folds(10, 2), LearnerSpec("krr"))


class TestPredictionFiles:
    def test_round_trip(self, rng, tmp_path):
        preds = PredictionSet(rng.normal(size=5), rng.normal(size=7), 5, "krr")
        path = tmp_path / "p.csv"
        write_predictions_csv(path, preds)
        back = read_predictions_csv(path, 5, 7)
        np.testing.assert_allclose(back.labeled_oof, preds.labeled_oof, rtol=1e-11)
        np.testing.assert_allclose(back.unlabeled_agg, preds.unlabeled_agg, rtol=1e-11)

    def test_external_learner(self, rng, tmp_path):
        data = make_data(rng, n=5, N_u=7)
        path = tmp_path / "p.csv"
        write_predictions_csv(path, PredictionSet(np.arange(5.0), np.arange(7.0), 0, "x"))
        spec = LearnerSpec("external", predictions_path=str(path))
        preds = cross_predict(data, assign_folds(5, 5), spec)
        np.testing.assert_array_equal(preds.unlabeled_agg, np.arange(7.0))
        m_S, m_U = full_fit_predict(data, spec)
        np.testing.assert_array_equal(m_S, np.arange(5.0))

    @pytest.mark.parametrize("body,match", [
        ("unit_id,set,prediction\n0,labeled,1\n0,labeled,2\n", "duplicate"),
        ("unit_id,set,prediction\n0,training,1\n", "set must be"),
        ("unit_id,set,prediction\n0,labeled,abc\n", ":2:"),
        ("unit_id,prediction\n0,1\n", "missing columns"),
        ("unit_id,set,prediction\n0,labeled,1\n", "unlabeled unit_ids"),
    ])
    def test_bad_files(self, tmp_path, body, match):
        path = tmp_path / "p.csv"
        path.write_text(body)
        with pytest.raises(ValueError, match=match):
            read_predictions_csv(path, 1, 1)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            PredictionSet([1.0, np.nan], [1.0], 2, "x")
