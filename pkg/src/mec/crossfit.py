"""K-fold cross-prediction: out-of-fold labeled predictions and the
fold-averaged predictor for unlabeled units."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .learners import LearnerError, LearnerSpec, fit_learner

DEFAULT_FOLDS = 5


@dataclass(frozen=True)
class FoldAssignment:
    """``kappa[j]`` is the fold (1..K) of labeled unit ``j``."""

    kappa: np.ndarray
    K: int
    seed: int

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.kappa == k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.kappa, minlength=self.K + 1)[1:]


def assign_folds(n: int, K: int = DEFAULT_FOLDS, seed: int = 0) -> FoldAssignment:
    """Shuffle ``0..n-1`` with a seeded permutation and cut it into ``K``
    near-equal folds (earlier folds take the extra units)."""
    if not (isinstance(n, (int, np.integer)) and isinstance(K, (int, np.integer))):
        raise TypeError("n and K must be integers")
    if K < 2 or K > n:
        raise ValueError(f"fold count must satisfy 2 <= K <= n, got K={K}, n={n}")
    order = np.random.default_rng(seed).permutation(n)
    kappa = np.empty(n, dtype=np.int64)
    for k, chunk in enumerate(np.array_split(order, K), start=1):
        kappa[chunk] = k
    return FoldAssignment(kappa, int(K), int(seed))


@dataclass(frozen=True)
class PredictionSet:
    """Out-of-fold predictions on labeled units and aggregate predictions
    on unlabeled units."""

    labeled_oof: np.ndarray
    unlabeled_agg: np.ndarray
    K: int
    learner_tag: str

    def __post_init__(self):
        lab = np.asarray(self.labeled_oof, dtype=np.float64).reshape(-1)
        unl = np.asarray(self.unlabeled_agg, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(lab)) and np.all(np.isfinite(unl))):
            raise ValueError("predictions must be finite")
        object.__setattr__(self, "labeled_oof", lab)
        object.__setattr__(self, "unlabeled_agg", unl)

    @property
    def all_units(self) -> np.ndarray:
        """Predictions over the whole frame, labeled units first."""
        return np.concatenate([self.labeled_oof, self.unlabeled_agg])

    def to_csv(self, path) -> None:
        write_predictions_csv(path, self)


def cross_predict(data, folds: FoldAssignment, learner: LearnerSpec) -> PredictionSet:
    """Fit one model per fold on the other folds' labels.

    ``labeled_oof[j]`` comes from the model that excluded unit ``j``'s
    fold; ``unlabeled_agg`` averages the K models' predictions.
    """
    if learner.kind == "external":
        return read_predictions_csv(learner.predictions_path, data.n, data.N_u, K=folds.K)
    if folds.kappa.shape[0] != data.n:
        raise ValueError("fold assignment does not match the labeled sample size")
    X, Y, U = data.labeled_X, data.labeled_Y, data.unlabeled_X
    oof = np.empty(data.n)
    agg = np.zeros(data.N_u)
    for k in range(1, folds.K + 1):
        held = folds.kappa == k
        try:
            model = fit_learner(learner, X[~held], Y[~held])
            oof[held] = model.predict(X[held])
            agg += model.predict(U)
        except (LearnerError, ValueError, np.linalg.LinAlgError) as exc:
            raise LearnerError(f"fold {k}: {exc}") from exc
    agg /= folds.K
    return PredictionSet(oof, agg, folds.K, learner.tag)


def full_fit_predict(data, learner: LearnerSpec) -> tuple[np.ndarray, np.ndarray]:
    """Single fit on all labels; predictions on labeled and unlabeled units."""
    if learner.kind == "external":
        preds = read_predictions_csv(learner.predictions_path, data.n, data.N_u)
        return preds.labeled_oof, preds.unlabeled_agg
    model = fit_learner(learner, data.labeled_X, data.labeled_Y)
    return model.predict(data.labeled_X), model.predict(data.unlabeled_X)


# -- prediction files -------------------------------------------------------

_SETS = ("labeled", "unlabeled")


def write_predictions_csv(path, preds: PredictionSet) -> None:
    from ._fmt import fmt

    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["unit_id", "set", "prediction"])
        for j, v in enumerate(preds.labeled_oof):
            out.writerow([j, "labeled", fmt(v)])
        for i, v in enumerate(preds.unlabeled_agg):
            out.writerow([i, "unlabeled", fmt(v)])


def read_predictions_csv(path, n: int | None = None, N_u: int | None = None, K: int = 0,
                         learner_tag: str = "external") -> PredictionSet:
    """Read a ``unit_id,set,prediction`` file.

    ``unit_id`` is the 0-based row index of the unit within its own input
    file. Every unit of each set must appear exactly once.
    """
    rows = {"labeled": {}, "unlabeled": {}}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"unit_id", "set", "prediction"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            which = row["set"].strip().lower()
            if which not in _SETS:
                raise ValueError(f"{path}:{lineno}: set must be 'labeled' or 'unlabeled', got {row['set']!r}")
            try:
                uid = int(row["unit_id"])
                value = float(row["prediction"])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric unit_id or prediction") from None
            if uid in rows[which]:
                raise ValueError(f"{path}:{lineno}: duplicate {which} unit_id {uid}")
            rows[which][uid] = value
    arrays = []
    for which, expected in zip(_SETS, (n, N_u)):
        ids = rows[which]
        count = len(ids) if expected is None else expected
        if sorted(ids) != list(range(count)):
            raise ValueError(f"{Path(path).name}: {which} unit_ids must be exactly 0..{count - 1}")
        arrays.append(np.array([ids[i] for i in range(count)], dtype=np.float64))
    return PredictionSet(arrays[0], arrays[1], K, learner_tag)
