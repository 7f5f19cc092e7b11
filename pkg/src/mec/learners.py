"""Built-in prediction rules: Gaussian kernel ridge regression and kNN.

Both standardise covariates with training means and standard deviations
(``ddof=1``; zero-variance columns keep scale 1) and apply the same
transformation at prediction time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import linalg

from . import _backend

LEARNER_KINDS = ("krr", "knn", "external")


class LearnerError(RuntimeError):
    """Training or prediction failed."""


@dataclass(frozen=True)
class LearnerSpec:
    """Learner configuration.

    ``krr`` uses ``c_lambda``, ``alpha`` (ridge ``c_lambda * n**-alpha``) and
    an optional fixed ``lengthscale`` (default ``sqrt(2 d)``); ``knn`` uses
    ``k``; ``external`` reads predictions from ``predictions_path``.
    """

    kind: str = "krr"
    c_lambda: float = 0.01
    alpha: float = 0.5
    lengthscale: Optional[float] = None
    k: int = 15
    predictions_path: Optional[str] = None

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in LEARNER_KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}; expected one of {LEARNER_KINDS}")
        object.__setattr__(self, "kind", kind)
        if kind == "krr":
            if not self.c_lambda > 0:
                raise ValueError("krr c_lambda must be positive")
            if not 0 < self.alpha <= 1:
                raise ValueError("krr alpha must lie in (0, 1]")
            if self.lengthscale is not None and not self.lengthscale > 0:
                raise ValueError("krr lengthscale must be positive")
        elif kind == "knn":
            if int(self.k) != self.k or self.k < 1:
                raise ValueError("knn k must be a positive integer")
            object.__setattr__(self, "k", int(self.k))
        elif kind == "external" and not self.predictions_path:
            raise ValueError("the external learner needs predictions_path")

    @property
    def tag(self) -> str:
        return self.kind

    def to_dict(self) -> dict:
        if self.kind == "krr":
            return {"kind": "krr", "c_lambda": self.c_lambda, "alpha": self.alpha,
                    "lengthscale": self.lengthscale}
        if self.kind == "knn":
            return {"kind": "knn", "k": self.k}
        return {"kind": "external", "predictions_path": self.predictions_path}

    @classmethod
    def from_dict(cls, data) -> "LearnerSpec":
        if isinstance(data, LearnerSpec):
            return data
        if isinstance(data, str):
            return cls(kind=data)
        allowed = {"kind", "c_lambda", "alpha", "lengthscale", "k", "predictions_path"}
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown learner fields: {sorted(unknown)}")
        return cls(**data)

    def with_overrides(self, **kwargs) -> "LearnerSpec":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        mean = X.mean(axis=0)
        if X.shape[0] > 1:
            scale = X.std(axis=0, ddof=1)
        else:
            scale = np.ones(X.shape[1])
        scale = np.where(scale > 0, scale, 1.0)
        return cls(mean, scale)

    def transform(self, X: np.ndarray) -> np.ndarray:
        if X.shape[1] != self.mean.shape[0]:
            raise ValueError(f"expected {self.mean.shape[0]} columns, got {X.shape[1]}")
        return np.ascontiguousarray((X - self.mean) / self.scale)


def _as_matrix(X, name="X") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def _sq_dists(A, B):
    aa = np.einsum("ij,ij->i", A, A)
    bb = np.einsum("ij,ij->i", B, B)
    sq = aa[:, None] + bb[None, :] - 2.0 * (A @ B.T)
    return np.maximum(sq, 0.0)


def gaussian_kernel(A, B, lengthscale):
    return np.exp(-_sq_dists(A, B) / (2.0 * lengthscale**2))


@dataclass(frozen=True)
class FittedKRR:
    """Kernel ridge fit with an unpenalised intercept.

    Predictions are ``k(x) @ coef + intercept`` with
    ``coef = A^{-1} (I - 1 w^T) Y``, ``intercept = w^T Y``,
    ``A = K + n ridge I`` and ``w = A^{-1} 1 / (1^T A^{-1} 1)``.
    """

    X_train: np.ndarray
    coef: np.ndarray
    w: np.ndarray
    intercept: float
    lengthscale: float
    ridge: float
    scaler: Standardizer
    _chol: tuple = field(repr=False)

    def predict(self, X_new) -> np.ndarray:
        return predict_krr(self, X_new)

    def hat_trace(self) -> float:
        """Degrees of freedom ``tr(H)``, ``H = K A^{-1}(I - 1 w^T) + 1 w^T``."""
        n = self.X_train.shape[0]
        K = gaussian_kernel(self.X_train, self.X_train, self.lengthscale)
        Ainv = linalg.cho_solve(self._chol, np.eye(n))
        H = K @ Ainv @ (np.eye(n) - np.outer(np.ones(n), self.w)) + np.outer(np.ones(n), self.w)
        return float(np.trace(H))


def fit_krr(X, Y, spec: Optional[LearnerSpec] = None) -> FittedKRR:
    spec = spec or LearnerSpec("krr")
    X = _as_matrix(X)
    Y = np.asarray(Y, dtype=np.float64).reshape(-1)
    n, d = X.shape
    if n < 2:
        raise LearnerError(f"kernel ridge needs at least 2 training points, got {n}")
    if Y.shape[0] != n:
        raise ValueError("X and Y have different lengths")
    scaler = Standardizer.fit(X)
    Xs = scaler.transform(X)
    lengthscale = spec.lengthscale if spec.lengthscale is not None else math.sqrt(2.0 * d)
    ridge = spec.c_lambda * n ** (-spec.alpha)
    A = gaussian_kernel(Xs, Xs, lengthscale)
    A[np.diag_indices(n)] += n * ridge
    try:
        chol = linalg.cho_factor(A, lower=True)
    except linalg.LinAlgError as exc:
        raise LearnerError(f"kernel ridge system is not positive definite: {exc}") from exc
    ones = np.ones(n)
    a_inv_one = linalg.cho_solve(chol, ones)
    w = a_inv_one / a_inv_one.sum()
    intercept = float(w @ Y)
    coef = linalg.cho_solve(chol, Y - intercept)
    return FittedKRR(Xs, coef, w, intercept, lengthscale, ridge, scaler, chol)


def predict_krr(model: FittedKRR, X_new) -> np.ndarray:
    X_new = np.asarray(X_new, dtype=np.float64)
    if X_new.ndim == 1:
        X_new = X_new.reshape(-1, model.X_train.shape[1]) if X_new.size else X_new.reshape(0, model.X_train.shape[1])
    if X_new.shape[1] != model.X_train.shape[1]:
        raise ValueError(f"expected {model.X_train.shape[1]} columns, got {X_new.shape[1]}")
    if X_new.shape[0] == 0:
        return np.empty(0)
    Xs = model.scaler.transform(X_new)
    return gaussian_kernel(Xs, model.X_train, model.lengthscale) @ model.coef + model.intercept


def fit_predict_knn(X, Y, X_new, spec: Optional[LearnerSpec] = None, backend=None) -> np.ndarray:
    """Uniform average of ``Y`` over the ``k`` nearest training points.

    Every training point at distance equal to the k-th smallest is
    included, so ties at the radius enlarge the neighbourhood.
    """
    spec = spec or LearnerSpec("knn")
    X = _as_matrix(X)
    Y = np.ascontiguousarray(Y, dtype=np.float64).reshape(-1)
    X_new = np.asarray(X_new, dtype=np.float64)
    if X_new.ndim == 1:
        X_new = X_new.reshape(-1, X.shape[1])
    if X.shape[0] < 1:
        raise LearnerError("kNN needs at least one training point")
    if X_new.shape[1] != X.shape[1]:
        raise ValueError(f"expected {X.shape[1]} columns, got {X_new.shape[1]}")
    if X_new.shape[0] == 0:
        return np.empty(0)
    scaler = Standardizer.fit(X)
    kernels = _backend.get_kernels(backend)
    return kernels.knn_average(scaler.transform(X), Y, scaler.transform(X_new), min(spec.k, X.shape[0]))


class _KNNModel:
    def __init__(self, X, Y, spec):
        self.X, self.Y, self.spec = X, Y, spec

    def predict(self, X_new):
        return fit_predict_knn(self.X, self.Y, X_new, self.spec)


def fit_learner(spec: LearnerSpec, X, Y):
    """Fit ``spec`` on ``(X, Y)``; the result has a ``predict`` method."""
    if spec.kind == "krr":
        return fit_krr(X, Y, spec)
    if spec.kind == "knn":
        X = _as_matrix(X)
        if X.shape[0] < 1:
            raise LearnerError("kNN needs at least one training point")
        return _KNNModel(X, np.asarray(Y, dtype=np.float64), spec)
    raise LearnerError("the external learner has no training step; load its predictions instead")
