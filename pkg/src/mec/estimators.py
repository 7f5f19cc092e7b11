"""Point estimators and Wald intervals for the semi-supervised mean.

Population convention: the frame has ``N = n + N_u`` units. Sums "over all
N units" concatenate the labeled and unlabeled covariates; under
cross-fitting, labeled units are scored by their out-of-fold predictor and
unlabeled units by the fold-averaged predictor. All empirical variances use
the unbiased divisor.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import calibration
from ._fmt import fmt
from .bregman import as_generator
from .crossfit import PredictionSet, full_fit_predict
from .learners import LearnerSpec

METHODS = ("classical", "ppi", "cfppi", "mec", "greg", "oracle")
INNER_TOLERANCE_FACTOR = 1e-2

# rational approximation of the standard normal quantile (Acklam),
# relative error below 1.15e-9 over (0, 1)
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    if p > 1.0 - _P_LOW:
        return -_acklam(1.0 - p)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
        ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)


def normal_quantile(p: float) -> float:
    """Standard normal quantile ``Phi^{-1}(p)`` for ``0 < p < 1``.

    Rational approximation followed by one Halley correction.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    if p > 0.5:
        # 1 - p is exact here; refining in the lower tail avoids cancellation
        return -normal_quantile(1.0 - p)
    x = _acklam(p)
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def z_critical(alpha: float) -> float:
    """Two-sided critical value ``z_{1 - alpha/2}``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return normal_quantile(1.0 - alpha / 2.0)


@dataclass(frozen=True)
class Dataset:
    """Labeled pairs plus unlabeled covariates; ``N = n + N_u``."""

    labeled_X: np.ndarray
    labeled_Y: np.ndarray
    unlabeled_X: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.labeled_X, dtype=np.float64)
        Y = np.asarray(self.labeled_Y, dtype=np.float64).reshape(-1)
        U = np.asarray(self.unlabeled_X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if U.ndim == 1:
            U = U.reshape(-1, X.shape[1])
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"{X.shape[0]} labeled covariate rows but {Y.shape[0]} outcomes")
        if X.shape[0] < 2:
            raise ValueError("need at least two labeled units")
        if U.shape[0] < 1:
            raise ValueError("need at least one unlabeled unit")
        if U.shape[1] != X.shape[1]:
            raise ValueError(f"labeled data has {X.shape[1]} covariates, unlabeled has {U.shape[1]}")
        for name, arr in (("labeled_X", X), ("labeled_Y", Y), ("unlabeled_X", U)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        object.__setattr__(self, "labeled_X", X)
        object.__setattr__(self, "labeled_Y", Y)
        object.__setattr__(self, "unlabeled_X", U)

    @property
    def n(self) -> int:
        return self.labeled_X.shape[0]

    @property
    def N_u(self) -> int:
        return self.unlabeled_X.shape[0]

    @property
    def N(self) -> int:
        return self.n + self.N_u

    @property
    def f(self) -> float:
        return self.n / self.N

    @property
    def d(self) -> int:
        return self.labeled_X.shape[1]


@dataclass
class EstimateReport:
    method: str
    theta_hat: float
    se: float
    alpha: float
    ci_lower: float = field(init=False)
    ci_upper: float = field(init=False)
    n: int = 0
    N: int = 0
    K: int = 0
    learner: str = "none"
    generator: str = "none"
    diagnostics: dict = field(default_factory=dict)
    weights: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        half = z_critical(self.alpha) * self.se
        self.ci_lower = self.theta_hat - half
        self.ci_upper = self.theta_hat + half

    @property
    def width(self) -> float:
        return self.ci_upper - self.ci_lower

    @property
    def f(self) -> float:
        return self.n / self.N if self.N else math.nan

    def covers(self, value: float) -> bool:
        return self.ci_lower <= value <= self.ci_upper

    CSV_FIELDS = ("method", "generator", "theta_hat", "se", "ci_lower", "ci_upper",
                  "n", "N", "f", "K", "learner")

    def csv_row(self) -> list[str]:
        return [self.method, self.generator, fmt(self.theta_hat), fmt(self.se),
                fmt(self.ci_lower), fmt(self.ci_upper), str(self.n), str(self.N),
                fmt(self.f), str(self.K), self.learner]

    def to_dict(self) -> dict:
        out = {name: getattr(self, name) for name in self.CSV_FIELDS}
        out["alpha"] = self.alpha
        out["diagnostics"] = self.diagnostics
        return out

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True)

    def __str__(self) -> str:
        level = fmt(100 * (1 - self.alpha))
        label = self.method if self.learner == "none" else f"{self.method} [{self.learner}]"
        if self.generator != "none":
            label += f" ({self.generator})"
        return (f"{label}: theta_hat = {fmt(self.theta_hat)}, se = {fmt(self.se)}, "
                f"{level}% CI [{fmt(self.ci_lower)}, {fmt(self.ci_upper)}]")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(fmt(obj)) if math.isfinite(obj) else fmt(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _var(x: np.ndarray) -> float:
    return float(np.var(x, ddof=1)) if x.shape[0] > 1 else 0.0


def _ppi_point(m_all: np.ndarray, Y: np.ndarray, m_S: np.ndarray) -> float:
    # plug-in mean over the frame plus the labeled rectifier
    return float(np.mean(m_all) + np.mean(Y - m_S))


def _ppi_se(m_all, Y, m_S) -> float:
    return math.sqrt(_var(m_all) / m_all.shape[0] + _var(Y - m_S) / Y.shape[0])


def _check_alignment(data: Dataset, preds: PredictionSet):
    if preds.labeled_oof.shape[0] != data.n or preds.unlabeled_agg.shape[0] != data.N_u:
        raise ValueError(
            f"predictions cover {preds.labeled_oof.shape[0]} labeled / "
            f"{preds.unlabeled_agg.shape[0]} unlabeled units, data has {data.n} / {data.N_u}"
        )


def classical_mean(Y, alpha: float = 0.05) -> EstimateReport:
    """Label-only sample mean with ``sd / sqrt(n)``."""
    Y = np.asarray(Y, dtype=np.float64).reshape(-1)
    if Y.shape[0] < 2:
        raise ValueError("the classical estimator needs at least two labels")
    n = Y.shape[0]
    return EstimateReport("classical", float(np.mean(Y)), math.sqrt(_var(Y) / n), alpha, n=n, N=n)


def ppi_vanilla(data: Dataset, learner: LearnerSpec, alpha: float = 0.05) -> EstimateReport:
    """PPI with a single predictor fit on all labels (labels are reused)."""
    m_S, m_U = full_fit_predict(data, learner)
    return ppi_from_predictions(data, m_S, m_U, alpha, method="ppi", learner=learner.tag)


def ppi_from_predictions(data: Dataset, m_S, m_U, alpha: float = 0.05, method: str = "ppi",
                         learner: str = "none", K: int = 0) -> EstimateReport:
    m_S = np.asarray(m_S, dtype=np.float64)
    m_U = np.asarray(m_U, dtype=np.float64)
    m_all = np.concatenate([m_S, m_U])
    Y = data.labeled_Y
    return EstimateReport(method, _ppi_point(m_all, Y, m_S), _ppi_se(m_all, Y, m_S), alpha,
                          n=data.n, N=data.N, K=K, learner=learner)


def ppi_crossfit(data: Dataset, preds: PredictionSet, alpha: float = 0.05) -> EstimateReport:
    """Cross-fitted PPI using the out-of-fold predictor."""
    _check_alignment(data, preds)
    return ppi_from_predictions(data, preds.labeled_oof, preds.unlabeled_agg, alpha,
                                method="cfppi", learner=preds.learner_tag, K=preds.K)


def ppi_oracle(data: Dataset, m0_labeled, m0_unlabeled, alpha: float = 0.05) -> EstimateReport:
    """PPI with the true regression function; the efficiency reference."""
    m0_labeled = np.asarray(m0_labeled, dtype=np.float64)
    m0_unlabeled = np.asarray(m0_unlabeled, dtype=np.float64)
    if m0_labeled.shape != (data.n,) or m0_unlabeled.shape != (data.N_u,):
        raise ValueError("oracle regression values are not aligned with the data")
    return ppi_from_predictions(data, m0_labeled, m0_unlabeled, alpha, method="oracle")


@dataclass(frozen=True)
class GregFit:
    beta0: float
    beta1: float
    q: np.ndarray
    degenerate: bool = False


def greg_fit(Y, m_S, gen, d) -> GregFit:
    """Weighted least squares of ``Y`` on ``(1, m_S)`` with ``q_j = 1/g'(d_j)``.

    Solved in centred form: ``beta1 = sum q (m - m_q)(Y - Y_q) / sum q (m - m_q)^2``.
    A predictor without spread on the labeled set gives ``beta1 = 0``.
    """
    Y = np.asarray(Y, dtype=np.float64)
    m_S = np.asarray(m_S, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if Y.shape[0] < 2:
        raise ValueError("GREG needs at least two labels")
    q = 1.0 / as_generator(gen).g_prime(d)
    qsum = q.sum()
    y_bar = float(q @ Y / qsum)
    m_bar = float(q @ m_S / qsum)
    mc = m_S - m_bar
    sxx = float(q @ (mc * mc))
    scale = max(1.0, float(np.max(np.abs(m_S))))
    if sxx <= (1e-12 * scale) ** 2 * qsum:
        return GregFit(y_bar, 0.0, q, degenerate=True)
    beta1 = float(q @ (mc * (Y - y_bar)) / sxx)
    return GregFit(y_bar - beta1 * m_bar, beta1, q)


def _mec_se(data: Dataset, preds: PredictionSet, beta1: float) -> float:
    Y = data.labeled_Y
    return math.sqrt(_var(beta1 * preds.unlabeled_agg) / data.N
                     + _var(Y - beta1 * preds.labeled_oof) / data.n)


def greg_estimate(data: Dataset, preds: PredictionSet, gen="quadratic",
                  alpha: float = 0.05) -> EstimateReport:
    """Regression form: ``mean_N(beta1 m) + mean_n(Y - beta1 m_S)``."""
    _check_alignment(data, preds)
    gen = as_generator(gen)
    d = np.full(data.n, data.N / data.n)
    fit = greg_fit(data.labeled_Y, preds.labeled_oof, gen, d)
    m_all = preds.all_units
    theta = float(np.mean(fit.beta1 * m_all) + np.mean(data.labeled_Y - fit.beta1 * preds.labeled_oof))
    return EstimateReport("greg", theta, _mec_se(data, preds, fit.beta1), alpha, n=data.n,
                          N=data.N, K=preds.K, learner=preds.learner_tag, generator=str(gen),
                          diagnostics={"beta0": fit.beta0, "beta1": fit.beta1,
                                       "degenerate_slope": fit.degenerate})


def mec(data: Dataset, preds: PredictionSet, gen="quadratic", alpha: float = 0.05,
        tolerance: float = 1e-10, max_iter: int = 100, backend: Optional[str] = None) -> EstimateReport:
    """Calibration-weighted estimator ``N^{-1} sum_j omega_j Y_j``.

    The weights are the Bregman projection of ``d = N/n`` onto
    ``sum omega = N``, ``sum omega m_S = sum over all N units of m``. When
    the predictor is constant on the labeled set the basis collapses to
    the intercept, the weights stay at ``d``, and the cross-fitted PPI
    value is returned (``diagnostics["intercept_only"]`` is set).

    Raises
    ------
    calibration.CalibrationError
        The weight solver failed or did not converge.
    """
    _check_alignment(data, preds)
    gen = as_generator(gen)
    n, N = data.n, data.N
    Y = data.labeled_Y
    m_S = preds.labeled_oof
    m_all = preds.all_units
    Z = np.column_stack([np.ones(n), m_S])
    mu = np.array([float(N), float(np.sum(m_all))])
    d = np.full(n, N / n)
    prob = calibration.CalibrationProblem(Z, mu, d, gen)
    # Newton converges quadratically, so solving two orders below the
    # acceptance tolerance costs about one step and keeps sum(omega) = N and
    # the affine invariance of theta exact to rounding.
    sol = calibration.solve(prob, tolerance=tolerance * INNER_TOLERANCE_FACTOR,
                            max_iter=max_iter, backend=backend)
    accept = tolerance * max(1.0, float(np.linalg.norm(mu)))
    if sol.residual_norm > accept:
        raise calibration.CalibrationError(
            f"calibration did not converge in {sol.iterations} iterations "
            f"(residual {sol.residual_norm:.3e}, tolerance {accept:.3e})")
    intercept_only = sol.reduced
    if intercept_only:
        warnings.warn("predictor basis is collinear with the intercept; MEC reduces to CF-PPI",
                      RuntimeWarning, stacklevel=2)
        theta = _ppi_point(m_all, Y, m_S)
    else:
        theta = float(sol.omega @ Y / N)
    fit = greg_fit(Y, m_S, gen, d)
    greg_theta = float(np.mean(fit.beta1 * m_all) + np.mean(Y - fit.beta1 * m_S))
    diag = {
        "lambda": sol.lam.tolist(),
        "iterations": sol.iterations,
        "residual_norm": sol.residual_norm,
        "divergence": sol.objective,
        "omega_min": float(sol.omega.min()),
        "omega_max": float(sol.omega.max()),
        "n_negative_weights": sol.n_negative,
        "beta0": fit.beta0,
        "beta1": fit.beta1,
        "greg_theta": greg_theta,
        "intercept_only": intercept_only,
    }
    return EstimateReport("mec", theta, _mec_se(data, preds, fit.beta1), alpha, n=n, N=N,
                          K=preds.K, learner=preds.learner_tag, generator=str(gen),
                          diagnostics=diag, weights=sol.omega)
