"""Bregman-projection calibration weights via a damped dual Newton method.

Given labeled basis rows ``z_j`` (the matrix ``Z``), population totals
``mu`` and baseline weights ``d``, the calibrated weights minimise
``sum_j D_G(omega_j || d_j)`` subject to ``Z.T @ omega == mu``. The
stationarity condition gives ``omega_j(lam) = g^{-1}(g(d_j) + z_j @ lam)``,
and ``lam`` minimises the convex dual

    l(lam) = sum_j F(g(d_j) + z_j @ lam) - lam @ mu

whose gradient is ``Z.T @ omega(lam) - mu`` and whose Hessian is
``Z.T diag(1/g'(omega)) Z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from . import _backend
from .bregman import Generator, as_generator

IMAGE_MARGIN = 1e-12
MAX_HALVINGS = 60
RANK_TOL = 1e-10
# objective increases below this fraction of its magnitude are rounding noise
DESCENT_SLACK = 1e-13


class CalibrationError(RuntimeError):
    """Base class for solver failures."""


class InfeasibleDualError(CalibrationError):
    """Every backtracked Newton step left the image of ``g``."""


class SolverFailure(CalibrationError):
    """The Newton system could not be solved, even after ridge repair."""


@dataclass(frozen=True)
class CalibrationProblem:
    """Inputs of one calibration program.

    Parameters
    ----------
    Z : (n, p) array
        Basis evaluations on the labeled units.
    mu : (p,) array
        Population totals of the basis.
    d : (n,) array
        Baseline weights, strictly positive and inside the generator domain.
    gen : Generator or str
    """

    Z: np.ndarray
    mu: np.ndarray
    d: np.ndarray
    gen: Generator

    def __post_init__(self):
        Z = np.ascontiguousarray(np.asarray(self.Z, dtype=np.float64))
        if Z.ndim == 1:
            Z = Z[:, None]
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        d = np.asarray(self.d, dtype=np.float64).reshape(-1)
        gen = as_generator(self.gen)
        n, p = Z.shape
        if p < 1 or n < p:
            raise ValueError(f"need n >= p >= 1, got Z of shape {Z.shape}")
        if mu.shape != (p,):
            raise ValueError(f"mu has shape {mu.shape}, expected ({p},)")
        if d.shape != (n,):
            raise ValueError(f"d has shape {d.shape}, expected ({n},)")
        if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(mu))):
            raise ValueError("Z and mu must be finite")
        if not (np.all(d > 0) and np.all(gen.in_domain(d))):
            raise ValueError("baseline weights must be positive and inside the generator domain")
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "gen", gen)

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def p(self) -> int:
        return self.Z.shape[1]


@dataclass
class CalibrationSolution:
    lam: np.ndarray
    omega: np.ndarray
    iterations: int
    residual_norm: float
    objective: float
    converged: bool
    tolerance: float
    kept_columns: tuple = ()
    n_negative: int = 0
    trace: list = field(default_factory=list)

    @property
    def reduced(self) -> bool:
        """True when collinear basis columns were dropped before solving."""
        return len(self.kept_columns) < self.lam.shape[0]

    def summary(self) -> dict:
        return {
            "lambda": [float(v) for v in self.lam],
            "iterations": self.iterations,
            "residual_norm": self.residual_norm,
            "objective": self.objective,
            "converged": self.converged,
            "kept_columns": list(self.kept_columns),
            "omega_min": float(self.omega.min()),
            "omega_max": float(self.omega.max()),
            "n_negative": self.n_negative,
        }


def _terms(prob: CalibrationProblem, lam, kernels=None, Z=None, margin=IMAGE_MARGIN):
    kernels = kernels or _backend.kernels
    gen = prob.gen
    Z = prob.Z if Z is None else Z
    gd = np.ascontiguousarray(gen.g(prob.d))
    lam = np.ascontiguousarray(lam, dtype=np.float64)
    alpha = gen.alpha if gen.alpha is not None else 1.0
    return kernels.dual_terms(gen.code, alpha, gd, Z, lam, margin)


def _require(ok):
    if not ok:
        from .bregman import DomainError

        raise DomainError("infeasible dual point: g(d) + Z lam leaves the image of g")


def dual_objective(prob: CalibrationProblem, lam) -> float:
    """Profiled dual ``sum_j F(nu_j) - lam @ mu`` (no additive constant)."""
    lam = np.asarray(lam, dtype=np.float64)
    ok, _, _, _, fsum = _terms(prob, lam, margin=0.0)
    _require(ok)
    return float(fsum - lam @ prob.mu)


def dual_gradient(prob: CalibrationProblem, lam) -> np.ndarray:
    """``Z.T @ omega(lam) - mu``."""
    ok, _, zt, _, _ = _terms(prob, lam, margin=0.0)
    _require(ok)
    return zt - prob.mu


def dual_hessian(prob: CalibrationProblem, lam) -> np.ndarray:
    """``Z.T diag(1/g'(omega(lam))) Z``."""
    ok, _, _, hess, _ = _terms(prob, lam, margin=0.0)
    _require(ok)
    return hess


def calibration_map(prob: CalibrationProblem, lam) -> np.ndarray:
    """Weights ``omega_j(lam) = g^{-1}(g(d_j) + z_j @ lam)``."""
    gen = prob.gen
    return gen.g_inv(gen.g(prob.d) + prob.Z @ np.asarray(lam, dtype=np.float64))


def independent_columns(Z: np.ndarray, tol: float = RANK_TOL) -> list[int]:
    """Greedy left-to-right maximal set of linearly independent columns.

    A column is kept when it raises the numerical rank, judged by singular
    values below ``tol * ||Z||_2``.
    """
    scale = np.linalg.norm(Z, 2) if Z.size else 0.0
    if scale == 0.0:
        return []
    kept: list[int] = []
    for j in range(Z.shape[1]):
        trial = Z[:, kept + [j]]
        sv = np.linalg.svd(trial, compute_uv=False)
        if sv[-1] > tol * scale:
            kept.append(j)
    return kept


def _newton_direction(hess, grad):
    p = hess.shape[0]
    base = max(np.trace(hess) / p, np.finfo(float).tiny)
    jitter = 0.0
    for _ in range(10):
        try:
            factor = linalg.cho_factor(hess + jitter * np.eye(p), lower=True, check_finite=True)
            step = -linalg.cho_solve(factor, grad)
            if np.all(np.isfinite(step)):
                return step
        except (linalg.LinAlgError, ValueError):
            pass
        jitter = 1e-12 * base if jitter == 0.0 else jitter * 10.0
        if jitter > 1e-4 * base:
            break
    raise SolverFailure("Newton system is singular or indefinite beyond ridge repair")


def solve(
    prob: CalibrationProblem,
    tolerance: float = 1e-10,
    max_iter: int = 100,
    trace: bool = False,
    backend: Optional[str] = None,
) -> CalibrationSolution:
    """Damped Newton minimisation of the calibration dual, started at ``lam = 0``.

    Convergence is declared when ``||Z.T omega - mu||_2 <= tolerance *
    max(1, ||mu||_2)``. Each Newton step is halved (at most 60 times) until
    every dual argument stays inside the image of ``g`` and the dual
    objective does not increase. Collinear basis columns are dropped first;
    their constraints are checked on the final weights.

    Raises
    ------
    InfeasibleDualError
        No backtracked step stayed inside the image of ``g``.
    SolverFailure
        The Hessian could not be factorised even with ridge jitter.
    """
    kernels = _backend.get_kernels(backend)
    gen = prob.gen
    kept = independent_columns(prob.Z)
    if not kept:
        raise SolverFailure("calibration basis is identically zero")
    Zr = np.ascontiguousarray(prob.Z[:, kept])
    mur = prob.mu[kept]
    tol_abs = tolerance * max(1.0, float(np.linalg.norm(prob.mu)))

    lam = np.zeros(len(kept))
    ok, omega, zt, hess, fsum = _terms(prob, lam, kernels, Zr)
    if not ok:
        raise InfeasibleDualError("baseline weights map outside the image of g")
    grad = zt - mur
    obj = fsum
    history = []
    if trace:
        history.append((0, float(np.linalg.norm(prob.Z.T @ omega - prob.mu)),
                        float(np.sum(gen.divergence(omega, prob.d)))))

    iterations = 0
    while np.linalg.norm(grad) > tol_abs and iterations < max_iter:
        step = _newton_direction(hess, grad)
        eta = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = lam + eta * step
            ok, c_omega, c_zt, c_hess, c_fsum = _terms(prob, cand, kernels, Zr)
            if ok:
                c_obj = c_fsum - cand @ mur
                slack = DESCENT_SLACK * (abs(c_fsum) + abs(cand @ mur) + abs(obj) + 1.0)
                if c_obj <= obj + slack:
                    break
            eta *= 0.5
        else:
            raise InfeasibleDualError(
                f"no admissible damped step after {MAX_HALVINGS} halvings "
                f"(iteration {iterations}, residual {np.linalg.norm(grad):.3e})"
            )
        lam, omega, hess = cand, c_omega, c_hess
        grad = c_zt - mur
        obj = c_obj
        iterations += 1
        if trace:
            history.append((iterations, float(np.linalg.norm(prob.Z.T @ omega - prob.mu)),
                            float(np.sum(gen.divergence(omega, prob.d)))))

    full_lam = np.zeros(prob.p)
    full_lam[kept] = lam
    residual = float(np.linalg.norm(prob.Z.T @ omega - prob.mu))
    objective = float(np.sum(gen.divergence(omega, prob.d))) if np.all(gen.in_domain(omega)) else math.nan
    return CalibrationSolution(
        lam=full_lam,
        omega=omega,
        iterations=iterations,
        residual_norm=residual,
        objective=objective,
        converged=residual <= tol_abs,
        tolerance=tol_abs,
        kept_columns=tuple(kept),
        n_negative=int(np.sum(omega < 0)),
        trace=history,
    )


def kkt_residual(prob: CalibrationProblem, sol: CalibrationSolution) -> float:
    """``max_j |g(omega_j) - g(d_j) - z_j @ lam|``."""
    gen = prob.gen
    return float(np.max(np.abs(gen.g(sol.omega) - gen.g(prob.d) - prob.Z @ sol.lam)))
