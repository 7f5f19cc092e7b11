"""Synthetic data and the Monte Carlo coverage / width-ratio harness.

Covariates are mean-zero Gaussian with AR(1) covariance ``rho^|i-j|``; the
regression function is ``exp(-x1) + x2^2 + x3 + 1{x4 > 0} + cos(x5)`` and
coordinates beyond the fifth are inert. The first ``n = round(f N)`` of the
``N`` drawn units are labeled with ``Y = m0(X) + sigma_y * eps``.

Replication seeds come from :func:`replication_seed`, a splitmix64 mix of
``(seed, f_index, replication)``, so results do not depend on how
replications are scheduled across workers.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import calibration
from ._fmt import fmt
from .bregman import Generator, as_generator
from .crossfit import DEFAULT_FOLDS, assign_folds, cross_predict
from .estimators import (Dataset, classical_mean, mec, ppi_crossfit, ppi_oracle,
                         ppi_vanilla)
from .learners import LearnerError, LearnerSpec

logger = logging.getLogger(__name__)

SIM_METHODS = ("classical", "oracle", "ppi", "cfppi", "mec")
WORKERS_ENV = "MEC_WORKERS"
_MASK64 = (1 << 64) - 1


def true_regression(X) -> np.ndarray:
    """Evaluate ``m0`` row-wise; only the first five coordinates matter."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    d = X.shape[1]
    out = np.zeros(X.shape[0])
    terms = (
        lambda x: np.exp(-x),
        lambda x: x * x,
        lambda x: x,
        lambda x: (x > 0).astype(np.float64),
        np.cos,
    )
    for k, term in enumerate(terms[: min(d, 5)]):
        out += term(X[:, k])
    return out


# E[term_k(Z)] for Z ~ N(0, 1), in coordinate order
_TERM_MEANS = (math.exp(0.5), 1.0, 0.0, 0.5, math.exp(-0.5))


def true_mean(d: int) -> float:
    """Superpopulation mean of ``m0(X)`` with standard normal marginals.

    AR(1) covariance keeps unit marginal variances, so this holds for any
    ``rho``.
    """
    return float(sum(_TERM_MEANS[: min(d, 5)]))


def ar1_cholesky(d: int, rho: float) -> np.ndarray:
    idx = np.arange(d)
    cov = rho ** np.abs(idx[:, None] - idx[None, :]) if rho else np.eye(d)
    return np.linalg.cholesky(cov)


@dataclass(frozen=True)
class SimulationConfig:
    N: int = 1000
    f_grid: tuple = (0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5)
    d: int = 10
    rho: float = 0.0
    sigma_y: float = 5.0
    R: int = 2000
    K: int = DEFAULT_FOLDS
    learners: tuple = (LearnerSpec("krr"), LearnerSpec("knn"))
    generators: tuple = (Generator("quadratic"),)
    alpha: float = 0.05
    seed: int = 0
    methods: tuple = SIM_METHODS

    def __post_init__(self):
        learners = tuple(LearnerSpec.from_dict(x) for x in self.learners)
        generators = tuple(as_generator(g) for g in self.generators)
        f_grid = tuple(float(f) for f in self.f_grid)
        methods = tuple(self.methods)
        object.__setattr__(self, "learners", learners)
        object.__setattr__(self, "generators", generators)
        object.__setattr__(self, "f_grid", f_grid)
        object.__setattr__(self, "methods", methods)
        if not f_grid:
            raise ValueError("f_grid must not be empty")
        if any(not 0.0 < f < 1.0 for f in f_grid):
            raise ValueError("every label fraction must lie in (0, 1)")
        if int(self.N) != self.N or self.N < 3:
            raise ValueError("N must be an integer >= 3")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError("d must be a positive integer")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if not self.sigma_y >= 0:
            raise ValueError("sigma_y must be non-negative")
        if int(self.R) != self.R or self.R < 1:
            raise ValueError("R must be a positive integer")
        if int(self.K) != self.K or self.K < 2:
            raise ValueError("K must be an integer >= 2")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        unknown = set(methods) - set(SIM_METHODS)
        if unknown or not methods:
            raise ValueError(f"methods must be a non-empty subset of {SIM_METHODS}")
        if any(lr.kind == "external" for lr in learners):
            raise ValueError("simulations need trainable learners (krr or knn)")

    def labeled_size(self, f: float) -> int:
        return int(round(f * self.N))

    def cell_problem(self, f: float) -> Optional[str]:
        """Why a label fraction cannot be simulated, or None."""
        n = self.labeled_size(f)
        if n < 2:
            return f"n = {n} labeled units is too few"
        if n >= self.N:
            return f"n = {n} leaves no unlabeled units"
        if n < self.K and any(m in self.methods for m in ("cfppi", "mec")):
            return f"n = {n} is smaller than K = {self.K}"
        return None

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "f_grid": list(self.f_grid),
            "d": self.d,
            "rho": self.rho,
            "sigma_y": self.sigma_y,
            "R": self.R,
            "K": self.K,
            "learners": [lr.to_dict() for lr in self.learners],
            "generators": [str(g) for g in self.generators],
            "alpha": self.alpha,
            "seed": self.seed,
            "methods": list(self.methods),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SimulationConfig":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "SimulationConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ValueError(f"{path}: top level must be a JSON object")
        return cls.from_dict(data)


@dataclass(frozen=True)
class Truth:
    theta0: float
    m0_labeled: np.ndarray
    m0_unlabeled: np.ndarray


def replication_seed(seed: int, f_index: int, replication: int) -> int:
    """64-bit seed for one replication (splitmix64 finaliser over a linear mix)."""
    z = (int(seed) * 0x9E3779B97F4A7C15 + (int(f_index) + 1) * 0xBF58476D1CE4E5B9
         + (int(replication) + 1) * 0x94D049BB133111EB) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def draw_covariates(rng: np.random.Generator, size: int, d: int, rho: float) -> np.ndarray:
    Zs = rng.standard_normal((size, d))
    if rho:
        return Zs @ ar1_cholesky(d, rho).T
    return Zs


def draw_dataset(cfg: SimulationConfig, f: float, rep_seed: int) -> tuple[Dataset, Truth]:
    rng = np.random.default_rng(rep_seed)
    n = cfg.labeled_size(f)
    X = draw_covariates(rng, cfg.N, cfg.d, cfg.rho)
    m0 = true_regression(X)
    Y = m0[:n] + cfg.sigma_y * rng.standard_normal(n)
    data = Dataset(X[:n], Y, X[n:])
    return data, Truth(true_mean(cfg.d), m0[:n], m0[n:])


def _fold_seed(rep_seed: int) -> int:
    return replication_seed(rep_seed & 0x7FFFFFFF, 0, 0) >> 1


def run_replication(cfg: SimulationConfig, f_index: int, replication: int) -> list[dict]:
    """Every configured estimator on one drawn dataset.

    Returns one record per (method, learner, generator); failed estimators
    carry an ``error`` string instead of numbers.
    """
    f = cfg.f_grid[f_index]
    rep_seed = replication_seed(cfg.seed, f_index, replication)
    data, truth = draw_dataset(cfg, f, rep_seed)
    records = []

    def record(method, learner, generator, fn):
        try:
            rep = fn()
        except (LearnerError, calibration.CalibrationError, ValueError,
                np.linalg.LinAlgError, FloatingPointError) as exc:
            records.append({"method": method, "learner": learner, "generator": generator,
                            "error": f"{type(exc).__name__}: {exc}"})
            return None
        records.append({"method": method, "learner": learner, "generator": generator,
                        "theta": rep.theta_hat, "width": rep.width,
                        "covered": rep.covers(truth.theta0)})
        return rep

    if "classical" in cfg.methods:
        record("classical", "none", "none", lambda: classical_mean(data.labeled_Y, cfg.alpha))
    if "oracle" in cfg.methods:
        record("oracle", "none", "none",
               lambda: ppi_oracle(data, truth.m0_labeled, truth.m0_unlabeled, cfg.alpha))
    folds = None
    if any(m in cfg.methods for m in ("cfppi", "mec")):
        folds = assign_folds(data.n, cfg.K, _fold_seed(rep_seed))
    for learner in cfg.learners:
        if "ppi" in cfg.methods:
            record("ppi", learner.tag, "none", lambda: ppi_vanilla(data, learner, cfg.alpha))
        if folds is None:
            continue
        try:
            preds = cross_predict(data, folds, learner)
        except LearnerError as exc:
            reason = f"LearnerError: {exc}"
            for method in ("cfppi", "mec"):
                if method not in cfg.methods:
                    continue
                gens = [str(g) for g in cfg.generators] if method == "mec" else ["none"]
                for g in gens:
                    records.append({"method": method, "learner": learner.tag, "generator": g,
                                    "error": reason})
            continue
        if "cfppi" in cfg.methods:
            record("cfppi", learner.tag, "none", lambda: ppi_crossfit(data, preds, cfg.alpha))
        if "mec" in cfg.methods:
            for gen in cfg.generators:
                record("mec", learner.tag, str(gen),
                       lambda: _quiet_mec(data, preds, gen, cfg.alpha))
    return records


def _quiet_mec(data, preds, gen, alpha):
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return mec(data, preds, gen, alpha)


def _run_chunk(args):
    cfg, tasks = args
    return [run_replication(cfg, fi, r) for fi, r in tasks]


@dataclass
class CellSummary:
    method: str
    learner: str
    generator: str
    f: float
    coverage: float
    width_ratio: float
    mean_width: float
    mean_bias: float
    replications: int
    failures: int
    failure_reasons: dict = field(default_factory=dict)


@dataclass
class SimulationSummary:
    config: SimulationConfig
    cells: list
    skipped: dict = field(default_factory=dict)

    FIELDS = ("method", "learner", "generator", "f", "coverage", "width_ratio",
              "mean_width", "mean_bias", "failures", "replications")

    def get(self, method, f, learner="none", generator="none") -> CellSummary:
        for c in self.cells:
            if (c.method, c.learner, c.generator) == (method, learner, generator) and math.isclose(c.f, f):
                return c
        raise KeyError((method, learner, generator, f))

    def to_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(self.FIELDS)
        for c in self.cells:
            out.writerow([c.method, c.learner, c.generator, fmt(c.f), fmt(c.coverage),
                          fmt(c.width_ratio), fmt(c.mean_width), fmt(c.mean_bias),
                          c.failures, c.replications])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def table(self) -> str:
        head = f"{'method':<10}{'learner':<9}{'generator':<11}{'f':>6}{'coverage':>10}{'WR':>8}{'bias':>10}{'fail':>6}"
        lines = [head, "-" * len(head)]
        for c in self.cells:
            lines.append(f"{c.method:<10}{c.learner:<9}{c.generator:<11}{c.f:>6.3f}"
                         f"{c.coverage:>10.3f}{c.width_ratio:>8.3f}{c.mean_bias:>10.4f}{c.failures:>6d}")
        for f, why in self.skipped.items():
            lines.append(f"skipped f = {f:g}: {why}")
        return "\n".join(lines)


def _worker_count(workers: Optional[int]) -> int:
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        workers = int(env) if env else 1
    return max(1, int(workers))


def run_monte_carlo(cfg: SimulationConfig, workers: Optional[int] = None) -> SimulationSummary:
    """Run ``cfg.R`` replications per feasible label fraction and summarise.

    Coverage is measured against the superpopulation mean of ``m0``.
    Failed estimator runs are excluded from the coverage and width
    averages and counted per cell.
    """
    skipped = {}
    tasks = []
    for fi, f in enumerate(cfg.f_grid):
        why = cfg.cell_problem(f)
        if why:
            skipped[f] = why
            logger.warning("skipping f = %g: %s", f, why)
            continue
        tasks.extend((fi, r) for r in range(cfg.R))

    workers = _worker_count(workers)
    if workers == 1 or len(tasks) < 2:
        results = [run_replication(cfg, fi, r) for fi, r in tasks]
    else:
        size = max(1, math.ceil(len(tasks) / (workers * 4)))
        chunks = [(cfg, tasks[i:i + size]) for i in range(0, len(tasks), size)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [rec for part in pool.map(_run_chunk, chunks) for rec in part]

    theta0 = true_mean(cfg.d)
    cells = []
    for fi, f in enumerate(cfg.f_grid):
        if f in skipped:
            continue
        groups: dict = {}
        for (tfi, _), recs in zip(tasks, results):
            if tfi != fi:
                continue
            for rec in recs:
                groups.setdefault((rec["method"], rec["learner"], rec["generator"]), []).append(rec)
        classical_ok = [r for r in groups.get(("classical", "none", "none"), []) if "error" not in r]
        base_width = float(np.mean([r["width"] for r in classical_ok])) if classical_ok else math.nan
        for key, recs in groups.items():
            ok = [r for r in recs if "error" not in r]
            reasons: dict = {}
            for r in recs:
                if "error" in r:
                    reasons[r["error"]] = reasons.get(r["error"], 0) + 1
            if ok:
                widths = np.array([r["width"] for r in ok])
                thetas = np.array([r["theta"] for r in ok])
                coverage = float(np.mean([r["covered"] for r in ok]))
                mean_width = float(widths.mean())
                bias = float(np.mean(thetas - theta0))
            else:
                coverage = mean_width = bias = math.nan
            cells.append(CellSummary(key[0], key[1], key[2], f, coverage,
                                     mean_width / base_width, mean_width, bias,
                                     len(ok), len(recs) - len(ok), reasons))
    return SimulationSummary(cfg, cells, skipped)
