import numpy as np
import pytest

from mec import _backend
from mec.bregman import Generator

ALL_GENERATORS = [
    Generator("quadratic"),
    Generator("kl"),
    Generator("el"),
    Generator("hellinger"),
    Generator("inverse"),
    Generator("renyi", 0.5),
    Generator("renyi", 2.0),
]


@pytest.fixture(params=ALL_GENERATORS, ids=str)
def gen(request):
    return request.param


@pytest.fixture(params=_backend.available_backends())
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_instance(rng, gen, n=None, p=None, spread=0.3):
    """Feasible calibration problem: totals are Z.T @ omega* for some omega* in the domain."""
    from mec.calibration import CalibrationProblem

    n = int(rng.integers(10, 501)) if n is None else n
    p = int(rng.integers(1, 3)) if p is None else p
    N = n * float(rng.uniform(2.0, 10.0))
    d = np.full(n, N / n)
    x = rng.normal(size=n)
    Z = np.ones((n, 1)) if p == 1 else np.column_stack([np.ones(n), x])
    if p == 1 and rng.random() < 0.5:
        Z = np.abs(x)[:, None] + 0.5
    target = d * np.exp(spread * rng.normal(size=n))
    return CalibrationProblem(Z, Z.T @ target, d, gen)


def feasible_dual_point(rng, prob, scale=0.05):
    """Random lam whose dual arguments stay well inside the image of g."""
    gen = prob.gen
    for _ in range(1000):
        lam = scale * rng.normal(size=prob.p) / max(1.0, np.abs(prob.Z).max())
        nu = gen.g(prob.d) + prob.Z @ lam
        if np.all(gen.in_image(nu, margin=1e-3)):
            return lam
        scale *= 0.5
    return np.zeros(prob.p)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def fd_step(prob, lam, rel=1e-4):
    """Central-difference step scaled to the distance of g(d) + Z lam from the image boundary."""
    gen = prob.gen
    nu = gen.g(prob.d) + prob.Z @ lam
    lo, hi = gen.image
    gap = np.minimum(nu - lo, hi - nu)
    room = float(np.min(np.where(np.isfinite(gap), gap, 1.0)))
    return rel * min(room, 1.0) / max(1.0, float(np.abs(prob.Z).max()))
