"""Compare the compiled and numpy kernel backends.

Usage: python benchmarks/bench_kernels.py [--repeat 5]

Times the dual evaluation used inside every Newton step, the kNN
average, a full calibration solve, and one Monte Carlo replication, and
checks that both backends return the same numbers.
"""

import argparse
import time

import numpy as np

from mec import _backend, calibration
from mec.bregman import Generator
from mec.learners import LearnerSpec, Standardizer
from mec.simulate import SimulationConfig, run_replication


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t)
    return min(times), result


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    names = _backend.available_backends()
    if "compiled" not in names:
        print("compiled extension not built; only the numpy backend is available")
    rng = np.random.default_rng(0)

    n = 500
    gen = Generator("el")
    Z = np.ascontiguousarray(np.column_stack([np.ones(n), rng.normal(size=n)]))
    gd = np.ascontiguousarray(gen.g(np.full(n, 10.0)))
    lam = np.array([1e-3, -2e-3])
    mu = Z.T @ (10.0 * np.exp(0.2 * rng.normal(size=n)))
    prob = calibration.CalibrationProblem(Z, mu, np.full(n, 10.0), gen)

    X = rng.normal(size=(400, 10))
    Y = rng.normal(size=400)
    Q = rng.normal(size=(900, 10))
    s = Standardizer.fit(X)
    Xs, Qs = s.transform(X), s.transform(Q)

    cfg = SimulationConfig(N=1000, f_grid=(0.3,), R=1, learners=(LearnerSpec("knn"),),
                           generators=("quadratic", "kl", "el"))

    rows = []
    results = {}
    for name in names:
        k = _backend.get_kernels(name)
        t1, r1 = best_of(lambda: [k.dual_terms(gen.code, 1.0, gd, Z, lam, 1e-12) for _ in range(1000)], args.repeat)
        t2, r2 = best_of(lambda: k.knn_average(Xs, Y, Qs, 15), args.repeat)
        t3, r3 = best_of(lambda: calibration.solve(prob, backend=name), args.repeat)
        _backend.kernels = k
        t4, r4 = best_of(lambda: run_replication(cfg, 0, 0), args.repeat)
        rows.append((name, t1 * 1e3, t2 * 1e3, t3 * 1e3, t4 * 1e3))
        results[name] = (r1[0][2], r2, r3.omega, [r.get("theta") for r in r4])
    _backend.kernels = _backend.get_kernels(names[0])

    print(f"{'backend':<10}{'1000 dual evals':>18}{'kNN 900x400':>14}{'EL solve':>11}{'MC replication':>17}   (ms)")
    for name, *t in rows:
        print(f"{name:<10}{t[0]:>18.2f}{t[1]:>14.2f}{t[2]:>11.3f}{t[3]:>17.1f}")
    if len(rows) == 2:
        base, comp = rows[1], rows[0]
        print("speed-up   " + "  ".join(f"{b / c:6.1f}x" for b, c in zip(base[1:], comp[1:])))
        a, b = results["compiled"], results["python"]
        same = (np.allclose(a[0], b[0], rtol=1e-13) and np.allclose(a[1], b[1], rtol=1e-13, atol=1e-15)
                and np.allclose(a[2], b[2], rtol=1e-12) and np.allclose(a[3], b[3], rtol=1e-12))
        print(f"backends agree to rounding: {same}")


if __name__ == "__main__":
    main()
