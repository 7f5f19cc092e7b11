"""Command-line entry point: ``mec simulate|estimate|calibrate``.

Each run writes a resolved-config JSON beside its main output
(``<out stem>.config.json``). Passing that file back with ``--config``
reproduces the output byte for byte.

Exit codes: 0 success, 2 bad input or configuration, 3 computation failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import calibration
from ._fmt import fmt
from .bregman import Generator
from .crossfit import DEFAULT_FOLDS, assign_folds, cross_predict
from .estimators import (Dataset, EstimateReport, classical_mean, greg_estimate, mec,
                         ppi_crossfit, ppi_vanilla)
from .learners import LearnerError, LearnerSpec
from .simulate import SimulationConfig, run_monte_carlo

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_COMPUTE = 3

ESTIMATE_METHODS = ("classical", "ppi", "cfppi", "mec", "greg")


class InputError(ValueError):
    """Bad file, column or configuration value."""


def echo_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".config.json")


def _write_json(path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise InputError(f"{path}: top level must be a JSON object")
    return data


def _merge(args: argparse.Namespace, names, defaults: dict) -> dict:
    """Flags override the ``--config`` file, which overrides defaults."""
    base = dict(defaults)
    if getattr(args, "config", None):
        loaded = _load_config(args.config)
        unknown = set(loaded) - set(names)
        if unknown:
            raise InputError(f"{args.config}: unknown fields {sorted(unknown)}")
        base.update(loaded)
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            base[name] = value
    return base


# -- CSV input ---------------------------------------------------------------

def read_numeric_csv(path, columns=None) -> tuple[list[str], np.ndarray]:
    """Header row plus numeric body; errors name the file, line and column."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if len(set(header)) != len(header):
            raise InputError(f"{path}: duplicate column names")
        keep = list(range(len(header))) if columns is None else [header.index(c) for c in columns]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            values = []
            for j in keep:
                try:
                    v = float(row[j])
                except ValueError:
                    raise InputError(f"{path}:{lineno}: column {header[j]!r}: "
                                     f"non-numeric value {row[j]!r}") from None
                if not math.isfinite(v):
                    raise InputError(f"{path}:{lineno}: column {header[j]!r}: non-finite value")
                values.append(v)
            rows.append(values)
    names = [header[j] for j in keep]
    arr = np.array(rows, dtype=np.float64).reshape(len(rows), len(keep))
    return names, arr


def _covariate_columns(header, target, exclude, path):
    missing = [c for c in exclude if c not in header]
    if missing:
        raise InputError(f"{path}: excluded columns not present: {missing}")
    return [c for c in header if c != target and c not in exclude]


def _peek_header(path) -> list[str]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    with open(path, newline="") as fh:
        try:
            return [h.strip() for h in next(csv.reader(fh))]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None


def load_estimate_data(cfg: dict) -> Dataset:
    target = cfg["target"]
    exclude = list(cfg["exclude"])
    if cfg.get("data"):
        if cfg.get("labeled") or cfg.get("unlabeled"):
            raise InputError("give either --data or --labeled/--unlabeled, not both")
        header = _peek_header(cfg["data"])
        if target not in header:
            raise InputError(f"{cfg['data']}: target column {target!r} not found")
        cov = _covariate_columns(header, target, exclude, cfg["data"])
        _, X = read_numeric_csv(cfg["data"], cov)
        _, Y = read_numeric_csv(cfg["data"], [target])
        N = X.shape[0]
        n = cfg.get("n_labeled")
        if n is None:
            raise InputError("--data needs --n-labeled")
        if not 2 <= n < N:
            raise InputError(f"--n-labeled must lie in [2, {N - 1}], got {n}")
        chosen = np.sort(np.random.default_rng(cfg["split_seed"]).choice(N, size=n, replace=False))
        mask = np.zeros(N, dtype=bool)
        mask[chosen] = True
        return Dataset(X[mask], Y[mask, 0], X[~mask])
    if not cfg.get("labeled") or not cfg.get("unlabeled"):
        raise InputError("estimate needs --labeled and --unlabeled (or --data)")
    lab_header = _peek_header(cfg["labeled"])
    if target not in lab_header:
        raise InputError(f"{cfg['labeled']}: target column {target!r} not found")
    cov = _covariate_columns(lab_header, target, exclude, cfg["labeled"])
    unl_header = _peek_header(cfg["unlabeled"])
    missing = [c for c in cov if c not in unl_header]
    if missing:
        raise InputError(f"{cfg['unlabeled']}: missing covariate columns {missing}")
    extra = [c for c in unl_header if c not in cov and c != target and c not in exclude]
    if extra:
        raise InputError(f"{cfg['unlabeled']}: unexpected columns {extra}")
    _, X = read_numeric_csv(cfg["labeled"], cov)
    _, Y = read_numeric_csv(cfg["labeled"], [target])
    _, U = read_numeric_csv(cfg["unlabeled"], cov)
    if X.shape[0] < 2:
        raise InputError(f"{cfg['labeled']}: need at least 2 labeled rows, got {X.shape[0]}")
    if U.shape[0] < 1:
        raise InputError(f"{cfg['unlabeled']}: no unlabeled rows")
    return Dataset(X, Y[:, 0], U)


# -- subcommands -------------------------------------------------------------


def cmd_simulate(args) -> int:
    if not args.config:
        raise InputError("simulate needs --config")
    data = _load_config(args.config)
    overrides = {
        "seed": args.seed, "alpha": args.alpha, "K": args.folds, "R": args.replications,
        "learners": _split(args.learner), "generators": _split(args.generator),
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = SimulationConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{args.config}: {exc}") from None
    summary = run_monte_carlo(cfg)
    text = summary.to_csv()
    if args.out:
        Path(args.out).write_text(text)
        _write_json(echo_path(args.out), cfg.to_dict())
    else:
        sys.stdout.write(text)
    print(summary.table(), file=sys.stderr if not args.out else sys.stdout)
    if not summary.cells:
        print("error: every cell was skipped", file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_OK


ESTIMATE_FIELDS = ("labeled", "unlabeled", "data", "target", "exclude", "n_labeled",
                   "split_seed", "method", "learner", "generator", "alpha", "seed",
                   "folds", "tolerance", "predictions", "knn_k", "krr_c_lambda", "krr_alpha",
                   "krr_lengthscale")
ESTIMATE_DEFAULTS = {
    "labeled": None, "unlabeled": None, "data": None, "target": "y", "exclude": [],
    "n_labeled": None, "split_seed": 0, "method": ["mec"], "learner": "krr",
    "generator": "quadratic", "alpha": 0.05, "seed": 0, "folds": DEFAULT_FOLDS,
    "tolerance": 1e-10, "predictions": None, "knn_k": 15, "krr_c_lambda": 0.01,
    "krr_alpha": 0.5, "krr_lengthscale": None,
}


def _split(text):
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return list(text)
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _estimate_config(args) -> dict:
    ns = argparse.Namespace(**vars(args))
    ns.method = _split(args.method)
    ns.exclude = _split(args.exclude)
    cfg = _merge(ns, ESTIMATE_FIELDS, ESTIMATE_DEFAULTS)
    cfg["method"] = _split(cfg["method"])
    cfg["exclude"] = _split(cfg["exclude"]) or []
    bad = [m for m in cfg["method"] if m not in ESTIMATE_METHODS]
    if bad or not cfg["method"]:
        raise InputError(f"--method must be a comma list from {ESTIMATE_METHODS}, got {bad or cfg['method']}")
    for key in ("labeled", "unlabeled", "data", "predictions"):
        if cfg[key] is not None:
            cfg[key] = str(cfg[key])
    try:
        cfg["generator"] = str(Generator.parse(str(cfg["generator"])))
        _learner_from(cfg)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if not 0 < cfg["alpha"] < 1:
        raise InputError("--alpha must lie in (0, 1)")
    return cfg


def _learner_from(cfg) -> LearnerSpec:
    if cfg["learner"] == "external" or cfg.get("predictions"):
        if not cfg.get("predictions"):
            raise InputError("--learner external needs --predictions")
        return LearnerSpec("external", predictions_path=cfg["predictions"])
    if cfg["learner"] == "knn":
        return LearnerSpec("knn", k=cfg["knn_k"])
    return LearnerSpec(cfg["learner"], c_lambda=cfg["krr_c_lambda"], alpha=cfg["krr_alpha"],
                       lengthscale=cfg["krr_lengthscale"])


def cmd_estimate(args) -> int:
    cfg = _estimate_config(args)
    data = load_estimate_data(cfg)
    learner = _learner_from(cfg)
    gen = Generator.parse(cfg["generator"])
    alpha = cfg["alpha"]
    preds = None
    if any(m in ("cfppi", "mec", "greg") for m in cfg["method"]):
        K = int(cfg["folds"])
        if not 2 <= K <= data.n:
            raise InputError(f"--folds must satisfy 2 <= K <= n = {data.n}, got {K}")
        preds = cross_predict(data, assign_folds(data.n, K, int(cfg["seed"])), learner)
    reports: list[EstimateReport] = []
    for method in cfg["method"]:
        if method == "classical":
            rep = classical_mean(data.labeled_Y, alpha)
            rep.N = data.N
        elif method == "ppi":
            rep = ppi_vanilla(data, learner, alpha)
        elif method == "cfppi":
            rep = ppi_crossfit(data, preds, alpha)
        elif method == "greg":
            rep = greg_estimate(data, preds, gen, alpha)
        else:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", RuntimeWarning)
                rep = mec(data, preds, gen, alpha, tolerance=cfg["tolerance"])
            for w in caught:
                print(f"warning: {w.message}", file=sys.stderr)
        reports.append(rep)
        print(rep)
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(EstimateReport.CSV_FIELDS)
    for rep in reports:
        out.writerow(rep.csv_row())
    if args.out:
        Path(args.out).write_text(buf.getvalue())
        _write_json(echo_path(args.out), cfg)
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


CALIBRATE_FIELDS = ("design", "totals", "generator", "tolerance", "population_size", "trace",
                    "max_iter")
CALIBRATE_DEFAULTS = {"design": None, "totals": None, "generator": "quadratic",
                      "tolerance": 1e-10, "population_size": None, "trace": None, "max_iter": 100}


def cmd_calibrate(args) -> int:
    cfg = _merge(args, CALIBRATE_FIELDS, CALIBRATE_DEFAULTS)
    for key in ("design", "totals", "population_size"):
        if cfg[key] is None:
            raise InputError(f"calibrate needs --{key.replace('_', '-')}")
    cfg["design"], cfg["totals"] = str(cfg["design"]), str(cfg["totals"])
    if cfg["trace"] is not None:
        cfg["trace"] = str(cfg["trace"])
    try:
        gen = Generator.parse(str(cfg["generator"]))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    cfg["generator"] = str(gen)
    names, Z = read_numeric_csv(cfg["design"])
    t_names, totals = read_numeric_csv(cfg["totals"])
    if t_names != names:
        raise InputError(f"{cfg['totals']}: columns {t_names} do not match design columns {names}")
    if totals.shape[0] != 1:
        raise InputError(f"{cfg['totals']}: expected exactly one row of totals, got {totals.shape[0]}")
    n = Z.shape[0]
    if n < Z.shape[1]:
        raise InputError(f"{cfg['design']}: need at least as many rows as columns")
    N = cfg["population_size"]
    if not N > 0:
        raise InputError("--population-size must be positive")
    d = np.full(n, float(N) / n)
    try:
        prob = calibration.CalibrationProblem(Z, totals[0], d, gen)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    try:
        sol = calibration.solve(prob, tolerance=cfg["tolerance"], max_iter=int(cfg["max_iter"]),
                                trace=cfg["trace"] is not None)
    except calibration.CalibrationError as exc:
        print(f"error: calibration failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    lam = " ".join(fmt(v) for v in sol.lam)
    line = (f"lambda=[{lam}] iterations={sol.iterations} residual_norm={fmt(sol.residual_norm)} "
            f"D_G={fmt(sol.objective)} converged={str(sol.converged).lower()} "
            f"negative_weights={sol.n_negative}")
    if sol.reduced:
        line += f" kept_columns={','.join(names[k] for k in sol.kept_columns)}"
    print(line)
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["unit_id", "omega"])
    for j, w in enumerate(sol.omega):
        out.writerow([j, fmt(w)])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
        _write_json(echo_path(args.out), cfg)
    else:
        sys.stdout.write(buf.getvalue())
    if cfg["trace"]:
        with open(cfg["trace"], "w", newline="") as fh:
            tw = csv.writer(fh, lineterminator="\n")
            tw.writerow(["iteration", "residual_norm", "objective"])
            for it, res, obj in sol.trace:
                tw.writerow([it, fmt(res), fmt(obj)])
    if not sol.converged:
        print(f"error: not converged after {sol.iterations} iterations "
              f"(residual {fmt(sol.residual_norm)})", file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mec", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Monte Carlo coverage and width-ratio study")
    p.add_argument("--config", help="SimulationConfig JSON")
    p.add_argument("--out", help="summary CSV (stdout if omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--folds", type=int)
    p.add_argument("--replications", type=int, help="override R")
    p.add_argument("--learner", help="comma list of learner kinds")
    p.add_argument("--generator", help="comma list of generators, e.g. quadratic,kl,renyi:0.5")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate a mean from labeled and unlabeled files")
    p.add_argument("--config", help="resolved-config JSON from an earlier run")
    p.add_argument("--out", help="report CSV (stdout if omitted)")
    p.add_argument("--labeled")
    p.add_argument("--unlabeled")
    p.add_argument("--data", help="single file to split into labeled and unlabeled parts")
    p.add_argument("--target", help="outcome column (default y)")
    p.add_argument("--exclude", help="comma list of columns to ignore")
    p.add_argument("--n-labeled", dest="n_labeled", type=int)
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument("--method", help=f"comma list from {','.join(ESTIMATE_METHODS)}")
    p.add_argument("--learner", choices=("krr", "knn", "external"))
    p.add_argument("--predictions", help="unit_id,set,prediction CSV for the external learner")
    p.add_argument("--knn-k", dest="knn_k", type=int, help="kNN neighbours (default 15)")
    p.add_argument("--krr-c-lambda", dest="krr_c_lambda", type=float,
                   help="KRR ridge constant c in c * n^-a (default 0.01)")
    p.add_argument("--krr-alpha", dest="krr_alpha", type=float,
                   help="KRR ridge exponent a (default 0.5)")
    p.add_argument("--krr-lengthscale", dest="krr_lengthscale", type=float,
                   help="Gaussian kernel lengthscale (default sqrt(2 d))")
    p.add_argument("--generator")
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int, help="fold assignment seed")
    p.add_argument("--folds", type=int)
    p.add_argument("--tolerance", type=float)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("calibrate", help="calibration weights for a design matrix")
    p.add_argument("--config", help="resolved-config JSON from an earlier run")
    p.add_argument("--out", help="weights CSV (stdout if omitted)")
    p.add_argument("--design", help="CSV of basis values, one row per labeled unit")
    p.add_argument("--totals", help="CSV with the same header and one row of totals")
    p.add_argument("--population-size", dest="population_size", type=float)
    p.add_argument("--generator")
    p.add_argument("--tolerance", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--trace", help="write the per-iteration trace CSV here")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (LearnerError, calibration.CalibrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
