"""Command-line interface: ``stdmarker <command> ...``.

Results are JSON objects carrying ``schema_version``; ``--csv`` writes the
same result rows as a flat table instead.  Exit codes: 0 success, 2 usage
or input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

from .basis import BasisSpec
from .dataset import Design, StudyDesign, StudySample, load_csv, write_csv
from .errors import DataError, NumericalError, StdMarkerError
from .estimators import (NonConcaveWarning, fit_cml, fit_eml, fit_nonparametric_aroc, fit_psl)
from .experiment import ESTIMANDS, METHODS, MODES, ExperimentConfig, ExperimentReport, run_experiment
from .hypotests import covariate_interaction_wald, test_roc_equality
from .inference import bootstrap_percentile_ci, risk_cdf, risk_cdf_eml, roc_values
from .simgen import DEFAULT_Q_GRID, DEFAULT_T_GRID, generate_sample, load_scenario, scenario_truth
from .standardize import fit_reference, placement_values, standardize_sample

SCHEMA_VERSION = 1
SEED_ENV = "STDMARKER_SEED"
EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3
DEFAULT_P_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)
# marker grid default: these quantiles of each population's markers
DEFAULT_Y_QUANTILES = (0.1, 0.3, 0.5, 0.7, 0.9)
FIT_COLUMNS = ("quantity", "population", "parameter", "estimate", "lower", "upper")


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _name_list(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _prevalence_map(text: str) -> dict:
    out = {}
    for item in _name_list(text):
        label, sep, value = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected label=value, got {item!r}")
        try:
            out[label.strip()] = float(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"prevalence for {label!r} is not a number") from None
    return out


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise DataError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


# -- analysis ------------------------------------------------------------------

@dataclass(frozen=True)
class AnalysisPlan:
    method: str
    mode: str  # "combined" or "per-population"
    t_grid: tuple
    y_grid: dict  # population -> markers
    p_grid: tuple
    quantities: tuple  # subset of ("coef", "roc", "risk", "cdf")
    basis: BasisSpec
    ties: str = "strict"
    concave: bool = False
    allow_nonmonotone: bool = False


def _fit_one(plan: AnalysisPlan, std):
    if plan.method == "eml":
        return fit_eml(std, plan.basis)
    if plan.method == "cml":
        return fit_cml(std, plan.basis, concave=plan.concave)
    if plan.method == "psl":
        return fit_psl(std.case_u, plan.basis, concave=plan.concave)
    return fit_nonparametric_aroc(std)


def analysis_rows(sample: StudySample, plan: AnalysisPlan) -> tuple[list, np.ndarray]:
    """Row descriptors ``(quantity, population, parameter)`` and their estimates."""
    std = standardize_sample(sample, ties=plan.ties)
    ref = fit_reference(sample)
    groups = [("combined", list(sample.strata))] if plan.mode == "combined" else \
        [(s, [s]) for s in sample.strata]
    meta, vals = [], []
    for name, targets in groups:
        sub = std if name == "combined" else std.subset(targets)
        fit = _fit_one(plan, sub)
        if plan.method == "np":
            if "roc" in plan.quantities:
                t = np.asarray(plan.t_grid)
                meta += [("roc", name, float(x)) for x in t]
                vals += list(fit(t))
            continue
        if "coef" in plan.quantities:
            meta += [("beta", name, float(j)) for j in range(len(fit.beta))]
            vals += list(fit.beta)
        if "roc" in plan.quantities:
            t = np.asarray(plan.t_grid)
            meta += [("roc", name, float(x)) for x in t]
            vals += list(roc_values(fit, t))
        for pop in targets:
            if not {"risk", "cdf"} & set(plan.quantities):
                break
            rho = sample.prevalence(pop)
            if "risk" in plan.quantities:
                y = np.asarray(plan.y_grid[pop], dtype=float)
                u = placement_values(ref, y, np.full(len(y), pop, dtype=object), plan.ties)
                meta += [("risk", pop, float(v)) for v in y]
                vals += list(expit(logit(rho) + fit.G(u)))
            if "cdf" in plan.quantities:
                p = np.asarray(plan.p_grid)
                meta += [("risk_cdf", pop, float(v)) for v in p]
                if plan.method == "eml":
                    vals += list(risk_cdf_eml(fit, pop, rho, p))
                else:
                    vals += list(risk_cdf(fit, rho, p, allow_nonmonotone=plan.allow_nonmonotone))
    return meta, np.array(vals, dtype=float)


def run_analysis(sample: StudySample, plan: AnalysisPlan, B: int, seed: int,
                 alpha: float = 0.05) -> dict:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConcaveWarning)
        meta, point = analysis_rows(sample, plan)
        lower = upper = [None] * len(meta)
        n_failed = 0
        if B > 0:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", RuntimeWarning)
                ci = bootstrap_percentile_ci(lambda s: analysis_rows(s, plan)[1], sample, B=B,
                                             seed=seed, alpha=alpha)
            for w in caught:
                print(f"warning: {w.message}", file=sys.stderr)
            lower, upper, n_failed = ci.lower.tolist(), ci.upper.tolist(), ci.n_failed
    rows = [dict(zip(FIT_COLUMNS, (q, str(pop), par, float(v), lo, hi)))
            for (q, pop, par), v, lo, hi in zip(meta, point, lower, upper)]
    return {"rows": rows, "bootstrap_failed": n_failed}


# -- output ----------------------------------------------------------------------

def _emit(payload: dict, args, rows_key: str = "rows", columns=None) -> None:
    if getattr(args, "csv", False):
        rows = payload[rows_key]
        columns = columns or (list(rows[0].keys()) if rows else [])
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in columns})
        text = buf.getvalue()
    else:
        text = json.dumps({"schema_version": SCHEMA_VERSION, **payload}, indent=2,
                          allow_nan=False) + "\n"
    if getattr(args, "output", None):
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load(args) -> StudySample:
    schema = {"d": args.d_col, "y": args.y_col, "x": None if args.x_col == "" else args.x_col}
    prev = args.prevalence
    design = StudyDesign(Design(args.design), prev) if prev or args.design != "cohort" else None
    if args.design == "case-control" and not prev:
        raise DataError("case-control designs need --prevalence label=value,...")
    return load_csv(args.input, schema, design)


def _seed(args) -> int:
    return default_seed() if args.seed is None else args.seed


def _y_grid(sample: StudySample, args) -> dict:
    if args.y_grid:
        return {s: tuple(args.y_grid) for s in sample.strata}
    return {s: tuple(np.quantile(sample.y[sample.codes == i], DEFAULT_Y_QUANTILES).tolist())
            for i, s in enumerate(sample.strata)}


def _plan(args, sample, quantities) -> AnalysisPlan:
    if args.method == "np":
        quantities = tuple(q for q in quantities if q == "roc")
    return AnalysisPlan(
        method=args.method, mode=args.mode, t_grid=tuple(args.roc_grid),
        y_grid=_y_grid(sample, args) if "risk" in quantities else {},
        p_grid=tuple(args.p_grid), quantities=tuple(quantities),
        basis=BasisSpec(degree=args.degree), ties=args.ties, concave=args.concave,
        allow_nonmonotone=args.allow_nonmonotone,
    )


def _analysis_payload(args, quantities, command) -> dict:
    sample = _load(args)
    plan = _plan(args, sample, quantities)
    seed = _seed(args)
    result = run_analysis(sample, plan, args.B, seed)
    return {
        "command": command, "input": str(args.input), "method": args.method, "mode": args.mode,
        "design": args.design, "degree": args.degree, "ties": args.ties, "B": args.B, "seed": seed,
        "bootstrap_failed": result["bootstrap_failed"], "rows": result["rows"],
    }


# -- commands --------------------------------------------------------------------

def cmd_standardize(args) -> int:
    sample = _load(args)
    std = standardize_sample(sample, ties=args.ties)
    rows = [{"d": int(d), "y": float(y), "x": str(x), "u": float(u)}
            for d, y, x, u in zip(sample.d, sample.y, sample.x, std.u_hat)]
    _emit({"command": "standardize", "input": str(args.input), "ties": args.ties,
           "strata": [str(s) for s in sample.strata], "rows": rows}, args)
    return EXIT_OK


def cmd_fit(args) -> int:
    _emit(_analysis_payload(args, ("coef", "roc", "risk", "cdf"), "fit"), args, columns=FIT_COLUMNS)
    return EXIT_OK


def cmd_roc(args) -> int:
    _emit(_analysis_payload(args, ("roc",), "roc"), args, columns=FIT_COLUMNS)
    return EXIT_OK


def cmd_riskdist(args) -> int:
    if args.method == "np":
        raise DataError("the nonparametric method has no risk model; use eml, cml or psl")
    _emit(_analysis_payload(args, ("risk", "cdf"), "riskdist"), args, columns=FIT_COLUMNS)
    return EXIT_OK


def cmd_test_roc_equality(args) -> int:
    sample = _load(args)
    seed = _seed(args)
    if args.method == "wald":
        res = covariate_interaction_wald(sample, BasisSpec(degree=args.degree), B=args.B, seed=seed,
                                         ties=args.ties)
    else:
        res = test_roc_equality(standardize_sample(sample, ties=args.ties), args.method, B=args.B,
                                seed=seed)
    row = {"method": res.method, "statistic": res.statistic, "p_value": res.p_value, "B": res.B}
    _emit({"command": "test-roc-equality", "input": str(args.input), "seed": seed,
           "populations": sorted((str(s) for s in sample.strata)), "rows": [row]}, args)
    return EXIT_OK


def cmd_simulate(args) -> int:
    scn = load_scenario(args.scenario)
    seed = scn.seed if args.seed is None and os.environ.get(SEED_ENV) is None else _seed(args)
    sample = generate_sample(scn, seed)
    if args.data:
        write_csv(sample, args.data)
    truth = scenario_truth(scn)
    rows = []
    for label in scn.labels:
        n_case, n_ctrl = sample.counts()[label]
        rows.append({"population": label, "n": n_case + n_ctrl, "cases": n_case, "controls": n_ctrl})
    truth_rows = []
    for label in scn.labels:
        truth_rows += [{"quantity": "roc", "population": label, "parameter": float(t), "value": float(v)}
                       for t, v in zip(truth.t, truth.roc[label])]
        truth_rows += [{"quantity": "risk", "population": label, "parameter": float(y), "value": float(v)}
                       for y, v in zip(truth.y[label], truth.risk[label])]
        truth_rows += [{"quantity": "risk_cdf", "population": label, "parameter": float(p), "value": float(v)}
                       for p, v in zip(truth.p[label], truth.cdf[label])]
        truth_rows += [{"quantity": "beta", "population": label, "parameter": float(j), "value": float(v)}
                       for j, v in enumerate(truth.beta[label])]
    _emit({"command": "simulate", "scenario": scn.to_dict(), "seed": seed,
           "data": None if args.data is None else str(args.data), "rows": rows, "truth": truth_rows},
          args, rows_key="truth" if args.csv else "rows")
    return EXIT_OK


def cmd_experiment(scenario_file, reps: int, bootstrap_B: int, seed: int, dump_path=None,
                   **options) -> ExperimentReport:
    """Run a Monte Carlo experiment on a scenario file (or built-in name).

    ``options`` are further ``ExperimentConfig`` fields.
    """
    scn = load_scenario(scenario_file)
    cfg = ExperimentConfig(reps=reps, bootstrap_B=bootstrap_B, seed=seed, **options)
    return run_experiment(scn, cfg, dump_path=dump_path)


def _cmd_experiment(args) -> int:
    scn = load_scenario(args.scenario)
    cfg = ExperimentConfig(
        reps=args.reps, bootstrap_B=args.B, seed=_seed(args), methods=args.methods, modes=args.modes,
        estimands=args.estimands, t_grid=args.roc_grid, q_grid=args.q_grid,
        ci_methods=args.ci_methods, ci_modes=args.ci_modes, ci_estimands=args.ci_estimands,
        jobs=args.jobs,
    )
    try:
        report = run_experiment(scn, cfg, dump_path=args.dump)
    except NumericalError as exc:
        partial = getattr(exc, "report", None)
        if partial is not None:
            _emit({"command": "experiment", "aborted": True, **partial.to_dict(args.timing)}, args)
        raise
    _emit({"command": "experiment", "aborted": False, **report.to_dict(args.timing)}, args)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("input", help="CSV file with a header row")
    p.add_argument("--d-col", default="d", help="disease label column (0/1)")
    p.add_argument("--y-col", default="y", help="marker column")
    p.add_argument("--x-col", default="x", help="stratum column; empty string for a single stratum")
    p.add_argument("--design", choices=[d.value for d in Design], default="cohort")
    p.add_argument("--prevalence", type=_prevalence_map, default=None,
                   help="external prevalences, e.g. pop1=0.44,pop2=0.27")
    p.add_argument("--ties", choices=("strict", "midrank"), default="strict")


def _common_out(p: argparse.ArgumentParser) -> None:
    p.add_argument("--output", "-o", help="write to this file instead of stdout")
    p.add_argument("--csv", action="store_true", help="emit a flat CSV table instead of JSON")
    p.add_argument("--seed", type=int, default=None, help=f"random seed (default ${SEED_ENV} or 0)")


def _model_args(p: argparse.ArgumentParser, methods=("eml", "cml", "psl", "np")) -> None:
    p.add_argument("--method", choices=methods, default="cml")
    p.add_argument("--mode", choices=("combined", "per-population"), default="combined")
    p.add_argument("--degree", type=int, default=2, help="polynomial degree of the basis r(u)")
    p.add_argument("--concave", action="store_true", help="restrict CML/PSL fits to a concave ROC")
    p.add_argument("--allow-nonmonotone", action="store_true",
                   help="integrate the risk level set when the fitted G is not monotone")
    p.add_argument("--roc-grid", type=_float_list, default=DEFAULT_T_GRID)
    p.add_argument("--y-grid", type=_float_list, default=None,
                   help="markers for Risk(y|x); default: population marker deciles 1,3,5,7,9")
    p.add_argument("--p-grid", type=_float_list, default=DEFAULT_P_GRID)
    p.add_argument("--B", type=int, default=500, help="bootstrap replicates (0 disables CIs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stdmarker", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("standardize", help="attach placement values to each record")
    _data_args(p)
    _common_out(p)
    p.set_defaults(func=cmd_standardize)

    for name, func, help_text in (
            ("fit", cmd_fit, "fit a risk model; coefficients, ROC, risk and risk CDF with CIs"),
            ("roc", cmd_roc, "ROC curve estimates with CIs"),
            ("riskdist", cmd_riskdist, "risk at markers and the risk CDF with CIs")):
        p = sub.add_parser(name, help=help_text)
        _data_args(p)
        _model_args(p)
        _common_out(p)
        p.set_defaults(func=func)

    p = sub.add_parser("test-roc-equality", help="test for a common ROC across two populations")
    _data_args(p)
    p.add_argument("--method", choices=("auc", "wilcoxon", "wald"), default="auc")
    p.add_argument("--B", type=int, default=999)
    p.add_argument("--degree", type=int, default=2)
    _common_out(p)
    p.set_defaults(func=cmd_test_roc_equality)

    p = sub.add_parser("simulate", help="generate a data set from a scenario")
    p.add_argument("--scenario", default="default", help="built-in name or scenario JSON file")
    p.add_argument("--data", help="write the generated sample to this CSV file")
    _common_out(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", help="Monte Carlo experiment over a scenario")
    p.add_argument("--scenario", default="default", help="built-in name or scenario JSON file")
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--B", type=int, default=0, help="bootstrap replicates per Monte Carlo replicate")
    p.add_argument("--methods", type=_name_list, default=METHODS)
    p.add_argument("--modes", type=_name_list, default=MODES)
    p.add_argument("--estimands", type=_name_list, default=ESTIMANDS)
    p.add_argument("--ci-methods", type=_name_list, default=None)
    p.add_argument("--ci-modes", type=_name_list, default=None)
    p.add_argument("--ci-estimands", type=_name_list, default=None)
    p.add_argument("--roc-grid", type=_float_list, default=DEFAULT_T_GRID)
    p.add_argument("--q-grid", type=_float_list, default=DEFAULT_Q_GRID,
                   help="risk quantile levels defining the risk and risk-CDF grids")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--dump", help="save per-replicate estimates to this .npz file")
    p.add_argument("--timing", action="store_true", help="include wall-clock time in the report")
    _common_out(p)
    p.set_defaults(func=_cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (DataError, ValueError, OSError) as exc:
        print(f"stdmarker: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (StdMarkerError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"stdmarker: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
