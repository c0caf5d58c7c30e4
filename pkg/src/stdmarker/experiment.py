"""Monte Carlo evaluation of the estimators on simulated scenarios.

Every replicate draws a fresh sample, fits each requested estimator in each
analysis mode and records one number per
``(estimand, parameter, population, mode, method)`` key:

* ``mode="population"`` fits a population's records alone;
* ``mode="combined"`` fits one common ROC to all populations, while risk
  quantities still use the target population's prevalence and controls.

Estimands are ``roc`` (at t), ``risk`` (at marker y), ``cdf`` (risk CDF at
p) and ``beta`` (coefficient index).  The nonparametric method ``np`` only
yields ``roc``.  Relative efficiency is the variance of the
population-specific CML estimate of the same quantity divided by the
estimator's variance, both over the same replicates.
"""
from __future__ import annotations

import json
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import expit, logit

from .basis import BasisSpec
from .dataset import StudySample
from .errors import DataError, NumericalError, StdMarkerError
from .estimators import NonConcaveWarning, fit_cml, fit_eml, fit_nonparametric_aroc, fit_psl
from .inference import (bootstrap_percentile_ci, risk_cdf, risk_cdf_eml, roc_values)
from .simgen import DEFAULT_Q_GRID, DEFAULT_T_GRID, Scenario, TruthTable, generate_sample, scenario_truth
from .standardize import fit_reference, placement_values, standardize_sample

ESTIMANDS = ("roc", "risk", "cdf", "beta")
METHODS = ("eml", "cml", "psl", "np")
MODES = ("population", "combined")
BASELINE = ("population", "cml")
REPORT_VERSION = 1


class EstimateKey(NamedTuple):
    estimand: str
    index: int  # position in the estimand's grid (or coefficient index)
    population: str
    mode: str
    method: str

    def label(self) -> str:
        return f"{self.estimand}[{self.index}]|{self.population}|{self.mode}|{self.method}"


@dataclass(frozen=True)
class ExperimentConfig:
    reps: int = 1000
    bootstrap_B: int = 0
    seed: int = 0
    methods: tuple = METHODS
    modes: tuple = MODES
    estimands: tuple = ESTIMANDS
    t_grid: tuple = DEFAULT_T_GRID
    q_grid: tuple = DEFAULT_Q_GRID
    # bootstrap CIs only for these (None means all requested)
    ci_methods: tuple | None = None
    ci_modes: tuple | None = None
    ci_estimands: tuple | None = None
    alpha: float = 0.05
    ties: str = "strict"
    max_failure_rate: float = 0.05
    jobs: int = 1

    def __post_init__(self):
        for name, allowed in (("methods", METHODS), ("modes", MODES), ("estimands", ESTIMANDS)):
            bad = set(getattr(self, name)) - set(allowed)
            if bad:
                raise DataError(f"unknown {name}: {sorted(bad)}")
        if self.reps < 1:
            raise DataError("reps must be at least 1")
        if self.bootstrap_B < 0:
            raise DataError("bootstrap_B must be nonnegative")
        for name in ("methods", "modes", "estimands", "t_grid", "q_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))


def estimate_keys(labels, cfg: ExperimentConfig, methods=None, modes=None, estimands=None,
                  n_beta: int = 3) -> list[EstimateKey]:
    methods = cfg.methods if methods is None else methods
    modes = cfg.modes if modes is None else modes
    estimands = cfg.estimands if estimands is None else estimands
    sizes = {"roc": len(cfg.t_grid), "risk": len(cfg.q_grid), "cdf": len(cfg.q_grid), "beta": n_beta}
    keys = []
    for est in ESTIMANDS:
        if est not in estimands:
            continue
        for mode in MODES:
            if mode not in modes:
                continue
            for method in METHODS:
                if method not in methods or (method == "np" and est != "roc"):
                    continue
                for pop in labels:
                    keys.extend(EstimateKey(est, i, pop, mode, method) for i in range(sizes[est]))
    return keys


def _fit(method, std, basis):
    if method == "eml":
        return fit_eml(std, basis)
    if method == "cml":
        return fit_cml(std, basis)
    if method == "psl":
        return fit_psl(std.case_u, basis)
    return fit_nonparametric_aroc(std)


def estimate_vector(sample: StudySample, keys: list[EstimateKey], grids: dict, basis: BasisSpec,
                    ties: str = "strict") -> np.ndarray:
    """Evaluate ``keys`` on one sample.

    ``grids`` maps ``"t"`` to the ROC grid and, per population label,
    ``("y", label)`` and ``("p", label)`` to the risk and CDF grids.
    """
    std = standardize_sample(sample, ties=ties)
    ref = fit_reference(sample)
    groups: dict = {}
    for i, k in enumerate(keys):
        where = "all" if k.mode == "combined" else k.population
        groups.setdefault((where, k.method, k.estimand, k.population), []).append((i, k.index))
    fits: dict = {}
    shared: dict = {}
    out = np.empty(len(keys))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConcaveWarning)
        for (where, method, est, pop), items in groups.items():
            pos = [i for i, _ in items]
            idx = np.array([j for _, j in items])
            fit = fits.get((where, method))
            if fit is None:
                sub = std if where == "all" else std.subset([where])
                fit = fits[(where, method)] = _fit(method, sub, basis)
            if est in ("roc", "beta"):
                # the same for every target population of a combined fit
                cache = (where, method, est, tuple(idx))
                if cache not in shared:
                    if est == "beta":
                        shared[cache] = fit.beta[idx]
                    else:
                        t = grids["t"][idx]
                        shared[cache] = fit(t) if method == "np" else roc_values(fit, t)
                out[pos] = shared[cache]
                continue
            rho = sample.prevalence(pop)
            if est == "risk":
                y = grids[("y", pop)][idx]
                u = placement_values(ref, y, np.full(len(y), pop, dtype=object), ties)
                out[pos] = expit(logit(rho) + fit.G(u))
            elif method == "eml":
                out[pos] = risk_cdf_eml(fit, pop, rho, grids[("p", pop)][idx])
            else:
                out[pos] = risk_cdf(fit, rho, grids[("p", pop)][idx], allow_nonmonotone=True)
    return out


def truth_vector(truth: TruthTable, keys: list[EstimateKey]) -> np.ndarray:
    table = {"roc": truth.roc, "risk": truth.risk, "cdf": truth.cdf, "beta": truth.beta}
    return np.array([table[k.estimand][k.population][k.index] for k in keys], dtype=float)


def _grids(truth: TruthTable) -> dict:
    g = {"t": np.asarray(truth.t)}
    for label in truth.roc:
        g[("y", label)] = truth.y[label]
        g[("p", label)] = truth.p[label]
    return g


def _bootstrap_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(rep), 1]).generate_state(1)[0])


def _run_replicate(args):
    scn, cfg, rep, keys, ci_idx, grids = args
    sample = generate_sample(scn, seed=[int(cfg.seed), int(rep)])
    try:
        est = estimate_vector(sample, keys, grids, scn.basis, cfg.ties)
    except (StdMarkerError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return rep, None, None, None, f"{type(exc).__name__}: {exc}"
    if cfg.bootstrap_B == 0 or len(ci_idx) == 0:
        return rep, est, None, None, None
    ci_keys = [keys[i] for i in ci_idx]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            ci = bootstrap_percentile_ci(
                lambda s: estimate_vector(s, ci_keys, grids, scn.basis, cfg.ties), sample,
                B=cfg.bootstrap_B, seed=_bootstrap_seed(cfg.seed, rep), alpha=cfg.alpha)
        except StdMarkerError as exc:
            return rep, None, None, None, f"bootstrap: {exc}"
    return rep, est, np.stack([ci.lower, ci.upper]), ci.n_failed, None


@dataclass
class ReportRow:
    estimand: str
    index: int
    parameter: float
    population: str
    mode: str
    method: str
    truth: float
    mean: float
    bias: float
    bias_se: float
    variance: float
    mse: float
    coverage: float | None
    relative_efficiency: float | None
    degenerate: bool


@dataclass
class ExperimentReport:
    scenario: dict
    config: dict
    reps_requested: int
    reps_used: int
    failures: list
    rows: list
    bootstrap_failures: int = 0
    wall_clock_seconds: float | None = None
    version: int = REPORT_VERSION

    def row(self, estimand, index, population, mode, method) -> ReportRow:
        for r in self.rows:
            if (r.estimand, r.index, r.population, r.mode, r.method) == (
                    estimand, index, population, mode, method):
                return r
        raise KeyError((estimand, index, population, mode, method))

    def to_dict(self, timing: bool = False) -> dict:
        d = {
            "schema_version": self.version,
            "scenario": self.scenario,
            "config": self.config,
            "reps_requested": self.reps_requested,
            "reps_used": self.reps_used,
            "failures": self.failures,
            "bootstrap_failures": self.bootstrap_failures,
            "rows": [asdict(r) for r in self.rows],
        }
        if timing:
            d["wall_clock_seconds"] = self.wall_clock_seconds
        return _jsonable(d)

    def to_json(self, timing: bool = False) -> str:
        return json.dumps(self.to_dict(timing), indent=2, allow_nan=False) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return None if not np.isfinite(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass
class ReplicateDump:
    """Per-replicate estimates (rows) for every key (columns), for re-analysis."""

    keys: list
    truth: np.ndarray
    estimates: np.ndarray
    reps: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    ci_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def save(self, path) -> None:
        extra = {}
        if self.lower is not None:
            extra = {"lower": self.lower, "upper": self.upper}
        np.savez_compressed(path, keys=np.array([k.label() for k in self.keys]), truth=self.truth,
                            estimates=self.estimates, reps=self.reps, ci_index=self.ci_index, **extra)

    @classmethod
    def load(cls, path) -> "ReplicateDump":
        z = np.load(path, allow_pickle=False)
        keys = []
        for s in z["keys"]:
            head, pop, mode, method = str(s).split("|")
            est, idx = head.rstrip("]").split("[")
            keys.append(EstimateKey(est, int(idx), pop, mode, method))
        lower = z["lower"] if "lower" in z else None
        upper = z["upper"] if "upper" in z else None
        return cls(keys, z["truth"], z["estimates"], z["reps"], lower, upper, z["ci_index"])


def summarize(dump: ReplicateDump, truth_table: TruthTable, grids: dict) -> list[ReportRow]:
    """Report rows from replicate estimates."""
    est = dump.estimates
    n = est.shape[0]
    mean = est.mean(axis=0)
    var = est.var(axis=0, ddof=1) if n > 1 else np.zeros(est.shape[1])
    bias = mean - dump.truth
    mse = np.mean((est - dump.truth) ** 2, axis=0)
    position = {k: i for i, k in enumerate(dump.keys)}
    coverage = np.full(len(dump.keys), np.nan)
    if dump.lower is not None:
        t = dump.truth[dump.ci_index]
        hit = (dump.lower <= t) & (t <= dump.upper)
        coverage[dump.ci_index] = hit.mean(axis=0)
    rows = []
    for j, k in enumerate(dump.keys):
        base = position.get(k._replace(mode=BASELINE[0], method=BASELINE[1]))
        degenerate = n < 2 or var[j] == 0
        eff = None
        if base is not None and not degenerate and var[base] > 0:
            eff = float(var[base] / var[j])
        if k.estimand == "roc":
            param = grids["t"][k.index]
        elif k.estimand == "risk":
            param = grids[("y", k.population)][k.index]
        elif k.estimand == "cdf":
            param = grids[("p", k.population)][k.index]
        else:
            param = k.index
        rows.append(ReportRow(
            k.estimand, k.index, float(param), str(k.population), k.mode, k.method,
            float(dump.truth[j]), float(mean[j]), float(bias[j]),
            float(np.sqrt(var[j] / n)), float(var[j]), float(mse[j]),
            None if np.isnan(coverage[j]) else float(coverage[j]), eff, bool(degenerate)))
    return rows


def run_experiment(scn: Scenario, cfg: ExperimentConfig, dump_path=None,
                   return_dump: bool = False):
    """Run ``cfg.reps`` replicates of ``scn``; deterministic given ``cfg.seed``.

    Raises ``NumericalError`` (carrying the partial report as ``.report``)
    when more than ``cfg.max_failure_rate`` of replicates fail.
    """
    start = time.perf_counter()
    truth = scenario_truth(scn, cfg.t_grid, q_grid=cfg.q_grid)
    grids = _grids(truth)
    keys = estimate_keys(scn.labels, cfg, n_beta=scn.basis.dim + 1)
    if not keys:
        raise DataError("nothing to estimate with the requested methods and estimands")
    ci_keys = set(estimate_keys(scn.labels, cfg, cfg.ci_methods or cfg.methods,
                                cfg.ci_modes or cfg.modes, cfg.ci_estimands or cfg.estimands,
                                n_beta=scn.basis.dim + 1))
    ci_idx = np.array([i for i, k in enumerate(keys) if k in ci_keys], dtype=int)
    if cfg.bootstrap_B == 0:
        ci_idx = ci_idx[:0]
    tasks = [(scn, cfg, r, keys, ci_idx, grids) for r in range(cfg.reps)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_run_replicate, tasks, chunksize=max(1, cfg.reps // (4 * cfg.jobs))))
    else:
        results = [_run_replicate(t) for t in tasks]

    ok = [r for r in results if r[1] is not None]
    failures = [{"rep": r[0], "error": r[4]} for r in results if r[1] is None]
    estimates = np.array([r[1] for r in ok]).reshape(len(ok), len(keys))
    lower = upper = None
    if len(ci_idx) and ok:
        lower = np.array([r[2][0] for r in ok])
        upper = np.array([r[2][1] for r in ok])
    dump = ReplicateDump(keys, truth_vector(truth, keys), estimates,
                         np.array([r[0] for r in ok], dtype=int), lower, upper, ci_idx)
    rows = summarize(dump, truth, grids) if ok else []
    report = ExperimentReport(
        scenario=scn.to_dict(), config=_jsonable(asdict(cfg) | {"jobs": None}),
        reps_requested=cfg.reps, reps_used=len(ok), failures=failures, rows=rows,
        bootstrap_failures=int(sum(r[3] or 0 for r in ok)),
        wall_clock_seconds=time.perf_counter() - start,
    )
    if dump_path is not None and ok:
        dump.save(dump_path)
    if len(failures) > cfg.max_failure_rate * cfg.reps:
        err = NumericalError(f"{len(failures)} of {cfg.reps} replicates failed "
                             f"(limit {cfg.max_failure_rate:.0%})")
        err.report = report
        raise err
    return (report, dump) if return_dump else report
