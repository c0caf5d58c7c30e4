"""Simulated two-population studies sharing a common ROC curve, and their true values.

Cases are generated through their placement values: U among cases has CDF
equal to the ROC curve, so ``U = ROC^{-1}(q)`` for uniform ``q`` and the
marker is the control quantile ``Y = S_control^{-1}(U)``.

The default truth is ``G(u) = beta0 + beta1 u + beta2 u^2`` with
``(beta1, beta2)`` calibrated (constrained least squares) so that ROC(t) at
t = 0.1, 0.3, 0.5, 0.7, 0.9 reproduces 0.27, 0.59, 0.77, 0.89, 0.97.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import optimize, stats
from scipy.special import expit, logit

from .basis import NODES, WEIGHTS, BasisSpec, solve_constrained_beta0
from .dataset import Design, StudyDesign, StudySample
from .errors import DataError, NumericalError
from .estimators import Method, RiskModelFit
from .inference import BISECT_TOL, risk_cdf, risk_from_u, roc_values

ROC_TARGET_T = (0.1, 0.3, 0.5, 0.7, 0.9)
ROC_TARGET_VALUES = (0.27, 0.59, 0.77, 0.89, 0.97)
# output of calibrate_beta1(); frozen so scenarios do not depend on an optimizer run
DEFAULT_BETA1 = (-3.7619002744, 1.4491037076)
DEFAULT_T_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)
DEFAULT_Q_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)


@dataclass(frozen=True)
class ControlDist:
    """Control marker distribution: ``normal`` or ``lognormal`` (parameters on the log scale)."""

    kind: str = "normal"
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("normal", "lognormal"):
            raise DataError(f"unknown control distribution {self.kind!r}")
        if not self.sigma > 0:
            raise DataError("sigma must be positive")

    def sf(self, y):
        """True placement value P(Y > y | D=0)."""
        y = np.asarray(y, dtype=float)
        if self.kind == "normal":
            return stats.norm.sf(y, self.mu, self.sigma)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(y > 0, stats.norm.sf(np.log(np.maximum(y, 1e-300)), self.mu, self.sigma), 1.0)

    def isf(self, u):
        u = np.asarray(u, dtype=float)
        z = stats.norm.isf(u, self.mu, self.sigma)
        return z if self.kind == "normal" else np.exp(z)

    def rvs(self, rng, size):
        return self.isf(rng.random(size))


@dataclass(frozen=True)
class Population:
    label: str
    prevalence: float
    control: ControlDist = field(default_factory=ControlDist)
    n: int = 300
    beta1: tuple | None = None  # population-specific ROC; None means the common one

    def __post_init__(self):
        if not 0.0 < self.prevalence < 1.0:
            raise DataError(f"prevalence must lie in (0, 1), got {self.prevalence}")
        if self.n < 1:
            raise DataError("population size must be positive")


@dataclass(frozen=True)
class Scenario:
    populations: tuple
    beta1: tuple = DEFAULT_BETA1
    basis: BasisSpec = field(default_factory=BasisSpec)
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "populations", tuple(self.populations))
        object.__setattr__(self, "beta1", tuple(float(b) for b in self.beta1))
        if len(self.beta1) != self.basis.dim:
            raise DataError("beta1 length does not match the basis dimension")
        labels = [p.label for p in self.populations]
        if len(set(labels)) != len(labels):
            raise DataError("population labels must be unique")

    @property
    def labels(self) -> tuple:
        return tuple(p.label for p in self.populations)

    def population(self, label) -> Population:
        for p in self.populations:
            if p.label == label:
                return p
        raise DataError(f"unknown population {label!r}")

    def true_fit(self, label=None) -> RiskModelFit:
        """Constrained model at the true coefficients (population ``label``'s, if it has its own)."""
        beta1 = self.beta1
        if label is not None and self.population(label).beta1 is not None:
            beta1 = self.population(label).beta1
        beta1 = np.asarray(beta1, dtype=float)
        return RiskModelFit(beta0=solve_constrained_beta0(beta1, self.basis), beta1=beta1,
                            basis=self.basis, method=Method.CML,
                            prevalences={p.label: p.prevalence for p in self.populations})

    @property
    def common_roc(self) -> bool:
        return all(p.beta1 is None for p in self.populations)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "basis": self.basis.to_dict(),
            "beta1": list(self.beta1),
            "populations": [
                {"label": p.label, "prevalence": p.prevalence, "n": p.n,
                 "control": {"dist": p.control.kind, "mu": p.control.mu, "sigma": p.control.sigma},
                 "beta1": None if p.beta1 is None else list(p.beta1)}
                for p in self.populations
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        try:
            pops = tuple(
                Population(
                    label=str(p["label"]), prevalence=float(p["prevalence"]), n=int(p["n"]),
                    control=ControlDist(p["control"].get("dist", "normal"),
                                        float(p["control"].get("mu", 0.0)),
                                        float(p["control"].get("sigma", 1.0))),
                    beta1=None if p.get("beta1") is None else tuple(float(b) for b in p["beta1"]),
                )
                for p in data["populations"]
            )
            basis = BasisSpec.from_dict(data.get("basis", {"kind": "polynomial", "degree": 2}))
            return cls(populations=pops, beta1=tuple(data.get("beta1", DEFAULT_BETA1)), basis=basis,
                       seed=int(data.get("seed", 0)), name=str(data.get("name", "custom")))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"invalid scenario: {exc}") from None


# -- built-in scenarios --------------------------------------------------------

def default_scenario(n: int = 300, seed: int = 20130101) -> Scenario:
    """Two populations, prevalences 0.44 and 0.27, controls N(0,1) and N(1,1)."""
    return Scenario(
        populations=(
            Population("pop1", 0.44, ControlDist("normal", 0.0, 1.0), n),
            Population("pop2", 0.27, ControlDist("normal", 1.0, 1.0), n),
        ),
        beta1=DEFAULT_BETA1, seed=seed, name="default",
    )


def small_sample_scenario(seed: int = 20130102) -> Scenario:
    return replace(default_scenario(n=100, seed=seed), name="small-n")


def lognormal_scenario(seed: int = 20130103) -> Scenario:
    scn = default_scenario(seed=seed)
    pops = (scn.populations[0], replace(scn.populations[1], control=ControlDist("lognormal", 1.0, 1.0)))
    return replace(scn, populations=pops, name="lognormal")


def auc(fit: RiskModelFit) -> float:
    """Area under ROC(t) = 1 - E[U | case]."""
    return float(1.0 - np.sum(WEIGHTS * NODES * np.exp(fit.G(NODES))))


def scale_for_auc(beta1, basis: BasisSpec, ratio: float) -> tuple:
    """Scale ``beta1`` so the constrained ROC's AUC is ``ratio`` times the original."""
    beta1 = np.asarray(beta1, dtype=float)

    def fit_for(c):
        b = c * beta1
        return RiskModelFit(beta0=solve_constrained_beta0(b, basis), beta1=b, basis=basis,
                            method=Method.CML)

    target = ratio * auc(fit_for(1.0))
    if not 0.5 < target < 1.0:
        raise DataError(f"target AUC {target:.4f} is not attainable")
    c = optimize.brentq(lambda c: auc(fit_for(c)) - target, 1e-6, 50.0, xtol=1e-12)
    return tuple(float(v) for v in c * beta1)


def unequal_roc_scenario(auc_ratio: float = 1.05, seed: int = 20130104) -> Scenario:
    """Default design with population 2's AUC ``auc_ratio`` times population 1's."""
    scn = default_scenario(seed=seed)
    b2 = scale_for_auc(scn.beta1, scn.basis, auc_ratio)
    pops = (scn.populations[0], replace(scn.populations[1], beta1=b2))
    return replace(scn, populations=pops, name="unequal-roc")


BUILTIN_SCENARIOS = {
    "default": default_scenario,
    "small-n": small_sample_scenario,
    "lognormal": lognormal_scenario,
    "unequal-roc": unequal_roc_scenario,
}


def load_scenario(source) -> Scenario:
    """A built-in scenario name or a path to a scenario JSON file."""
    if isinstance(source, str) and source in BUILTIN_SCENARIOS:
        return BUILTIN_SCENARIOS[source]()
    path = Path(source)
    if not path.exists():
        raise DataError(f"scenario file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"cannot parse scenario file {path}: {exc}") from None
    return Scenario.from_dict(data)


def save_scenario(scn: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scn.to_dict(), indent=2) + "\n", encoding="utf-8")


# -- generation ------------------------------------------------------------------

INVERSION_TABLE = 4097


@lru_cache(maxsize=64)
def _roc_table(beta1: tuple, basis: BasisSpec):
    fit = RiskModelFit(beta0=solve_constrained_beta0(np.array(beta1), basis), beta1=np.array(beta1),
                       basis=basis, method=Method.CML)
    grid = np.linspace(0.0, 1.0, INVERSION_TABLE)
    values = roc_values(fit, grid)
    if np.any(np.diff(values) <= 0):
        raise NumericalError("true ROC is not strictly increasing; cannot invert")
    return grid, values


_LOCAL_X, _LOCAL_W = np.polynomial.legendre.leggauss(8)


def _roc_from_knot(fit: RiskModelFit, knot, value, u):
    """ROC(u) as the tabulated ROC at ``knot`` plus a short-interval Gauss rule."""
    half = 0.5 * (u - knot)
    nodes = (knot + half)[:, None] + half[:, None] * _LOCAL_X
    return value + half * (np.exp(fit.G(nodes)) @ _LOCAL_W)


def invert_roc(fit: RiskModelFit, q) -> np.ndarray:
    """Solve ROC(u) = q by bisection to ``BISECT_TOL``.

    A 4097-point table of the quadrature ROC brackets each root; inside a
    bracket the ROC is the table value plus an 8-node Gauss rule, exact to
    rounding on intervals this short.
    """
    q = np.asarray(q, dtype=float)
    shape = q.shape
    q = q.ravel()
    grid, values = _roc_table(tuple(float(b) for b in fit.beta1), fit.basis)
    k = np.clip(np.searchsorted(values, q, side="right") - 1, 0, len(grid) - 2)
    knot, base = grid[k], values[k]
    lo, hi = knot.copy(), grid[k + 1]
    while q.size and np.max(hi - lo) > BISECT_TOL:
        mid = 0.5 * (lo + hi)
        below = _roc_from_knot(fit, knot, base, mid) < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return (0.5 * (lo + hi)).reshape(shape)


def generate_sample(scn: Scenario, seed: int | None = None) -> StudySample:
    """Exactly ``n`` subjects per population with D ~ Bernoulli(prevalence)."""
    rng = np.random.default_rng(scn.seed if seed is None else seed)
    d_all, y_all, x_all = [], [], []
    for pop in scn.populations:
        d = (rng.random(pop.n) < pop.prevalence).astype(np.int8)
        u = np.empty(pop.n)
        u[d == 0] = rng.random(int((d == 0).sum()))
        u[d == 1] = invert_roc(scn.true_fit(pop.label), rng.random(int(d.sum())))
        d_all.append(d)
        y_all.append(pop.control.isf(u))
        x_all.append(np.full(pop.n, pop.label, dtype=object))
    return StudySample(np.concatenate(d_all), np.concatenate(y_all), np.concatenate(x_all),
                       StudyDesign(Design.COHORT), strata=scn.labels,
                       codes=np.repeat(np.arange(len(scn.populations)), [p.n for p in scn.populations]))


# -- truth -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TruthTable:
    """True values per population label.

    ``p`` holds risk thresholds and ``cdf`` the risk CDF there; ``y`` holds
    markers and ``risk`` the risk there.  With default grids ``p`` are the
    risk quantiles at levels ``DEFAULT_Q_GRID`` and ``y`` the markers whose
    risk equals them, mirroring the simulation tables.
    """

    t: np.ndarray
    roc: dict
    y: dict
    risk: dict
    p: dict
    cdf: dict
    beta: dict


def risk_quantile(scn: Scenario, label, q: float) -> tuple[float, float]:
    """Return ``(p, y)`` with true CDF_R(p) = q and true Risk(y) = p in population ``label``."""
    pop = scn.population(label)
    fit = scn.true_fit(label)
    rho = pop.prevalence
    t = optimize.brentq(lambda t: (1 - rho) * t + rho * float(roc_values(fit, t)) - (1 - q),
                        0.0, 1.0, xtol=1e-14)
    return float(risk_from_u(fit, t, rho)), float(pop.control.isf(t))


def scenario_truth(scn: Scenario, t_grid=DEFAULT_T_GRID, y_grid=None, p_grid=None,
                   q_grid=DEFAULT_Q_GRID) -> TruthTable:
    """``y_grid``/``p_grid`` may be dicts keyed by population label or shared sequences."""
    t = np.asarray(t_grid, dtype=float)
    roc, ys, risk, ps, cdf, beta = {}, {}, {}, {}, {}, {}
    for pop in scn.populations:
        fit = scn.true_fit(pop.label)
        roc[pop.label] = roc_values(fit, t)
        beta[pop.label] = fit.beta
        quant = [risk_quantile(scn, pop.label, q) for q in q_grid]
        py = np.asarray(y_grid[pop.label] if isinstance(y_grid, dict) else
                        (y_grid if y_grid is not None else [yq for _, yq in quant]), dtype=float)
        pp = np.asarray(p_grid[pop.label] if isinstance(p_grid, dict) else
                        (p_grid if p_grid is not None else [pq for pq, _ in quant]), dtype=float)
        ys[pop.label] = py
        risk[pop.label] = risk_from_u(fit, pop.control.sf(py), pop.prevalence)
        ps[pop.label] = pp
        cdf[pop.label] = risk_cdf(fit, pop.prevalence, pp)
    return TruthTable(t, roc, ys, risk, ps, cdf, beta)


def calibrate_beta1(t=ROC_TARGET_T, values=ROC_TARGET_VALUES, basis: BasisSpec | None = None,
                    start=(-3.8, 1.5)) -> tuple:
    """Least-squares fit of constrained ROC values to targets, G required nonincreasing."""
    basis = basis or BasisSpec()
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)

    def resid(b):
        fit = RiskModelFit(beta0=solve_constrained_beta0(b, basis), beta1=b, basis=basis,
                           method=Method.CML)
        return roc_values(fit, t) - values

    res = optimize.least_squares(resid, np.asarray(start, dtype=float), xtol=1e-15, ftol=1e-15,
                                 gtol=1e-15)
    b = res.x
    fit = RiskModelFit(beta0=solve_constrained_beta0(b, basis), beta1=b, basis=basis, method=Method.CML)
    if not fit.is_decreasing():
        raise NumericalError("calibrated log ROC-derivative is not nonincreasing")
    return tuple(float(v) for v in b)
