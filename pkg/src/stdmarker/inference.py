"""Quantities derived from fitted risk models, and design-respecting bootstrap CIs.

Under the model ``logit P(D=1|U,X) = logit P(D=1|X) + G(U)`` the ROC curve is
``ROC(t) = int_0^t exp(G(u)) du``, risk is ``expit(logit rho + G(U))`` and,
when G is nonincreasing, the risk CDF at ``p`` is
``1 - (1 - rho) t - rho ROC(t)`` where ``t`` solves ``risk(t) = p``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit

from .basis import log_tilt_integral
from .dataset import Design, StudySample
from .errors import DataError, NonConcaveFitError, StdMarkerError
from .estimators import EmlFit, RiskModelFit
from .standardize import ReferenceSet, placement_value

BISECT_TOL = 1e-10
BISECT_MAX_ITER = 200
DEFAULT_B = 500


@dataclass(frozen=True)
class RocEvaluation:
    t: float
    roc: float
    roc_derivative: float


def roc_values(fit: RiskModelFit, t) -> np.ndarray:
    """ROC(t) for an array of false-positive rates."""
    t = np.asarray(t, dtype=float)
    if isinstance(fit, EmlFit):
        return np.asarray(fit.roc_curve()(t))
    with np.errstate(divide="ignore"):
        out = np.exp(fit.beta0 + log_tilt_integral(fit.beta1, fit.basis, np.zeros_like(t), t))
    return np.where(t > 0, out, 0.0)


def roc_between(fit: RiskModelFit, a, b) -> np.ndarray:
    """ROC(b) - ROC(a), integrated directly (no cancellation)."""
    return np.exp(fit.beta0 + log_tilt_integral(fit.beta1, fit.basis, a, b))


def evaluate_roc(fit: RiskModelFit, t: float) -> RocEvaluation:
    if not 0.0 <= t <= 1.0:
        raise DataError(f"t must lie in [0, 1], got {t}")
    if isinstance(fit, EmlFit):
        curve = fit.roc_curve()
        return RocEvaluation(t, float(curve(t)), float(curve.derivative(t)))
    return RocEvaluation(t, float(roc_values(fit, t)), float(np.exp(fit.G(t))))


def risk_from_u(fit: RiskModelFit, u, prevalence: float):
    return expit(logit(prevalence) + fit.G(u))


def risk_at(fit: RiskModelFit, ref: ReferenceSet, y: float, x, prevalence: float | None = None,
            ties: str = "strict") -> float:
    """Estimated P(D=1 | Y=y, X=x) using the placement value of ``y`` in stratum ``x``."""
    if prevalence is None:
        prevalence = fit.prevalences[x]
    if not 0.0 < prevalence < 1.0:
        raise DataError(f"prevalence must lie in (0, 1), got {prevalence}")
    return float(risk_from_u(fit, placement_value(ref, y, x, ties), prevalence))


def _mixture_cdf(fit, rho, t):
    return (1.0 - rho) * t + rho * roc_values(fit, t)


def _risk_cdf_monotone(fit, rho, p):
    lo = np.zeros_like(p)
    hi = np.ones_like(p)
    for _ in range(BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        above = risk_from_u(fit, mid, rho) >= p
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
        if np.max(hi - lo) <= BISECT_TOL:
            break
    t = 0.5 * (lo + hi)
    # p outside the attainable risk range
    t = np.where(p >= risk_from_u(fit, 0.0, rho), 0.0, t)
    t = np.where(p < risk_from_u(fit, 1.0, rho), 1.0, t)
    return 1.0 - _mixture_cdf(fit, rho, t)


def _risk_cdf_levelset(fit, rho, p, grid_size=2049):
    """P(G(U) <= logit p - logit rho) by locating every crossing of the level."""
    grid = np.linspace(0.0, 1.0, grid_size)
    g = fit.G(grid)
    out = np.empty(len(p))
    for j, pj in enumerate(p):
        level = logit(pj) - logit(rho)
        s = g - level
        cuts = [0.0]
        for k in np.flatnonzero(np.sign(s[:-1]) * np.sign(s[1:]) < 0):
            cuts.append(brentq(lambda u: float(fit.G(u)) - level, grid[k], grid[k + 1], xtol=BISECT_TOL))
        cuts.append(1.0)
        cuts = np.array(cuts)
        mids = 0.5 * (cuts[:-1] + cuts[1:])
        keep = fit.G(mids) <= level
        F = _mixture_cdf(fit, rho, cuts)
        out[j] = float(np.sum(np.diff(F)[keep]))
    return out


def risk_cdf(fit: RiskModelFit, prevalence: float, p, allow_nonmonotone: bool = False):
    """CDF of risk, P(Risk <= p | X=x), for a stratum with prevalence ``prevalence``.

    Requires a nonincreasing fitted G, where risk is monotone in U.
    Otherwise raise ``NonConcaveFitError`` unless ``allow_nonmonotone``, in
    which case the level set {u: risk(u) <= p} is integrated directly
    against the fitted distribution of U.
    """
    scalar = np.ndim(p) == 0
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if np.any((p <= 0) | (p >= 1)):
        raise DataError("risk thresholds p must lie in (0, 1)")
    if not 0.0 < prevalence < 1.0:
        raise DataError(f"prevalence must lie in (0, 1), got {prevalence}")
    if fit.is_decreasing():
        out = _risk_cdf_monotone(fit, prevalence, p)
    elif allow_nonmonotone:
        out = _risk_cdf_levelset(fit, prevalence, p)
    else:
        raise NonConcaveFitError(
            "fitted log ROC-derivative is not nonincreasing, so the risk-CDF root equation is "
            "ill-posed; use risk_cdf_eml or pass allow_nonmonotone=True")
    return float(out[0]) if scalar else out


def risk_cdf_eml(fit: EmlFit, x, prevalence: float | None = None, p=0.5):
    """Empirical-likelihood risk CDF: ``1 - F_x(u(p, x))``.

    ``F_x`` mixes the fitted control and case CDFs of U by prevalence and
    ``u(p, x)`` is the largest observed placement value whose estimated risk
    is at least ``p``.  If no placement value reaches ``p`` the CDF is 1.
    """
    if prevalence is None:
        prevalence = fit.prevalences[x]
    scalar = np.ndim(p) == 0
    p = np.atleast_1d(np.asarray(p, dtype=float))
    risk = risk_from_u(fit, fit.u_support, prevalence)
    f_mix = (1.0 - prevalence) * fit.cdf_control + prevalence * fit.cdf_case
    meets = risk[None, :] >= p[:, None]
    any_meet = meets.any(axis=1)
    last = len(risk) - 1 - np.argmax(meets[:, ::-1], axis=1)
    out = np.where(any_meet, 1.0 - f_mix[last], 1.0)
    return float(out[0]) if scalar else out


# -- bootstrap ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CiResult:
    point: float | np.ndarray
    lower: float | np.ndarray
    upper: float | np.ndarray
    B: int
    seed: int
    n_failed: int = 0
    replicates: np.ndarray | None = field(default=None, repr=False)


def _resampling_cells(sample: StudySample) -> np.ndarray:
    if sample.design.kind is Design.CASE_CONTROL:
        return sample.codes * 2 + sample.d
    return sample.codes


def resample_indices(sample: StudySample, rng: np.random.Generator) -> np.ndarray:
    """Bootstrap row indices that respect the sampling design.

    Records are redrawn within their population (cohort), or within
    population-by-disease cells (case-control), so case and control counts
    per population are preserved for case-control data.  Draws are tied to
    record positions rather than labels.
    """
    cells = _resampling_cells(sample)
    order = np.argsort(cells, kind="stable")
    counts = np.bincount(cells)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    u = rng.random(len(cells))
    c = cells[order]
    pick = order[starts[c] + (u[order] * counts[c]).astype(np.intp)]
    idx = np.empty_like(order)
    idx[order] = pick
    return idx


def replicate_rng(seed: int, b: int) -> np.random.Generator:
    """Independent stream for replicate ``b``; identical regardless of scheduling."""
    return np.random.default_rng([int(seed), int(b)])


def percentile_interval(replicates: np.ndarray, alpha: float = 0.05):
    """Order statistics at alpha/2 and 1 - alpha/2 (inverted-CDF definition)."""
    return (np.quantile(replicates, alpha / 2, axis=0, method="inverted_cdf"),
            np.quantile(replicates, 1 - alpha / 2, axis=0, method="inverted_cdf"))


def bootstrap_percentile_ci(statistic: Callable[[StudySample], float], sample: StudySample,
                            B: int = DEFAULT_B, seed: int = 0, alpha: float = 0.05,
                            keep_replicates: bool = False) -> CiResult:
    """Percentile bootstrap CI of ``statistic`` (scalar or vector valued)."""
    if B < 1:
        raise DataError("B must be at least 1")
    point = statistic(sample)
    reps = []
    n_failed = 0
    for b in range(B):
        idx = resample_indices(sample, replicate_rng(seed, b))
        try:
            reps.append(np.asarray(statistic(sample.take(idx)), dtype=float))
        except (StdMarkerError, FloatingPointError, np.linalg.LinAlgError):
            n_failed += 1
    if n_failed > 0.01 * B:
        warnings.warn(f"{n_failed} of {B} bootstrap replicates failed and were dropped",
                      RuntimeWarning, stacklevel=2)
    if not reps:
        raise DataError("every bootstrap replicate failed")
    reps = np.array(reps)
    lower, upper = percentile_interval(reps, alpha)
    if np.ndim(point) == 0:
        lower, upper = float(lower), float(upper)
        if not lower <= point <= upper:
            warnings.warn("percentile interval does not cover the point estimate", RuntimeWarning,
                          stacklevel=2)
    return CiResult(point, lower, upper, B, seed, n_failed, reps if keep_replicates else None)
