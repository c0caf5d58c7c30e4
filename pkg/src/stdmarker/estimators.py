"""Common-ROC estimators of the standardized-marker logistic model.

All three parametric estimators target ``G(u) = beta0 + beta1 @ r(u)``, the
log-derivative of the common ROC curve:

* EML - logistic regression of D on r(U_hat) with the pooled offset
  log(n_D/n_Dbar), plus the empirical-likelihood weights and step CDFs;
* CML - the offset logistic likelihood maximised subject to ROC(1) = 1;
* PSL - the case-only pseudo-likelihood sum(G(U_hat_i)) under the same constraint.

For CML and PSL the intercept is profiled out through
``solve_constrained_beta0`` and the remaining coefficients are found by a
damped Newton iteration with analytic derivatives.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit

from .basis import BasisSpec, log_tilt_integral, tilt_moments
from .errors import ConvergenceError, DataError, SeparationError
from .glm import SEPARATION_BOUND, compute_offsets, fit_logistic_offset
from .standardize import StandardizedSample

GRAD_TOL = 1e-7
CONCAVITY_GRID = np.linspace(0.0, 1.0, 1001)
COLLINEAR_RTOL = 1e-12


class Method(str, Enum):
    EML = "eml"
    CML = "cml"
    PSL = "psl"


class NonConcaveWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False, kw_only=True)
class RiskModelFit:
    beta0: float
    beta1: np.ndarray
    basis: BasisSpec
    method: Method
    offsets: np.ndarray | None = field(default=None, repr=False)
    prevalences: dict = field(default_factory=dict)
    log_likelihood: float = float("nan")
    iterations: int = 0

    @property
    def beta(self) -> np.ndarray:
        return np.concatenate([[self.beta0], self.beta1])

    def G(self, u) -> np.ndarray:
        return self.beta0 + self.basis(u) @ self.beta1

    def dG(self, u) -> np.ndarray:
        return self.basis.derivative(u) @ self.beta1

    def constraint_residual(self) -> float:
        """``int_0^1 exp(G) - 1``."""
        return float(np.expm1(self.beta0 + log_tilt_integral(self.beta1, self.basis)))

    def is_decreasing(self, grid=CONCAVITY_GRID, tol: float = 1e-12) -> bool:
        g = self.G(grid)
        return bool(np.all(np.diff(g) <= tol))


@dataclass(frozen=True)
class StepRoc:
    """Right-continuous nondecreasing step function: value ``heights[k]`` on ``[t[k], t[k+1])``."""

    t: np.ndarray
    heights: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.t, t, side="right") - 1
        out = np.where(k >= 0, self.heights[np.maximum(k, 0)], 0.0)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class PiecewiseLinearRoc:
    """Continuous ROC through knots ``(t, heights)``, linear in between."""

    t: np.ndarray
    heights: np.ndarray

    def __call__(self, t):
        out = np.interp(t, self.t, self.heights)
        return out if np.ndim(out) else float(out)

    def derivative(self, t):
        """Right-hand slope (left-hand at t = 1)."""
        slopes = np.diff(self.heights) / np.diff(self.t)
        k = np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, len(slopes) - 1)
        out = slopes[k]
        return out if np.ndim(out) else float(out)


@dataclass(frozen=True, eq=False, kw_only=True)
class EmlFit(RiskModelFit):
    p_hat: np.ndarray = field(repr=False)
    u_support: np.ndarray = field(repr=False)
    cdf_control: np.ndarray = field(repr=False)
    cdf_case: np.ndarray = field(repr=False)
    n_cases: int
    n_controls: int

    def cdf_at(self, which: str, u):
        """Step CDF of U among controls (``which="control"``) or cases at ``u``."""
        cdf = self.cdf_control if which == "control" else self.cdf_case
        k = np.searchsorted(self.u_support, u, side="right") - 1
        out = np.where(k >= 0, cdf[np.maximum(k, 0)], 0.0)
        return out if np.ndim(out) else float(out)

    def step_roc(self) -> StepRoc:
        return StepRoc(self.cdf_control, self.cdf_case)

    def roc_curve(self) -> PiecewiseLinearRoc:
        return concavify(self.step_roc())


# -- EML -------------------------------------------------------------------

def fit_eml(std: StandardizedSample, basis: BasisSpec | None = None) -> EmlFit:
    basis = basis or BasisSpec()
    d = std.sample.d
    n_case = int(d.sum())
    n_ctrl = len(d) - n_case
    if n_case == 0 or n_ctrl == 0:
        raise DataError("EML needs at least one case and one control")
    R = basis(std.u_hat)
    X = np.column_stack([np.ones(len(d)), R])
    offsets = compute_offsets(std.sample, pooled=True)
    # tighter than the GLM default so the score equations hold to ~1e-9
    glm = fit_logistic_offset(X, d, offsets, tol=1e-12)
    beta0, beta1 = float(glm.coefficients[0]), glm.coefficients[1:].copy()

    eg = np.exp(beta0 + R @ beta1)
    p_hat = 1.0 / (n_ctrl + n_case * eg)
    support, inverse = np.unique(std.u_hat, return_inverse=True)
    cdf_control = np.cumsum(np.bincount(inverse, weights=p_hat, minlength=len(support)))
    cdf_case = np.cumsum(np.bincount(inverse, weights=p_hat * eg, minlength=len(support)))
    return EmlFit(
        beta0=beta0, beta1=beta1, basis=basis, method=Method.EML, offsets=offsets,
        prevalences=_prevalences(std), log_likelihood=glm.log_likelihood,
        iterations=glm.iterations, p_hat=p_hat, u_support=support,
        cdf_control=cdf_control, cdf_case=cdf_case, n_cases=n_case, n_controls=n_ctrl,
    )


def eml_score_residuals(fit: RiskModelFit, std: StandardizedSample) -> np.ndarray:
    """Residuals of the empirical-likelihood score equations at ``fit``'s coefficients.

    Entry 0 is the beta0 equation, the rest the beta1 equations.
    """
    d = std.sample.d
    n_case = d.sum()
    n_ctrl = len(d) - n_case
    R = fit.basis(std.u_hat)
    a = (n_case / n_ctrl) * np.exp(fit.beta0 + R @ fit.beta1)
    frac = a / (1.0 + a)
    r0 = n_case - frac.sum()
    r1 = R[d == 1].sum(axis=0) - R.T @ frac
    return np.concatenate([[r0], r1])


def _prevalences(std: StandardizedSample) -> dict:
    out = {}
    for s in std.sample.strata:
        try:
            out[s] = std.sample.prevalence(s)
        except DataError:
            pass
    return out


# -- constrained fits --------------------------------------------------------

def _newton_maximise(fn, b0, max_iter=100):
    """Damped Newton ascent; ``fn(b) -> (value, grad, hess)``."""
    b = np.asarray(b0, dtype=float).copy()
    f, g, H = fn(b)
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) <= GRAD_TOL:
            return b, f, it - 1, True
        w, V = np.linalg.eigh(-0.5 * (H + H.T))
        # force a positive-definite model of -H so the step ascends
        w = np.maximum(np.abs(w), 1e-8 * max(1.0, np.max(np.abs(w))))
        step = V @ ((V.T @ g) / w)
        t = 1.0
        for _ in range(60):
            cand = b + t * step
            fc, gc, Hc = fn(cand)
            if np.isfinite(fc) and fc >= f - 1e-13 * abs(f):
                break
            t *= 0.5
        else:
            return b, f, it, np.max(np.abs(g)) <= 1e3 * GRAD_TOL
        if np.max(np.abs(cand)) > SEPARATION_BOUND:
            raise SeparationError("constrained fit diverging (|beta| > 30); separation suspected")
        moved = np.max(np.abs(cand - b))
        b, f, g, H = cand, fc, gc, Hc
        if moved < 1e-13:
            return b, f, it, np.max(np.abs(g)) <= 1e3 * GRAD_TOL
    return b, f, max_iter, np.max(np.abs(g)) <= GRAD_TOL


def _cml_objective(R, d, offsets, basis):
    def fn(b):
        log_z, m, C = tilt_moments(b, basis)
        eta = offsets - log_z + R @ b
        pi = expit(eta)
        val = float(np.sum(d * log_expit(eta) + (1 - d) * log_expit(-eta)))
        Z = R - m
        resid = d - pi
        grad = Z.T @ resid
        hess = -(Z * (pi * (1 - pi))[:, None]).T @ Z - resid.sum() * C
        return val, grad, hess
    return fn


def _psl_objective(case_R, basis):
    n = len(case_R)
    s = case_R.sum(axis=0)

    def fn(b):
        log_z, m, C = tilt_moments(b, basis)
        return float(b @ s - n * log_z), s - n * m, -n * C
    return fn


def _concave_maximise(fn, dim, basis):
    """Maximise ``fn`` subject to dG/du <= 0 on the concavity grid (linear in beta1)."""
    A = basis.derivative(CONCAVITY_GRID)
    res = minimize(
        lambda b: tuple(-v for v in fn(b)[:2]), np.zeros(dim), jac=True, method="SLSQP",
        constraints=[{"type": "ineq", "fun": lambda b: -(A @ b), "jac": lambda b: -A}],
        options={"maxiter": 500, "ftol": 1e-14},
    )
    if not res.success:
        raise ConvergenceError(f"concavity-constrained fit failed: {res.message}")
    return res.x, -res.fun, res.nit


def _run_starts(fn, starts, dim):
    best, error = None, None
    for s in starts:
        s = np.zeros(dim) if s is None else np.asarray(s, dtype=float)
        try:
            b, f, it, ok = _newton_maximise(fn, s)
        except SeparationError as exc:
            error = exc
            continue
        if ok and (best is None or f > best[1]):
            best = (b, f, it)
    if best is None:
        raise error or ConvergenceError(
            "constrained likelihood maximisation did not converge from any start")
    return best


def _finish(b, f, it, basis, method, offsets, prevalences, concave):
    log_z = tilt_moments(b, basis)[0]
    fit = RiskModelFit(beta0=-log_z, beta1=np.asarray(b, dtype=float), basis=basis, method=method,
                       offsets=offsets, prevalences=prevalences, log_likelihood=f, iterations=it)
    if not concave and not fit.is_decreasing():
        warnings.warn(f"{method.value.upper()} fit has a non-monotone log ROC-derivative; "
                      "the ROC curve is not concave", NonConcaveWarning, stacklevel=3)
    return fit


def fit_cml(std: StandardizedSample, basis: BasisSpec | None = None, offsets=None,
            concave: bool = False, starts=None) -> RiskModelFit:
    """Constrained estimated maximum likelihood.

    ``offsets`` default to the per-stratum empirical logits.  ``starts`` are
    initial values for beta1; by default the unconstrained offset-logistic
    estimate and zero, keeping the better optimum.  With ``concave=True``
    the fit is restricted to nonincreasing G.
    """
    basis = basis or BasisSpec()
    d = std.sample.d.astype(float)
    if d.min() == d.max():
        raise DataError("response is constant; CML needs cases and controls")
    if offsets is None:
        offsets = compute_offsets(std.sample)
    offsets = np.asarray(offsets, dtype=float)
    R = basis(std.u_hat)
    fn = _cml_objective(R, d, offsets, basis)
    if concave:
        b, f, it = _concave_maximise(fn, basis.dim, basis)
    else:
        if starts is None:
            glm = fit_logistic_offset(np.column_stack([np.ones(len(d)), R]), d, offsets)
            starts = (glm.coefficients[1:], None)
        b, f, it = _run_starts(fn, list(starts), basis.dim)
    return _finish(b, f, it, basis, Method.CML, offsets, _prevalences(std), concave)


def fit_psl(case_us, basis: BasisSpec | None = None, concave: bool = False,
            prevalences: dict | None = None) -> RiskModelFit:
    """Constrained pseudo-likelihood from case placement values only."""
    basis = basis or BasisSpec()
    case_us = np.asarray(case_us, dtype=float)
    if len(case_us) == 0:
        raise DataError("PSL needs at least one case placement value")
    fn = _psl_objective(basis(case_us), basis)
    if concave:
        b, f, it = _concave_maximise(fn, basis.dim, basis)
    else:
        b, f, it, ok = _newton_maximise(fn, np.zeros(basis.dim))
        if not ok:
            raise ConvergenceError("PSL maximisation did not converge")
    return _finish(b, f, it, basis, Method.PSL, None, dict(prevalences or {}), concave)


# -- nonparametric -----------------------------------------------------------

def fit_nonparametric_aroc(std: StandardizedSample) -> StepRoc:
    """Empirical CDF of the case placement values (covariate-adjusted ROC)."""
    u = std.case_u
    if len(u) == 0:
        raise DataError("no cases: the nonparametric ROC is undefined")
    t, counts = np.unique(u, return_counts=True)
    return StepRoc(t, np.cumsum(counts) / len(u))


def concavify(roc: StepRoc) -> PiecewiseLinearRoc:
    """Least concave majorant of a step ROC on [0, 1], ending at (1, 1).

    Upper hull of the step corners by Andrew's monotone chain; collinear
    points are dropped so the knots are exactly the hull's extreme points.
    """
    t = np.asarray(roc.t, dtype=float)
    h = np.asarray(roc.heights, dtype=float)
    px = [0.0] if (len(t) == 0 or t[0] > 0.0) else []
    py = [0.0] if px else []
    px.extend(t.tolist())
    py.extend(h.tolist())
    if px[-1] < 1.0:
        px.append(1.0)
        py.append(max(1.0, py[-1]))
    px = np.array(px)
    py = np.array(py)

    # turns within rounding of zero count as collinear
    def keeps(o, a, i):
        lhs = (px[a] - px[o]) * (py[i] - py[o])
        rhs = (py[a] - py[o]) * (px[i] - px[o])
        return lhs - rhs < -COLLINEAR_RTOL * (np.abs(lhs) + np.abs(rhs))

    if len(px) < 3 or np.all(keeps(np.arange(len(px) - 2), np.arange(1, len(px) - 1), np.arange(2, len(px)))):
        return PiecewiseLinearRoc(px, py)

    hull: list[int] = []
    for i in range(len(px)):
        while len(hull) >= 2 and not keeps(hull[-2], hull[-1], i):
            hull.pop()
        hull.append(i)
    return PiecewiseLinearRoc(px[hull], py[hull])
