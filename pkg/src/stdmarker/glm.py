"""Logistic regression with a fixed offset, fitted by IRLS with step-halving."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit

from .dataset import StudySample
from .errors import ConvergenceError, DataError, SeparationError

MAX_ITER = 100
SEPARATION_BOUND = 30.0


@dataclass(frozen=True, eq=False)
class GlmFit:
    coefficients: np.ndarray
    covariance: np.ndarray
    converged: bool
    iterations: int
    log_likelihood: float
    loglik_trace: list = field(default_factory=list, repr=False)


def compute_offsets(sample: StudySample, pooled: bool = False) -> np.ndarray:
    """Logit-scale offsets.

    Per stratum (default) the offset is ``log(n_case/n_control)`` of that
    stratum, i.e. the logit of the empirical (or, for case-control data,
    sampled) case fraction.  ``pooled=True`` gives the constant
    ``log(n_D/n_Dbar)`` used by the empirical-likelihood score equations.
    """
    if pooled:
        n_case, n_ctrl = sample.n_cases, sample.n_controls
        if n_case == 0 or n_ctrl == 0:
            raise DataError("sample needs at least one case and one control")
        return np.full(len(sample), np.log(n_case / n_ctrl))
    table = np.empty(len(sample.strata))
    for i, (s, (n_case, n_ctrl)) in enumerate(sample.counts().items()):
        if n_case == 0 or n_ctrl == 0:
            raise DataError(f"stratum {s!r} has case fraction 0 or 1; logit offset undefined")
        table[i] = np.log(n_case / n_ctrl)
    return table[sample.codes]


def _loglik(eta, y, w):
    return float(np.sum(w * (y * log_expit(eta) + (1 - y) * log_expit(-eta))))


def fit_logistic_offset(features, response, offsets=None, weights=None, start=None,
                        tol: float = 1e-8, max_iter: int = MAX_ITER) -> GlmFit:
    """Maximise the (optionally weighted) Bernoulli log-likelihood.

    The linear predictor is ``features @ beta + offsets``.  ``weights``
    multiply each record's log-likelihood contribution, e.g. inverse
    sampling probabilities.  Converged when every score component is at
    most ``tol * n`` in absolute value or the coefficient update is below
    1e-10.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(response, dtype=float)
    n, k = X.shape
    if len(y) != n:
        raise DataError("features and response have different numbers of rows")
    if y.min() == y.max():
        raise DataError("response is constant; logistic regression is undefined")
    o = np.zeros(n) if offsets is None else np.asarray(offsets, dtype=float)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    beta = np.zeros(k) if start is None else np.asarray(start, dtype=float).copy()

    eta = X @ beta + o
    ll = _loglik(eta, y, w)
    trace = [ll]
    for it in range(1, max_iter + 1):
        mu = expit(eta)
        score = X.T @ (w * (y - mu))
        info = (X * (w * mu * (1 - mu))[:, None]).T @ X
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, score, rcond=None)[0]
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            eta_c = X @ cand + o
            ll_c = _loglik(eta_c, y, w)
            if ll_c >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        change = np.max(np.abs(cand - beta))
        beta, eta, ll = cand, eta_c, ll_c
        trace.append(ll)
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            raise SeparationError("coefficients diverging (|beta| > 30); complete separation suspected")
        mu = expit(eta)
        score = X.T @ (w * (y - mu))
        if np.max(np.abs(score)) <= tol * n or change <= 1e-10:
            info = (X * (w * mu * (1 - mu))[:, None]).T @ X
            try:
                cov = np.linalg.inv(info)
            except np.linalg.LinAlgError:
                cov = np.linalg.pinv(info)
            return GlmFit(beta, 0.5 * (cov + cov.T), True, it, ll, trace)
    raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations")
