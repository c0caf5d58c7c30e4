"""Equality of ROC curves across two populations, and Wald tests on covariate terms."""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from scipy import stats

from .basis import BasisSpec
from .dataset import StudySample
from .errors import DataError, NumericalError, StdMarkerError
from .glm import GlmFit, compute_offsets, fit_logistic_offset
from .inference import replicate_rng, resample_indices
from .standardize import StandardizedSample, standardize_sample

AUC_DIFF = "auc"
WILCOXON = "wilcoxon"
EXACT_MAX = 10


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str
    B: int | None = None

    __test__ = False  # keep pytest from collecting this class


def _two_populations(std: StandardizedSample):
    strata = sorted(std.sample.strata, key=str)
    if len(strata) != 2:
        raise DataError(f"ROC equality tests need exactly two populations, got {len(strata)}")
    groups = []
    for s in strata:
        u = std.u_hat[(std.sample.codes == std.sample.stratum_index(s)) & (std.sample.d == 1)]
        if len(u) == 0:
            raise DataError(f"population {s!r} has no cases")
        groups.append(u)
    return strata, groups


def _auc_diff(std):
    _, (a, b) = _two_populations(std)
    return float(a.mean() - b.mean())


def _exact_rank_sum_pvalue(ranks2: np.ndarray, n1: int, observed2: int) -> float:
    """Two-sided exact p-value of a rank sum, ranks given doubled (integers).

    Counts size-``n1`` subsets by their doubled rank sum with a knapsack
    recursion, so ties (half-integer midranks) are handled exactly.
    """
    total_max = int(ranks2.sum())
    dp = np.zeros((n1 + 1, total_max + 1), dtype=np.int64)
    dp[0, 0] = 1
    for r in ranks2:
        r = int(r)
        dp[1:, r:] += dp[:-1, : total_max + 1 - r].copy()
    counts = dp[n1]
    n = len(ranks2)
    center2 = n1 * (n + 1)  # doubled null mean of the rank sum
    sums = np.arange(total_max + 1)
    extreme = np.abs(sums - center2) >= abs(observed2 - center2)
    return float(counts[extreme].sum() / comb(n, n1))


def wilcoxon_rank_sum(a, b, exact: bool | None = None) -> tuple[float, float]:
    """Rank sum of ``a`` within the pooled sample and its two-sided p-value.

    Exact enumeration when both groups have at most 10 members (unless
    ``exact`` says otherwise); else the normal approximation with tie and
    continuity corrections.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n1, n2 = len(a), len(b)
    n = n1 + n2
    ranks = stats.rankdata(np.concatenate([a, b]))
    w = float(ranks[:n1].sum())
    if exact is None:
        exact = n1 <= EXACT_MAX and n2 <= EXACT_MAX
    if exact:
        ranks2 = np.rint(2 * ranks).astype(np.int64)
        return w, _exact_rank_sum_pvalue(ranks2, n1, int(ranks2[:n1].sum()))
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(tie_counts ** 3 - tie_counts)) / (n * (n - 1))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return w, 1.0
    dev = abs(w - n1 * (n + 1) / 2.0)
    z = max(dev - 0.5, 0.0) / np.sqrt(var)
    return w, float(min(1.0, 2.0 * stats.norm.sf(z)))


def test_roc_equality(std: StandardizedSample, method: str = AUC_DIFF, B: int = 999,
                      seed: int = 0) -> TestResult:
    """Compare the case placement-value distributions of two populations.

    Populations are ordered by label.  ``auc`` uses the difference in mean
    case placement values with a recentred design-respecting bootstrap
    null; ``wilcoxon`` the rank-sum statistic of case placement values.
    """
    if method == WILCOXON:
        _, (a, b) = _two_populations(std)
        w, p = wilcoxon_rank_sum(a, b)
        return TestResult(w, p, WILCOXON)
    if method != AUC_DIFF:
        raise DataError(f"unknown ROC equality method {method!r}")
    observed = _auc_diff(std)
    sample = std.sample
    deviations = []
    for b in range(B):
        boot = sample.take(resample_indices(sample, replicate_rng(seed, b)))
        try:
            deviations.append(_auc_diff(standardize_sample(boot, ties=std.ties)) - observed)
        except StdMarkerError:
            continue
    if not deviations:
        raise NumericalError("every bootstrap replicate failed")
    dev = np.abs(np.array(deviations))
    # relative slack absorbs rounding in the recentred replicates
    p = (1 + np.sum(dev >= abs(observed) * (1 - 1e-12))) / (1 + len(dev))
    return TestResult(observed, float(p), AUC_DIFF, B)


test_roc_equality.__test__ = False


def wald_test_covariate_effect(fit: GlmFit, coefficient_indices, covariance=None) -> TestResult:
    """Joint Wald test that the listed coefficients are zero.

    ``covariance`` should be a bootstrap covariance (full, or already
    restricted to the indices); model-based standard errors ignore the
    estimation of placement values and offsets.
    """
    idx = np.atleast_1d(np.asarray(coefficient_indices, dtype=int))
    if idx.size == 0:
        raise DataError("empty coefficient index set")
    coef = np.asarray(fit.coefficients)
    if idx.min() < 0 or idx.max() >= len(coef):
        raise DataError("coefficient index out of range")
    V = np.asarray(fit.covariance if covariance is None else covariance, dtype=float)
    if V.shape != (idx.size, idx.size):
        V = V[np.ix_(idx, idx)]
    b = coef[idx]
    if not np.isfinite(V).all() or np.linalg.cond(V) > 1e12:
        raise NumericalError("covariance of the tested coefficients is singular")
    stat = float(b @ np.linalg.solve(V, b))
    return TestResult(stat, float(stats.chi2.sf(stat, idx.size)), "wald")


def interaction_design(std: StandardizedSample, basis: BasisSpec | None = None):
    """Design with population main effects and population-by-r(U) interactions in G.

    Columns: ``1, r(U), then for each non-reference population s: I_s, I_s * r(U)``.
    Returns ``(X, offsets, interaction_columns)``.
    """
    basis = basis or BasisSpec()
    R = basis(std.u_hat)
    cols = [np.ones(len(std)), *R.T]
    extra = []
    for j in range(1, len(std.sample.strata)):
        ind = (std.sample.codes == j).astype(float)
        start = len(cols)
        cols.append(ind)
        cols.extend((ind[:, None] * R).T)
        extra.extend(range(start, len(cols)))
    return np.column_stack(cols), compute_offsets(std.sample), extra


def fit_interaction_model(std: StandardizedSample, basis: BasisSpec | None = None):
    X, offsets, extra = interaction_design(std, basis)
    return fit_logistic_offset(X, std.sample.d, offsets), extra


def bootstrap_coefficient_covariance(sample: StudySample, basis: BasisSpec | None = None,
                                     B: int = 200, seed: int = 0, ties: str = "strict"):
    """Bootstrap covariance of the interaction-model coefficients (re-standardizing each replicate)."""
    coefs = []
    for b in range(B):
        boot = sample.take(resample_indices(sample, replicate_rng(seed, b)))
        try:
            fit, _ = fit_interaction_model(standardize_sample(boot, ties=ties), basis)
        except StdMarkerError:
            continue
        coefs.append(fit.coefficients)
    if len(coefs) < 2:
        raise NumericalError("too few successful bootstrap replicates for a covariance")
    return np.cov(np.array(coefs), rowvar=False)


def covariate_interaction_wald(sample: StudySample, basis: BasisSpec | None = None, B: int = 200,
                               seed: int = 0, ties: str = "strict") -> TestResult:
    """Wald test that population terms in G vanish, i.e. a common ROC curve."""
    std = standardize_sample(sample, ties=ties)
    fit, extra = fit_interaction_model(std, basis)
    cov = bootstrap_coefficient_covariance(sample, basis, B, seed, ties)
    res = wald_test_covariate_effect(fit, extra, cov)
    return TestResult(res.statistic, res.p_value, "wald", B)
