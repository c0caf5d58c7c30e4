import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from stdmarker.dataset import StudySample
from stdmarker.errors import DataError, NumericalError
from stdmarker.glm import GlmFit
from stdmarker.hypotests import (covariate_interaction_wald, test_roc_equality as roc_equality,
                                 wald_test_covariate_effect, wilcoxon_rank_sum)
from stdmarker.simgen import default_scenario, generate_sample, unequal_roc_scenario
from stdmarker.standardize import standardize_sample


def permutation_pvalue(a, b):
    pooled = np.concatenate([a, b])
    ranks = stats.rankdata(pooled)
    n1, n = len(a), len(pooled)
    center = n1 * (n + 1) / 2
    obs = abs(ranks[:n1].sum() - center)
    sums = [ranks[list(c)].sum() for c in itertools.combinations(range(n), n1)]
    return np.mean(np.abs(np.array(sums) - center) >= obs - 1e-9)


small = st.lists(st.integers(0, 6), min_size=1, max_size=8)


@settings(max_examples=150, deadline=None)
@given(small, small)
def test_exact_matches_permutation(a, b):
    a, b = np.array(a, float) / 6, np.array(b, float) / 6
    w, p = wilcoxon_rank_sum(a, b)
    assert w == pytest.approx(stats.rankdata(np.r_[a, b])[: len(a)].sum())
    assert p == pytest.approx(permutation_pvalue(a, b), abs=1e-10)


def test_normal_approximation_matches_scipy():
    rng = np.random.default_rng(0)
    a, b = np.round(rng.random(40), 1), np.round(rng.random(55) + 0.1, 1)
    w, p = wilcoxon_rank_sum(a, b)
    ref = stats.mannwhitneyu(a, b, alternative="two-sided", use_continuity=True, method="asymptotic")
    assert w - len(a) * (len(a) + 1) / 2 == pytest.approx(ref.statistic)
    assert p == pytest.approx(ref.pvalue, rel=1e-10)


def test_roc_equality_statistics(scenario, sim_std):
    res = roc_equality(sim_std, "auc", B=99, seed=1)
    u = sim_std.u_hat
    d, codes = sim_std.sample.d, sim_std.sample.codes
    diff = u[(codes == 0) & (d == 1)].mean() - u[(codes == 1) & (d == 1)].mean()
    assert res.statistic == pytest.approx(diff)
    assert 0 < res.p_value <= 1 and res.B == 99
    again = roc_equality(sim_std, "auc", B=99, seed=1)
    assert again == res
    w = roc_equality(sim_std, "wilcoxon")
    assert 0 < w.p_value <= 1


def test_roc_equality_needs_two_populations(sim_sample):
    with pytest.raises(DataError, match="exactly two"):
        roc_equality(standardize_sample(sim_sample.subset(["pop1"])), "wilcoxon")
    with pytest.raises(DataError):
        roc_equality(standardize_sample(sim_sample), "bogus")


def test_auc_test_size_under_common_roc():
    scn = default_scenario(n=150)
    rejections = [roc_equality(standardize_sample(generate_sample(scn, [77, r])), "auc", B=199,
                               seed=r).p_value <= 0.05 for r in range(60)]
    # nominal 5%; binomial sd ~ 2.8% at 60 replicates
    assert np.mean(rejections) <= 0.15


def test_wilcoxon_power_under_different_rocs():
    scn = unequal_roc_scenario(auc_ratio=1.2)
    p = [roc_equality(standardize_sample(generate_sample(scn, [5, r])), "wilcoxon").p_value
         for r in range(10)]
    assert np.median(p) < 0.05


def test_wald_identities():
    fit = GlmFit(np.array([0.5, 1.0, -2.0]), np.eye(3), True, 3, -1.0)
    res = wald_test_covariate_effect(fit, [1, 2])
    assert res.statistic == pytest.approx(5.0)
    assert res.p_value == pytest.approx(stats.chi2.sf(5.0, 2))
    scaled = wald_test_covariate_effect(fit, [1], covariance=np.array([[4.0]]))
    assert scaled.statistic == pytest.approx(0.25)
    with pytest.raises(NumericalError):
        wald_test_covariate_effect(fit, [1, 2], covariance=np.ones((2, 2)))
    with pytest.raises(DataError):
        wald_test_covariate_effect(fit, [5])


def test_interaction_wald_common_vs_different():
    common = covariate_interaction_wald(generate_sample(default_scenario(n=300), 21), B=60, seed=1)
    assert common.p_value > 0.01
    diff_scn = unequal_roc_scenario(auc_ratio=1.25)
    from dataclasses import replace
    diff_scn = replace(diff_scn, populations=tuple(replace(p, n=800) for p in diff_scn.populations))
    diff = covariate_interaction_wald(generate_sample(diff_scn, 21), B=60, seed=1)
    assert diff.p_value < 0.01
