import itertools
import math
from fractions import Fraction
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.special import expit

from stdmarker.basis import BasisSpec
from stdmarker.errors import DataError
from stdmarker.estimators import (CONCAVITY_GRID, NonConcaveWarning, StepRoc, concavify,
                                  eml_score_residuals, fit_cml, fit_eml, fit_nonparametric_aroc, fit_psl)
from stdmarker.glm import compute_offsets
from stdmarker.simgen import default_scenario, generate_sample
from stdmarker.standardize import standardize_sample

from conftest import make_sample


def profile_loglik(beta1, std):
    """CML objective with an independently integrated intercept."""
    basis = BasisSpec(degree=len(beta1))
    z = quad(lambda t: math.exp(float(basis(np.array(t)) @ beta1)), 0, 1, epsabs=1e-13)[0]
    eta = compute_offsets(std.sample) - math.log(z) + basis(std.u_hat) @ np.asarray(beta1)
    d = std.sample.d
    return float(np.sum(d * np.log(expit(eta)) + (1 - d) * np.log(expit(-eta))))


def brute_hull(px, py):
    """Upper-hull vertices in exact rational arithmetic: points strictly above every chord."""
    fx = [Fraction(v).limit_denominator(10_000) for v in px]
    fy = [Fraction(v).limit_denominator(10_000) for v in py]
    keep = []
    for k in range(len(fx)):
        above = True
        for i, j in itertools.combinations(range(len(fx)), 2):
            if not fx[i] < fx[k] < fx[j]:
                continue
            chord = fy[i] + (fy[j] - fy[i]) * (fx[k] - fx[i]) / (fx[j] - fx[i])
            if fy[k] <= chord:
                above = False
                break
        if above:
            keep.append(k)
    return px[keep], py[keep]


def chance_sample(n, seed):
    rng = np.random.default_rng(seed)
    return make_sample((rng.random(n) < 0.4).astype(int), rng.normal(size=n))


# -- EML ---------------------------------------------------------------------

def test_eml_invariants(sim_std):
    fit = fit_eml(sim_std)
    eg = np.exp(fit.G(sim_std.u_hat))
    assert abs(fit.p_hat.sum() - 1) <= 1e-8
    assert abs((fit.p_hat * eg).sum() - 1) <= 1e-8
    assert abs(fit.cdf_control[-1] - 1) <= 1e-8 and abs(fit.cdf_case[-1] - 1) <= 1e-8
    assert np.all(np.diff(fit.cdf_control) >= 0) and np.all(np.diff(fit.cdf_case) >= 0)
    assert np.max(np.abs(eml_score_residuals(fit, sim_std))) <= 1e-6


def test_eml_balanced_null_weights():
    # identical marker sets for cases and controls give beta = 0
    y = np.tile(np.arange(5.0), 2)
    fit = fit_eml(standardize_sample(make_sample(np.repeat([0, 1], 5), y)))
    np.testing.assert_allclose(fit.beta, 0.0, atol=1e-10)
    np.testing.assert_allclose(fit.p_hat, 1 / 10, atol=1e-12)


def test_eml_single_stratum_reduction(sim_sample):
    one = sim_sample.subset(["pop1"])
    a = fit_eml(standardize_sample(one))
    b = fit_eml(standardize_sample(sim_sample).subset(["pop1"]))
    np.testing.assert_array_equal(a.beta, b.beta)


def test_rank_invariance(sim_sample):
    std = standardize_sample(sim_sample)
    std2 = standardize_sample(sim_sample.with_marker(np.exp(3 * sim_sample.y) + 1))
    for f in (fit_eml, fit_cml, lambda s: fit_psl(s.case_u)):
        np.testing.assert_array_equal(f(std).beta, f(std2).beta)


# -- CML -----------------------------------------------------------------------

def test_cml_constraint_and_stationarity(sim_std):
    fit = fit_cml(sim_std)
    assert fit.constraint_residual() <= 1e-8
    h = 1e-5
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        g = (profile_loglik(fit.beta1 + e, sim_std) - profile_loglik(fit.beta1 - e, sim_std)) / (2 * h)
        assert abs(g) < 1e-4


def test_cml_beats_coarse_grid():
    sample = generate_sample_small(3)
    std = standardize_sample(sample)
    fit = fit_cml(std)
    best = max(profile_loglik(np.array([a, b]), std)
               for a in np.linspace(-8, 4, 13) for b in np.linspace(-4, 8, 13))
    assert profile_loglik(fit.beta1, std) >= best - 1e-6


def generate_sample_small(seed):
    return generate_sample(default_scenario(n=30), seed)


def test_cml_constant_response():
    std = standardize_sample(make_sample([0, 0, 0], [1.0, 2.0, 3.0]))
    with pytest.raises(DataError):
        fit_cml(std)


def test_cml_chance_marker():
    fits = [fit_cml(standardize_sample(chance_sample(2000, s))) for s in range(5)]
    slopes = np.array([f.beta1 for f in fits])
    t = np.linspace(0.05, 0.95, 10)
    from stdmarker.inference import roc_values
    for f in fits:
        np.testing.assert_allclose(roc_values(f, t), t, atol=0.06)
    # linear term's sampling sd is about 0.5 here
    assert np.all(np.abs(slopes.mean(axis=0)) < 1.0)


def test_concave_flag_gives_decreasing_g():
    # population with a U-shaped log derivative: cases concentrated near both ends
    rng = np.random.default_rng(5)
    u_case = np.r_[rng.beta(0.5, 4, 150), 1 - rng.beta(0.7, 6, 60)]
    with pytest.warns(NonConcaveWarning):
        free = fit_psl(u_case)
    assert not free.is_decreasing()
    con = fit_psl(u_case, concave=True)
    assert np.all(con.dG(CONCAVITY_GRID) <= 1e-8)
    assert con.constraint_residual() <= 1e-8
    assert con.log_likelihood <= free.log_likelihood + 1e-9


def test_concave_flag_inactive_when_already_decreasing(scenario):
    std = standardize_sample(generate_sample(scenario, 5))
    free = fit_cml(std)
    assert free.is_decreasing()
    con = fit_cml(std, concave=True)
    np.testing.assert_allclose(con.beta, free.beta, atol=1e-4)


# -- PSL -----------------------------------------------------------------------

def test_psl_uniform_cases():
    u = np.random.default_rng(1).random(20_000)
    fit = fit_psl(u)
    np.testing.assert_allclose(fit.beta, 0.0, atol=0.15)
    assert fit.constraint_residual() <= 1e-8


def test_psl_cases_near_zero():
    u = np.random.default_rng(2).beta(0.6, 5, 500)
    fit = fit_psl(u)
    assert fit.G(0.0) > fit.G(0.5) > fit.G(1.0) or fit.G(0.0) > fit.G(1.0)
    basis = BasisSpec()
    r = basis(u).sum(axis=0)

    def obj(b):
        z = quad(lambda t: math.exp(float(basis(np.array(t)) @ b)), 0, 1, epsabs=1e-13)[0]
        return float(b @ r) - len(u) * math.log(z)

    best = max(obj(np.array([a, b])) for a in np.linspace(-20, 5, 26) for b in np.linspace(-5, 20, 26))
    assert obj(fit.beta1) >= best - 1e-6


# -- nonparametric and hull ------------------------------------------------------

def test_aroc_examples():
    one = fit_nonparametric_aroc(standardize_sample(make_sample([0, 0, 0, 0, 0, 1], [0, 1, 2, 3, 4, 3.5])))
    assert one(0.1) == 0.0 and one(0.2) == 1.0 and one(0.5) == 1.0
    three = StepRoc(np.array([0.1, 0.5, 0.9]), np.array([1, 2, 3]) / 3)
    assert three(0.5) == pytest.approx(2 / 3) and three(0.05) == 0.0


def test_aroc_matches_pairwise_roc():
    rng = np.random.default_rng(4)
    y = rng.normal(size=60) + np.r_[np.zeros(40), np.ones(20)]
    d = np.r_[np.zeros(40, int), np.ones(20, int)]
    roc = fit_nonparametric_aroc(standardize_sample(make_sample(d, y)))
    ctrl, case = y[d == 0], y[d == 1]
    for thr in np.sort(ctrl):
        fpr = np.mean(ctrl > thr)
        assert roc(fpr) == pytest.approx(np.mean(case > thr))


def test_concavify_examples():
    chord = concavify(StepRoc(np.array([0.5, 1.0]), np.array([0.2, 1.0])))
    np.testing.assert_allclose(chord(np.linspace(0, 1, 11)), np.linspace(0, 1, 11))
    t = np.array([0.1, 0.4, 1.0])
    h = np.array([0.5, 0.8, 1.0])
    already = concavify(StepRoc(t, h))
    np.testing.assert_allclose(already.t, [0.0, 0.1, 0.4, 1.0])
    np.testing.assert_allclose(already.heights, [0.0, 0.5, 0.8, 1.0])


step_functions = st.integers(1, 25).flatmap(lambda n: st.tuples(
    st.lists(st.integers(1, 40), min_size=n, max_size=n, unique=True),
    st.lists(st.integers(0, 40), min_size=n, max_size=n)))


@settings(max_examples=100, deadline=None)
@given(step_functions)
def test_concavify_matches_brute_hull(data):
    ts, hs = data
    t = np.sort(np.array(ts)) / 41.0
    h = np.sort(np.array(hs)) / 40.0
    roc = StepRoc(t, h)
    out = concavify(roc)
    px = np.r_[0.0, t, 1.0]
    py = np.r_[0.0, h, 1.0]
    bx, by = brute_hull(px, py)
    np.testing.assert_array_equal(out.t, bx)
    np.testing.assert_array_equal(out.heights, by)
    # concave, nondecreasing, dominating
    assert np.all(np.diff(out.heights) >= 0)
    s = np.diff(out.heights) / np.diff(out.t)
    assert np.all(np.diff(s) < 0)
    assert np.all(out(t) >= h - 1e-12)
    for a, b in itertools.combinations(out.t, 2):
        assert out((a + b) / 2) >= (out(a) + out(b)) / 2 - 1e-12
