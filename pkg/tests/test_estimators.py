import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from rmlmc.coupling import KernelConfig
from rmlmc.estimators import (
    EstimateSummary,
    ForwardHierarchy,
    LevelDistribution,
    TruncationError,
    coupled_forward_increment,
    double_randomized_single_term,
    forward_single_term,
    level_pmf,
    mlmc_estimate,
    prior_expectation,
    quadrature_increment,
    quadrature_reference,
    rmlmc_estimate,
    sample_level,
    single_term_posterior,
)
from rmlmc.parallel import derive_stream

# posterior mean of the theta-score at theta = 1, level 10, 128 nodes per axis
ORACLE_THETA1 = 3.4542663964


def mean_obs(g):
    return float(np.mean(g))


# -- level distribution -------------------------------------------------------------------

def test_level_pmf_examples():
    assert level_pmf(2.5, 0) == pytest.approx(0.823223, abs=1e-6)
    # p_1 = p_0 * 2^-2.5
    assert level_pmf(2.5, 1) == pytest.approx(0.823223 * 2 ** -2.5, abs=1e-6)
    assert level_pmf(2.5, 1) == pytest.approx(0.145527, abs=1e-6)
    total = sum(level_pmf(2.5, l) for l in range(101))
    assert 1 - 1e-12 <= total <= 1 + 1e-15
    with pytest.raises(ValueError):
        level_pmf(0.0, 1)


@given(st.floats(0.1, 6.0))
def test_pmf_sums_to_one_and_decreases(rate):
    p = [level_pmf(rate, l) for l in range(2000)]
    assert math.fsum(p) == pytest.approx(1.0, abs=1e-12)
    head = [v for v in p if v > 1e-300]  # far tails underflow into equal subnormals
    assert all(a > b for a, b in zip(head, head[1:]))


def test_level_distribution_validation():
    LevelDistribution(rate=2.5, beta=4.0, zeta=1.0)
    for bad in (dict(rate=0.5), dict(rate=2.5), dict(rate=-1.0)):
        with pytest.raises(ValueError):
            LevelDistribution(**bad)


def test_sample_level_edges():
    dist = LevelDistribution(rate=2.5, beta=4.0)
    assert sample_level(dist, 0.0) == 0
    assert sample_level(dist, dist.pmf(0)) == 1
    assert sample_level(dist, math.nextafter(dist.pmf(0), 0)) == 0
    with pytest.raises(ValueError):
        sample_level(dist, 1.0)


@given(st.floats(0.0, 1.0, exclude_max=True), st.floats(1.1, 3.9))
def test_sample_level_is_inverse_cdf(u, rate):
    dist = LevelDistribution(rate=rate, beta=4.0)
    l = sample_level(dist, u)
    assert dist.cdf(l) > u
    assert l == 0 or dist.cdf(l - 1) <= u


def test_sampled_levels_match_pmf():
    dist = LevelDistribution()
    rng = np.random.default_rng(0)
    levels = np.array([sample_level(dist, u) for u in rng.random(1_000_000)])
    top = 8
    observed = np.bincount(np.minimum(levels, top), minlength=top + 1)
    expected = np.array([dist.pmf(l) for l in range(top)] + [1 - dist.cdf(top - 1)]) * len(levels)
    assert stats.chisquare(observed, expected).pvalue > 0.01


# -- posterior single-term estimator ------------------------------------------------------

def test_forced_level_zero(obs):
    dist = LevelDistribution()
    s = single_term_posterior(1.0, dist, KernelConfig(), obs, derive_stream(0, 0), level=0)
    assert s.level == 0
    assert s.value == s.increment / dist.pmf(0)


def test_estimate_of_one_sample(obs):
    summary = rmlmc_estimate(1.0, 1, LevelDistribution(), KernelConfig(), obs, seed=3)
    assert summary.mean == summary.samples[0].value
    assert summary.n == 1 and math.isnan(summary.std_error)
    with pytest.raises(ValueError):
        rmlmc_estimate(1.0, 0, LevelDistribution(), KernelConfig(), obs)


def test_summary_invariants(obs):
    summary = rmlmc_estimate(1.0, 64, LevelDistribution(), KernelConfig(), obs, seed=1)
    values = [s.value for s in summary.samples]
    assert summary.mean == pytest.approx(np.mean(values), rel=1e-15)
    assert sum(summary.per_level_counts.values()) == 64
    assert summary.total_cost["pde_solves"] == sum(s.pde_solves for s in summary.samples)
    for s in summary.samples:
        assert s.value == s.increment / LevelDistribution().pmf(s.level)


def test_estimate_independent_of_workers(obs):
    runs = [rmlmc_estimate(1.0, 40, LevelDistribution(), KernelConfig(), obs, seed=9, workers=w)
            for w in (1, 4, 8)]
    assert len({r.mean for r in runs}) == 1
    assert len({r.std_error for r in runs}) == 1


def test_strict_mode_raises_on_truncation(obs):
    tight = KernelConfig(rho=0.99, burn_in=1, max_iters=2)
    summary = rmlmc_estimate(1.0, 8, LevelDistribution(), tight, obs, seed=0)
    assert summary.truncation_count > 0
    with pytest.raises(TruncationError):
        rmlmc_estimate(1.0, 8, LevelDistribution(), tight, obs, seed=0, strict=True)


def test_from_samples_on_synthetic_values():
    from rmlmc.estimators import SingleTermSample
    samples = [SingleTermSample(v, l, v, 3, 2, False) for v, l in [(1.0, 0), (3.0, 1), (5.0, 0)]]
    s = EstimateSummary.from_samples(samples)
    assert s.mean == 3.0 and s.std_error == pytest.approx(2 / math.sqrt(3))
    assert s.per_level_counts == {0: 2, 1: 1}
    assert s.total_cost == {"pde_solves": 9, "kernel_steps": 6}


@pytest.mark.slow
def test_gradient_estimator_matches_evidence_derivative(obs):
    # finite difference of the quadrature log-evidence, independent of the posterior-mean path
    theta, step = 1.0, 1e-4
    lo = quadrature_reference(theta - step, 10, obs, 64).log_evidence
    hi = quadrature_reference(theta + step, 10, obs, 64).log_evidence
    fd = (hi - lo) / (2 * step)
    summary = rmlmc_estimate(theta, 10_000, LevelDistribution(), KernelConfig(), obs, seed=77)
    assert abs(summary.mean - fd) < 3 * summary.std_error


# -- forward hierarchy --------------------------------------------------------------------

def test_identical_meshes_give_zero_increment():
    h = ForwardHierarchy()
    u = np.array([0.3, -0.5])
    assert coupled_forward_increment(mean_obs, 4, u, h, coarse_level=4) == 0.0


def test_single_level_mlmc_is_plain_monte_carlo():
    h = ForwardHierarchy()
    est = mlmc_estimate(mean_obs, [200], np.random.default_rng(5), h)
    rng = np.random.default_rng(5)
    plain = np.mean([mean_obs(h.observe(0, h.sample_prior(rng))) for _ in range(200)])
    assert est == pytest.approx(plain, rel=1e-13)
    with pytest.raises(ValueError):
        mlmc_estimate(mean_obs, [10, 0], np.random.default_rng(0), h)


def test_mlmc_converges_to_prior_quadrature():
    h = ForwardHierarchy()
    ref = prior_expectation(mean_obs, 4, h)
    est = mlmc_estimate(mean_obs, [4000, 1000, 300, 100, 40], np.random.default_rng(6), h)
    assert est == pytest.approx(ref, abs=0.05)


def test_forward_single_term_level_zero():
    h = ForwardHierarchy()
    dist = LevelDistribution(rate=2.5, beta=4.0)
    rng = np.random.default_rng(2)
    value = forward_single_term(mean_obs, dist, rng, h, level=0)
    rng = np.random.default_rng(2)
    rng.random()
    assert value == mean_obs(h.observe(0, h.sample_prior(rng))) / dist.pmf(0)


@pytest.mark.slow
def test_forward_single_term_unbiased():
    h = ForwardHierarchy()
    dist = LevelDistribution(rate=2.5, beta=4.0)
    rng = np.random.default_rng(8)
    values = np.array([forward_single_term(mean_obs, dist, rng, h) for _ in range(100_000)])
    ref = prior_expectation(mean_obs, 10, h)
    assert abs(values.mean() - ref) < 3 * values.std(ddof=1) / math.sqrt(len(values))


def test_forward_increment_second_moment_rate():
    h = ForwardHierarchy()
    rng = np.random.default_rng(4)
    us = [h.sample_prior(rng) for _ in range(50)]
    widths, moments = [], []
    for level in range(1, 7):
        widths.append(2.0 ** -(level + 3))
        moments.append(np.mean([coupled_forward_increment(mean_obs, level, u, h) ** 2 for u in us]))
    assert np.polyfit(np.log(widths), np.log(moments), 1)[0] >= 3.5


# -- double randomization -----------------------------------------------------------------

def quartic_schedule(k):
    return 4 ** k


def synthetic_family(a):
    def inner(l, n_fine, n_coarse, rng):
        coarse = 0.0 if n_coarse is None else a(l) * (1 - 1 / n_coarse)
        return a(l) * (1 - 1 / n_fine), coarse
    return inner


def test_double_randomization_exact_by_enumeration():
    a = lambda l: 3.0 ** -l  # noqa: E731
    outer, inner_dist = LevelDistribution(), LevelDistribution()
    inner = synthetic_family(a)
    terms = []
    for l in range(31):
        for k in range(31):
            value = double_randomized_single_term(inner, outer, inner_dist, None, quartic_schedule,
                                                  indices=(l, k))
            terms.append(outer.pmf(l) * inner_dist.pmf(k) * value)
    assert abs(math.fsum(terms) - 1.5) < 1e-12


def test_double_randomization_k_zero_and_collapse():
    outer, inner_dist = LevelDistribution(), LevelDistribution()
    inner = synthetic_family(lambda l: 2.0 ** -l)
    v = double_randomized_single_term(inner, outer, inner_dist, None, quartic_schedule, indices=(2, 0))
    assert v == 0.25 * (1 - 1 / 1) / (outer.pmf(2) * inner_dist.pmf(0))
    flat = lambda l, nf, nc, rng: (7.0, 7.0)  # noqa: E731
    for k in range(1, 6):
        assert double_randomized_single_term(flat, outer, inner_dist, None, indices=(1, k)) == 0.0


def test_double_randomization_rejects_flat_schedule():
    inner = synthetic_family(lambda l: 1.0)
    with pytest.raises(ValueError):
        double_randomized_single_term(inner, LevelDistribution(), LevelDistribution(), None,
                                      schedule=lambda k: 5, indices=(0, 2))


def test_double_randomization_monte_carlo_mean():
    a = lambda l: 3.0 ** -l  # noqa: E731
    rng = np.random.default_rng(1)
    dist = LevelDistribution()
    vals = np.array([double_randomized_single_term(synthetic_family(a), dist, dist, rng,
                                                   quartic_schedule) for _ in range(20_000)])
    assert abs(vals.mean() - 1.5) < 4 * vals.std(ddof=1) / math.sqrt(len(vals))


# -- quadrature oracle --------------------------------------------------------------------

def test_quadrature_reference_value(obs):
    assert quadrature_reference(1.0, 10, obs, 128).posterior_mean == pytest.approx(ORACLE_THETA1, abs=1e-9)
    assert quadrature_reference(1.0, 10, obs, 64).posterior_mean == pytest.approx(ORACLE_THETA1, rel=1e-6)


@pytest.mark.parametrize("theta, nodes", [(0.1, (32, 64, 128)), (1.0, (64, 128, 256))])
def test_quadrature_self_convergence(obs, theta, nodes):
    values = [quadrature_reference(theta, 6, obs, n) for n in nodes]
    for v in values[1:]:
        assert v.posterior_mean == pytest.approx(values[0].posterior_mean, rel=1e-6)
        assert v.log_evidence == pytest.approx(values[0].log_evidence, rel=1e-6)


def test_flat_likelihood_reduces_to_prior_quadrature(obs):
    # theta -> 0 makes gamma constant in u, so the posterior weights are the prior weights
    theta = 1e-8
    got = quadrature_reference(theta, 3, obs, 32).posterior_mean
    resid_mean = prior_expectation(lambda g: float((g - obs.data) @ (g - obs.data)), 3,
                                   ForwardHierarchy(points=tuple(obs.points)))
    assert got - 0.5 * obs.m / theta == pytest.approx(-0.5 * resid_mean, rel=1e-4)


def test_quadrature_telescopes(obs):
    total = sum(quadrature_increment(1.0, l, obs, 32) for l in range(6))
    assert total == pytest.approx(quadrature_reference(1.0, 5, obs, 32).posterior_mean, abs=1e-10)


def test_quadrature_rejects_bad_inputs(obs):
    with pytest.raises(ValueError):
        quadrature_reference(0.0, 1, obs)
