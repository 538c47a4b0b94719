import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from rmlmc.fem import build_mesh, forward_map
from rmlmc.model import (
    LatentState,
    ObservationSet,
    dumps_observations,
    generate_data,
    level_tables,
    load_observations,
    log_gamma,
    log_gamma_from_residual,
    observation_points,
    qoi,
    residual_from_latent,
    residual_norm_sq,
    save_observations,
    transform_prior,
)

latent = arrays(float, 2, elements=st.floats(-1, 1))


# -- prior transform ----------------------------------------------------------------------

def test_transform_prior_examples():
    np.testing.assert_array_equal(transform_prior(np.zeros(2)), [0.0, 0.0])
    np.testing.assert_allclose(transform_prior([1.959964, 0.0]), [0.95, 0.0], atol=1e-6)
    assert transform_prior([40.0])[0] == 1.0
    assert LatentState(np.array([0.3, -0.2])).u == pytest.approx(2 * stats.norm.cdf([0.3, -0.2]) - 1)


@given(arrays(float, 3, elements=st.floats(-30, 30)))
def test_transform_prior_matches_normal_cdf(z):
    np.testing.assert_allclose(transform_prior(z), 2 * stats.norm.cdf(z) - 1, atol=1e-14)


def test_transform_prior_pushes_gaussian_to_uniform():
    z = np.random.default_rng(3).standard_normal((100_000, 2))
    u = transform_prior(z)
    for j in range(2):
        assert stats.kstest(u[:, j], stats.uniform(loc=-1, scale=2).cdf).pvalue > 0.01


# -- data ---------------------------------------------------------------------------------

def test_generate_data_defaults():
    obs = generate_data()
    assert obs.m == 50
    assert obs.precision_true == 1.0
    assert obs.x_true == (0.6, -0.4)
    assert obs.gen_level == 10
    np.testing.assert_allclose(obs.points, 0.01 + 0.02 * np.arange(50))


def test_generate_data_deterministic():
    a, b = generate_data(seed=5), generate_data(seed=5)
    np.testing.assert_array_equal(a.data, b.data)
    assert dumps_observations(a) == dumps_observations(b)
    assert not np.array_equal(a.data, generate_data(seed=6).data)


def test_noise_law_over_seeds():
    # the clean signal does not depend on the seed; a coarse generating level keeps this cheap
    points = observation_points(50)
    theta = 2.0
    clean = forward_map(build_mesh(2), generate_data().field, (0.6, -0.4), points)
    noise = np.array([generate_data(seed=s, theta=theta, gen_level=2).data - clean
                      for s in range(10_000)])
    assert abs(noise.mean()) < 4 / math.sqrt(10_000 * 50)
    assert noise.var() == pytest.approx(1 / theta, rel=0.05)


def test_generate_data_uses_fine_level(obs):
    clean = forward_map(build_mesh(10), obs.field, obs.x_true, obs.points)
    noise = obs.data - clean
    np.testing.assert_allclose(noise, np.random.default_rng(0).standard_normal(50), atol=1e-13)


def test_observation_file_roundtrip(tmp_path, obs):
    path = tmp_path / "obs.json"
    digest = save_observations(obs, path)
    assert len(digest) == 64
    back = load_observations(path)
    np.testing.assert_array_equal(back.data, obs.data)
    np.testing.assert_array_equal(back.points, obs.points)
    assert back.gen_level == obs.gen_level and back.x_true == obs.x_true
    assert save_observations(back, tmp_path / "again.json") == digest


def test_observation_file_rejects_bad_documents(tmp_path, obs):
    doc = obs.to_dict()
    doc["m"] = 49
    with pytest.raises(ValueError, match="m = 49"):
        ObservationSet.from_dict(doc)
    doc = obs.to_dict()
    doc["format"] = "other"
    with pytest.raises(ValueError):
        ObservationSet.from_dict(doc)
    json.dumps(obs.to_dict())


def test_observation_arrays_are_read_only(obs):
    with pytest.raises(ValueError):
        obs.data[0] = 1.0


# -- log-density and score ----------------------------------------------------------------

def _exact(u, level=3):
    points = observation_points(50)
    field_ = generate_data().field
    return ObservationSet(points, forward_map(build_mesh(level), field_, u, points))


def test_log_gamma_examples():
    u = np.array([0.2, -0.7])
    obs = _exact(u)
    mesh = build_mesh(3)
    assert log_gamma(1.0, mesh, u, obs) == 0.0
    assert log_gamma(math.e, mesh, u, obs) == pytest.approx(25.0, abs=1e-12)
    assert log_gamma_from_residual(1.0, 50, 3.7) == pytest.approx(-1.85)


def test_qoi_examples():
    u = np.array([0.2, -0.7])
    obs = _exact(u)
    mesh = build_mesh(3)
    assert qoi(1.0, mesh, u, obs) == pytest.approx(25.0)
    assert qoi(2.0, mesh, u, obs) == pytest.approx(12.5)


def test_rejects_nonpositive_theta(obs):
    with pytest.raises(ValueError):
        log_gamma(0.0, build_mesh(1), (0.0, 0.0), obs)
    with pytest.raises(ValueError):
        qoi(-1.0, build_mesh(1), (0.0, 0.0), obs)


@given(st.floats(0.05, 20.0), latent, st.integers(0, 5))
def test_qoi_is_theta_derivative_of_log_gamma(theta, u, level):
    obs = generate_data()
    mesh = build_mesh(level)
    step = 1e-5 * theta
    fd = (log_gamma(theta + step, mesh, u, obs) - log_gamma(theta - step, mesh, u, obs)) / (2 * step)
    assert fd == pytest.approx(qoi(theta, mesh, u, obs), rel=1e-6, abs=1e-6)


def test_log_gamma_converges_uniformly_in_u(obs):
    us = np.random.default_rng(2).uniform(-1, 1, (30, 2))
    ref = np.array([log_gamma(1.0, build_mesh(9), u, obs) for u in us])
    gaps = [np.max(np.abs([log_gamma(1.0, build_mesh(l), u, obs) for u in us] - ref))
            for l in range(0, 8, 2)]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-2 * gaps[0]


@given(arrays(float, 2, elements=st.floats(-4, 4)), st.integers(0, 6))
def test_latent_residual_matches_reference(z, level):
    obs = generate_data()
    expected = residual_norm_sq(build_mesh(level), transform_prior(z), obs)
    got = residual_from_latent(z, level_tables(obs, level))
    assert got == pytest.approx(expected, rel=1e-9)
