import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snippet_smc.core import LOG_2PI, PhaseState, RandomStream, StandardNormalVelocity, grad_log_mu_x, log_mu
from snippet_smc.models import FilamentaryTarget, GaussianTarget, load_sonar


def test_phase_state_validation():
    z = PhaseState([1.0, 2.0], [0.0, -1.0])
    assert z.dim == 2
    with pytest.raises(ValueError):
        PhaseState([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        PhaseState([np.nan], [0.0])
    with pytest.raises(ValueError):
        z.x[0] = 3.0
    np.testing.assert_array_equal(z.flip().v, [0.0, 1.0])


def test_velocity_density_at_origin():
    for d in (1, 3, 61):
        vel = StandardNormalVelocity(d)
        assert vel.log_density(np.zeros(d)) == pytest.approx(-0.5 * d * LOG_2PI, abs=1e-14)


def test_log_mu_gamma_zero_is_prior_plus_velocity():
    t = GaussianTarget([2.0, 0.5], [1.0, 3.0])
    vel = StandardNormalVelocity(2)
    x, v = np.array([0.3, -1.2]), np.array([0.5, 0.1])
    assert log_mu(t, vel, 0.0, PhaseState(x, v)) == pytest.approx(float(t.log_prior(x) + vel.log_density(v)), abs=1e-14)


def test_log_mu_standard_normal_origin():
    t = GaussianTarget([1.0])
    assert log_mu(t, StandardNormalVelocity(1), 1.0, PhaseState([0.0], [0.0])) == pytest.approx(-LOG_2PI, abs=1e-15)


def test_log_mu_sonar_origin(sonar_path):
    t = load_sonar(sonar_path)
    # prior normalizer written out independently: one N(0, 20^2) and sixty N(0, 5^2)
    log_prior0 = -math.log(20.0) - 60 * math.log(5.0) - 0.5 * 61 * math.log(2 * math.pi)
    expected = log_prior0 + 208 * math.log(0.5)
    assert float(t.log_target(np.zeros(61), 1.0)) == pytest.approx(expected, rel=1e-13)
    vel = StandardNormalVelocity(61)
    got = log_mu(t, vel, 1.0, PhaseState(np.zeros(61), np.zeros(61)))
    assert got == pytest.approx(expected - 0.5 * 61 * LOG_2PI, rel=1e-13)


def test_log_mu_errors_and_sentinel():
    t = GaussianTarget([1.0, 1.0])
    vel = StandardNormalVelocity(2)
    with pytest.raises(ValueError):
        log_mu(t, vel, 1.5, (np.zeros(2), np.zeros(2)))
    with pytest.raises(ValueError):
        log_mu(t, vel, 0.5, (np.zeros(3), np.zeros(3)))
    assert log_mu(t, vel, 0.5, (np.array([np.inf, 0.0]), np.zeros(2))) == -np.inf
    assert log_mu(t, vel, 0.5, (np.array([np.nan, 0.0]), np.zeros(2))) == -np.inf
    f = FilamentaryTarget([1.0, 1.0], 1.0, 0.1, 0.5)
    assert log_mu(f, vel, 1.0, (np.array([3.0, 0.0]), np.zeros(2))) == -np.inf


def test_grad_log_mu_x():
    t = GaussianTarget([2.0, 0.5], [1.0, 4.0])
    x = np.array([0.7, -0.3])
    np.testing.assert_array_equal(grad_log_mu_x(t, 0.0, x), t.grad_log_prior(x))
    np.testing.assert_allclose(grad_log_mu_x(GaussianTarget([2.0, 0.5]), 1.0, x), -x / np.array([2.0, 0.5]))
    assert np.isnan(grad_log_mu_x(t, 0.5, np.array([np.nan, 0.0]))).all()


def _fd_grad(f, x):
    g = np.empty_like(x)
    for i in range(x.size):
        h = 1e-5 * (1 + abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.mark.parametrize("model", ["gaussian", "sonar"])
def test_gradients_match_finite_differences(model, sonar_path):
    rng = np.random.default_rng(11)
    if model == "gaussian":
        t = GaussianTarget(rng.uniform(0.2, 3.0, 4), rng.uniform(0.5, 2.0, 4))
        scale = 1.0
    else:
        t = load_sonar(sonar_path)
        scale = 0.3
    n_points = 100 if model == "gaussian" else 20
    for _ in range(n_points):
        x = rng.normal(size=t.dim) * scale
        for fn, gfn in ((t.log_prior, t.grad_log_prior), (t.log_likelihood, t.grad_log_likelihood)):
            fd = _fd_grad(lambda y: float(fn(y)), x)
            an = gfn(x)
            np.testing.assert_allclose(an, fd, rtol=1e-4, atol=1e-6 * (1 + np.abs(an).max()))


def test_log_mu_monotone_in_gamma():
    t = GaussianTarget([1.0], [1.0])
    vel = StandardNormalVelocity(1)
    x = np.array([0.8])  # loglik < 0: decreasing in gamma
    vals = [log_mu(t, vel, g, (x, np.zeros(1))) for g in np.linspace(0, 1, 11)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    x0 = np.array([0.0])  # loglik = 0: constant
    vals = [log_mu(t, vel, g, (x0, np.zeros(1))) for g in np.linspace(0, 1, 11)]
    assert len(set(vals)) == 1


@given(st.integers(0, 2**32), st.integers(0, 1000), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_substream_reproducible(seed, i, j):
    a = RandomStream(seed).substream(i).substream(j).normal(5)
    b = RandomStream(seed).substream(i).substream(j).normal(5)
    assert a.tobytes() == b.tobytes()


def test_substreams_differ_and_look_independent():
    root = RandomStream(7)
    a = root.substream(0).normal(20000)
    b = root.substream(1).normal(20000)
    assert not np.array_equal(a, b)
    assert abs(np.corrcoef(a, b)[0, 1]) < 4 / math.sqrt(20000)


def test_categorical():
    rs = RandomStream(3)
    assert (rs.categorical([1.0, 0.0], 1000) == 0).all()
    with pytest.raises(ValueError):
        rs.categorical([-1.0, 2.0])
    with pytest.raises(ValueError):
        rs.categorical([0.0, 0.0])
