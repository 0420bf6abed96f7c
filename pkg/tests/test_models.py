import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snippet_smc.core import PhaseState
from snippet_smc.models import (
    FilamentaryTarget,
    GaussianTarget,
    LogisticRegressionTarget,
    exact_gaussian_flow,
    gaussian_hamiltonian,
    load_sonar,
    loglik_logistic,
)


def test_load_sonar_shape(sonar_path):
    t = load_sonar(sonar_path)
    assert (t.n_obs, t.dim) == (208, 61)
    assert (t.design[:, 0] == 1).all()
    np.testing.assert_array_equal(t.prior_scales, [20.0] + [5.0] * 60)
    assert sorted(np.unique(t.y)) == [-1.0, 1.0]
    assert int((t.y == 1).sum()) == 97  # R rows


def test_load_sonar_single_row(tmp_path):
    p = tmp_path / "one.csv"
    p.write_text(",".join(["0"] * 60) + ",R\n")
    t = load_sonar(p)
    np.testing.assert_array_equal(t.design, [[1.0] + [0.0] * 60])
    np.testing.assert_array_equal(t.y, [1.0])


@pytest.mark.parametrize("content, fragment", [
    ("", "no data rows"),
    (",".join(["0"] * 59) + ",R\n", "line 1"),
    (",".join(["0"] * 60) + ",R\n" + ",".join(["0"] * 60) + ",X\n", "line 2"),
    (",".join(["0"] * 60) + ",M\n" + ",".join(["a"] * 60) + ",M\n", "line 2"),
])
def test_load_sonar_errors(tmp_path, content, fragment):
    p = tmp_path / "bad.csv"
    p.write_text(content)
    with pytest.raises(ValueError, match=fragment):
        load_sonar(p)


def test_loglik_logistic_values():
    t = LogisticRegressionTarget(np.ones((5, 2)), [1, -1, 1, 1, -1], 1.0)
    assert loglik_logistic(t, np.zeros(2)) == pytest.approx(-5 * math.log(2), rel=1e-15)
    one = LogisticRegressionTarget([[1.0]], [1.0], 1.0)
    # -log(1 + e^-50), evaluated with mpmath at 50 digits: -1.9287498479639177830e-22
    assert loglik_logistic(one, np.array([50.0])) == pytest.approx(-1.9287498479639178e-22, rel=1e-12)
    assert loglik_logistic(one, np.array([-800.0])) == pytest.approx(-800.0)


def test_loglik_matches_direct_product():
    rng = np.random.default_rng(5)
    xi = rng.normal(size=(5, 3))
    y = rng.choice([-1.0, 1.0], 5)
    t = LogisticRegressionTarget(xi, y, 1.0)
    for _ in range(20):
        x = rng.normal(size=3)
        direct = np.prod(1.0 / (1.0 + np.exp(-y * (xi @ x))))
        assert math.exp(loglik_logistic(t, x)) == pytest.approx(direct, rel=1e-12)


def test_loglik_concave_along_lines(sonar_path):
    t = load_sonar(sonar_path)
    rng = np.random.default_rng(2)
    h = 1e-2
    for _ in range(30):
        x, d = rng.normal(size=61) * 0.5, rng.normal(size=61)
        d /= np.linalg.norm(d)
        f = [loglik_logistic(t, x + k * h * d) for k in (-1, 0, 1)]
        assert f[0] - 2 * f[1] + f[2] <= 1e-9


def test_exact_flow_identity_and_period():
    t = GaussianTarget([1.0, 1.0])
    z = PhaseState([0.3, -1.0], [0.5, 2.0])
    z0 = exact_gaussian_flow(t, 0.0, z)
    np.testing.assert_array_equal(z0.x, z.x)
    z2pi = exact_gaussian_flow(t, 2 * math.pi, z)
    np.testing.assert_allclose(z2pi.x, z.x, atol=1e-13)
    np.testing.assert_allclose(z2pi.v, z.v, atol=1e-13)


@given(
    st.lists(st.floats(0.05, 20.0), min_size=1, max_size=4),
    st.floats(-10, 10), st.floats(-10, 10), st.integers(0, 10**6),
)
@settings(max_examples=60, deadline=None)
def test_exact_flow_energy_and_group_property(var, s, t, seed):
    target = GaussianTarget(var)
    rng = np.random.default_rng(seed)
    z = PhaseState(rng.normal(size=len(var)), rng.normal(size=len(var)))
    H0 = gaussian_hamiltonian(target, z)
    zt = exact_gaussian_flow(target, t, z)
    assert gaussian_hamiltonian(target, zt) == pytest.approx(H0, rel=1e-12)
    a = exact_gaussian_flow(target, s, zt)
    b = exact_gaussian_flow(target, s + t, z)
    np.testing.assert_allclose(a.x, b.x, atol=1e-10 * (1 + np.abs(b.x).max()))
    np.testing.assert_allclose(a.v, b.v, atol=1e-10 * (1 + np.abs(b.v).max()))


def test_gaussian_evidence_closed_form():
    t = GaussianTarget([1.0], [1.0])
    assert t.log_evidence(1.0) == pytest.approx(-0.5 * math.log(2.0), rel=1e-15)
    assert t.log_evidence(0.0) == 0.0


def test_filamentary_symmetry_and_tolerance():
    f = FilamentaryTarget([1.0, 0.1, 1.0], 2.0, 0.05, 1.0)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(500, 3))
    np.testing.assert_array_equal(f.log_target(x, 0.6), f.log_target(-x, 0.6))
    assert f.tolerance(0.0) == np.inf
    assert f.tolerance(1.0) == pytest.approx(0.05)
    assert f.tolerance(0.5) == pytest.approx(math.sqrt(0.05))
    np.testing.assert_allclose(f.constraint_grad(x[0]), 2 * x[0] / np.array([1.0, 0.1, 1.0]))
    cal = FilamentaryTarget([1.0, 0.1, 1.0], 2.0, 0.05).calibrated(x)
    assert cal.tol_initial == pytest.approx(np.abs(f.constraint(x)).max())
    assert cal.tolerance(1e-12) == pytest.approx(cal.tol_initial, rel=1e-9)
    assert np.isfinite(cal.log_target(x, 0.0)).all()


def test_model_validation():
    with pytest.raises(ValueError):
        GaussianTarget([1.0, -1.0])
    with pytest.raises(ValueError):
        LogisticRegressionTarget([[1.0]], [0.0], 1.0)
    with pytest.raises(ValueError):
        LogisticRegressionTarget([[1.0]], [1.0], 0.0)
