import math

import numpy as np
import pytest

from samplesafe.core import (
    BarrierFunction,
    ConfigError,
    InformationWindow,
    SafeSubset,
    abs_barrier_1d,
    distance_to_subset,
    ellipse_barrier,
    finite_difference_gradient,
    grad_check,
    phi_eval,
    quadratic_barrier_1d,
)
from samplesafe.dynamics import vehicle4d


@pytest.fixture
def phi1d():
    return quadratic_barrier_1d(0.2)


@pytest.mark.parametrize("x, expected", [(0.2, 0.0), (0.0, 1.0), (0.25, -0.5625), (-0.2, 0.0)])
def test_quadratic_barrier_values(phi1d, x, expected):
    assert phi_eval(phi1d, [x]) == pytest.approx(expected, abs=1e-15)


def test_quadratic_barrier_gradient_closed_form(phi1d):
    assert phi1d.grad([0.1999])[0] == pytest.approx(-50 * 0.1999, rel=1e-15)


def test_grad_check_polynomial(phi1d):
    rng = np.random.default_rng(1)
    for x in rng.uniform(-1, 1, 20):
        assert grad_check(phi1d, [x]) < 1e-5


def test_grad_check_vehicle_barrier():
    _, b, _, _ = vehicle4d()
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.uniform([-7, -350, -3, -10], [7, 350, 3, 10])
        assert grad_check(b, x) < 1e-5


def test_grad_check_detects_kink():
    assert grad_check(abs_barrier_1d(), [0.0]) >= 0.5


def test_grad_check_rejects_bad_step(phi1d):
    with pytest.raises(ConfigError):
        grad_check(phi1d, [0.1], h=0.0)


def test_barrier_without_gradient_falls_back_to_finite_difference():
    b = BarrierFunction(value=lambda x: 1.0 - x[0] ** 2 - 3 * x[1], dim=2)
    np.testing.assert_allclose(b.grad([0.3, 1.0]), [-0.6, -3.0], atol=1e-8)


def test_finite_difference_of_linear_function_is_exact_to_rounding():
    g = finite_difference_gradient(lambda x: 2.0 * x[0] - x[1], np.array([0.5, 0.5]))
    np.testing.assert_allclose(g, [2.0, -1.0], atol=1e-9)


def test_ellipse_barrier():
    b = ellipse_barrier([2.0, 0.5])
    assert b.eval([2.0, 0.0]) == pytest.approx(0.0)
    assert b.eval([0.0, 0.0]) == 1.0
    assert grad_check(b, [0.7, -0.2]) < 1e-8


def test_dimension_mismatch_is_config_error(phi1d):
    with pytest.raises(ConfigError):
        phi1d.eval([0.1, 0.2])


@pytest.mark.parametrize(
    "theta, x, expected",
    [(0.001, 0.25, 0.5635), (0.001, math.sqrt(0.999 / 25), 0.0), (0.001, 0.0, 0.0)],
)
def test_distance_to_subset(phi1d, theta, x, expected):
    assert distance_to_subset(SafeSubset(phi1d, theta), [x]) == pytest.approx(expected, abs=1e-12)


def test_distance_with_large_threshold():
    b = BarrierFunction(value=lambda x: 200.0, dim=1)
    assert SafeSubset(b, 500.0).distance([0.0]) == pytest.approx(300.0)


def test_subset_membership(phi1d):
    s = SafeSubset(phi1d, 0.001)
    assert s.contains([0.0])
    assert not s.contains([0.1999])


def test_negative_threshold_rejected(phi1d):
    with pytest.raises(ConfigError):
        SafeSubset(phi1d, -1.0)


def test_information_window_requires_positive_delta():
    with pytest.raises(ConfigError):
        InformationWindow(np.zeros(1), np.zeros(1), np.zeros(1), 0.0)


def test_information_window_left_derivative():
    w = InformationWindow(np.array([1.0, 2.0]), np.array([0.5, 2.5]), np.zeros(1), 0.5)
    np.testing.assert_allclose(w.xdot_minus, [1.0, -1.0])
