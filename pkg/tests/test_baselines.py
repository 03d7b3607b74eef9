import numpy as np
import pytest

from samplesafe.baselines import (
    AcbfState,
    CbcState,
    RacbfController,
    RacbfState,
    acbf_control,
    cbc_control,
    project_polygon,
    racbf_control,
    racbf_tightening,
    smid_update,
)
from samplesafe.dynamics import IntegratorConfig, linear1d, simulate

GRID = np.round(np.arange(-100_000, 100_001) * 1e-4, 10)


def _grid_oracle(x, theta_hat, u_nom, rhs, k=25.0, a_known=1.0):
    """Closest feasible grid point to u_nom for  -2 k x ((a + theta) x + u) >= rhs."""
    lhs = -2 * k * x * ((a_known + theta_hat) * x + GRID)
    feas = GRID[lhs >= rhs]
    if feas.size == 0:
        return None
    return feas[np.argmin(np.abs(feas - u_nom))]


def test_origin_constraint_vacuous():
    assert acbf_control(AcbfState(), 0.0, 0.37) == 0.37


def test_acbf_examples():
    assert acbf_control(AcbfState(), 0.1, -0.1) == pytest.approx(-0.1)
    assert acbf_control(AcbfState(), 0.1, 0.0) == pytest.approx(-0.1)


def test_racbf_interior_is_pass_through():
    assert racbf_control(RacbfState(), 0.01, 0.5) == 0.5


@pytest.mark.parametrize("robust", [False, True])
def test_qp_against_grid_search(robust):
    rng = np.random.default_rng(3 + robust)
    checked = 0
    for _ in range(1000):
        x = rng.uniform(-0.3, 0.3)
        th = rng.uniform(-2.0, 2.0)
        u_nom = rng.uniform(-5.0, 5.0)
        if robust:
            s = RacbfState(theta_hat=th)
            rhs = -(1 - 25 * x * x) + racbf_tightening(s)
            u = racbf_control(s, x, u_nom)
        else:
            rhs = 0.0
            u = acbf_control(AcbfState(theta_hat=th), x, u_nom)
        ref = _grid_oracle(x, th, u_nom, rhs)
        if ref is None or abs(ref) > 9.9:
            continue
        assert abs(u - ref) <= 1e-4 + 1e-12
        checked += 1
    assert checked > 900


def test_tightening_value():
    assert racbf_tightening(RacbfState(nu_tilde=2.0, gamma_rate=5.0)) == pytest.approx(0.4)


def test_robust_correction_at_least_as_large():
    # the robust right side -phi_a + 0.4 is only the tighter one where phi_a <= 0.4, i.e. |x| >= sqrt(0.024)
    rng = np.random.default_rng(5)
    for _ in range(200):
        x = rng.uniform(np.sqrt(0.6 / 25), 0.3) * rng.choice([-1, 1])
        th = rng.uniform(-1, 1)
        u_nom = -x
        ua = acbf_control(AcbfState(theta_hat=th), x, u_nom)
        ur = racbf_control(RacbfState(theta_hat=th), x, u_nom)
        assert abs(ur - u_nom) >= abs(ua - u_nom) - 1e-12


def test_adaptation_increases_estimate():
    s = AcbfState()
    acbf_control(s, 0.2, 0.0, dt=0.01)
    assert s.theta_hat == pytest.approx(0.01 * 5 * 2 * 25 * 0.04)


def test_smid_keeps_truth_and_shrinks():
    s = RacbfState()
    rng = np.random.default_rng(0)
    widths = [s.r_max - s.r_min]
    for _ in range(20):
        data = []
        for _ in range(5):
            x, u = rng.uniform(-0.3, 0.3), rng.uniform(-1, 1)
            data.append((x, u, 1.5 * x + u))
        smid_update(s, data)
        assert s.r_min <= 0.5 <= s.r_max
        widths.append(s.r_max - s.r_min)
    assert all(b <= a for a, b in zip(widths, widths[1:]))


def test_smid_inconsistent_data_keeps_interval():
    s = RacbfState()
    lo, hi = s.r_min, s.r_max
    smid_update(s, [(0.1, 0.0, 100.0)])
    assert s.inconsistent and (s.r_min, s.r_max) == (lo, hi)


def test_smid_run_shrinks_uncertainty():
    sys, _, b = linear1d()
    ctrl = RacbfController(smid_period=2.5e-3)
    simulate(sys, IntegratorConfig(dt=2.5e-4, horizon=0.25), ctrl, [0.1999], b)
    assert ctrl.state.nu_tilde < 2.0
    assert len(ctrl.nu_history) > 50


def test_polygon_projection_identity_inside():
    poly = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    np.testing.assert_array_equal(project_polygon(np.array([0.3, 0.4]), poly), [0.3, 0.4])
    np.testing.assert_allclose(project_polygon(np.array([2.0, 0.5]), poly), [1.0, 0.5])
    np.testing.assert_allclose(project_polygon(np.array([2.0, 3.0]), poly), [1.0, 1.0])


def test_cbc_candidate_is_consistent_and_converges():
    sys, _, b = linear1d()
    dt = 2.5e-4
    s = CbcState()
    a_true, b_true = np.exp(1.5 * dt), (np.exp(1.5 * dt) - 1) / 1.5
    start = np.hypot(s.candidate[0] - a_true, s.candidate[1] - b_true)
    x, rng = 0.1999, np.random.default_rng(0)
    for _ in range(400):
        u = cbc_control(s, x) + rng.normal(0, 0.05)
        x_next = a_true * x + b_true * u
        s.add_sample(x, u, x_next)
        assert s.max_violation(s.candidate) <= 1e-9
        x = x_next
    end = np.hypot(s.candidate[0] - a_true, s.candidate[1] - b_true)
    assert s.max_violation(np.array([a_true, b_true])) <= 1e-12
    assert end < 1e-3 * start


def test_cbc_empty_polytope_is_survived():
    s = CbcState()
    s.add_sample(0.1, 0.0, 100.0)
    assert s.empty_events == 1
