import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from samplesafe.core import BarrierFunction, quadratic_barrier_1d
from samplesafe.dynamics import IntegratorConfig, linear1d, simulate
from samplesafe.filter import (
    FilterConfig,
    FilterError,
    FilterState,
    SafetyFilter,
    adversarial_f,
    compute_alpha,
    compute_beta,
    correction_control,
    filter_step,
    solve_gamma,
    solve_target,
)
from samplesafe.uncertainty import SvdUncertaintyModel, TrueActuation, g_hat_pinv, scalar_model, vehicle4d_svd
from samplesafe.core import ConfigError


def _orth(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


def _random_case(seed, d, p, k):
    """Random model, true singular values inside the bounds, a quadratic barrier and a state with phi <= theta."""
    rng = np.random.default_rng(seed)
    u, v = _orth(rng, d), _orth(rng, p)
    lam_hat = rng.uniform(0.1, 10.0, k)
    lo = rng.uniform(0.1, 1.0, k)
    hi = rng.uniform(1.0, 10.0, k)
    model = SvdUncertaintyModel(u, v, lam_hat, lo, hi)
    lam = lam_hat * rng.uniform(lo, hi)
    g = TrueActuation(lam).g_matrix(model)
    c = rng.normal(size=d)
    a = rng.uniform(0.5, 3.0, d)
    barrier = BarrierFunction(
        value=lambda x: 1.0 - float(np.sum(a * (x - c) ** 2)),
        gradient=lambda x: -2.0 * a * (x - c),
        dim=d,
    )
    x = c + rng.normal(size=d) * 2.0
    return rng, model, g, barrier, x


# -- worked examples -------------------------------------------------------------------


def test_beta_scalar_example():
    # grad phi = -50 x with U = [1]
    beta = compute_beta(quadratic_barrier_1d(0.2), scalar_model(), [0.1999])
    assert beta[0] == pytest.approx(-50 * 0.1999, rel=1e-12)


def test_beta_aligned_gradient():
    b = BarrierFunction(value=lambda x: 3.0 * x[0], gradient=lambda x: np.array([3.0, 0.0, 0.0]), dim=3)
    model = SvdUncertaintyModel(np.eye(3), np.eye(1), [1.0], [0.5], [2.0])
    np.testing.assert_allclose(compute_beta(b, model, np.zeros(3)), [3.0, 0.0, 0.0])


def test_alpha_collapse():
    b = BarrierFunction(value=lambda x: x[0], gradient=lambda x: np.array([1.0]), dim=1)
    assert compute_alpha(b, [0.0], [0.0], 1.0) == -1.0


def test_alpha_scalar_example():
    # closed loop xdot = 0.5 x under u = -x
    x = 0.1999
    grad = -50 * x
    expected = (grad * 0.5 * x - 1.0) / grad**2
    alpha = compute_alpha(quadratic_barrier_1d(0.2), [x], [0.5 * x], 1.0)
    assert alpha == pytest.approx(expected, rel=1e-14)
    assert alpha == pytest.approx(-0.020010, abs=1e-6)


def test_alpha_zero_when_rate_equals_eta():
    b = BarrierFunction(value=lambda x: 2 * x[0], gradient=lambda x: np.array([2.0]), dim=1)
    assert compute_alpha(b, [0.0], [0.5], 1.0) == 0.0


def test_target_third_branch():
    # alpha <= 0 and beta < 0: z = alpha beta / m + slack = 0.3998 + 0.1
    z = solve_target(-0.02, [-19.99], [1.0], [1.0], 0.1)
    assert z[0] == pytest.approx(0.02 * 19.99 + 0.1, rel=1e-14)


def test_target_zero_beta_and_unactuated_direction():
    z = solve_target(0.3, [0.0, 2.0, 5.0], [0.5], [2.0], 0.1)
    assert z[0] == 0.0 and z[2] == 0.0


def test_target_zero_alpha_positive_beta():
    np.testing.assert_allclose(solve_target(0.0, [1.0, 2.0], [0.5, 0.5], [2.0, 2.0], 0.1), [-0.1, -0.1])


def test_target_rejects_nonpositive_slack():
    with pytest.raises(ConfigError):
        solve_target(0.0, [1.0], [1.0], [1.0], 0.0)


def test_gamma_example():
    np.testing.assert_allclose(solve_gamma([2.0], [0.5]), [[4.0]])


def test_gamma_none_when_derivative_vanishes():
    assert solve_gamma([2.0], [0.0]) is None


def test_correction_zero_target():
    fs = FilterState(u_last=np.array([0.3]), x_prev=np.zeros(1))
    np.testing.assert_allclose(correction_control(fs, scalar_model(), [0.0]), [0.3])


def test_correction_scalar_chain():
    fs = FilterState(u_last=np.array([-0.1999]), x_prev=np.zeros(1))
    z = solve_target(-0.02, [-19.99], [1.0], [1.0], 0.1)
    u = correction_control(fs, scalar_model(1.0), z)
    assert u[0] == pytest.approx(-0.1999 - (0.02 * 19.99 + 0.1), rel=1e-14)


def test_vehicle_correction_acts_only_along_first_direction():
    model, _ = vehicle4d_svd(lambda_hat=0.7)
    fs = FilterState(u_last=np.array([1.0]), x_prev=np.zeros(4))
    y = np.array([0.3, -2.0, 5.0, 1.0])
    du = correction_control(fs, model, y) - fs.u_last
    assert du[0] == pytest.approx(-(model.u_factor[:, 0] @ y) / 0.7, rel=1e-13)


def test_pass_through_above_threshold():
    fs = FilterState(u_last=np.zeros(1), x_prev=np.zeros(1))
    cfg = FilterConfig(theta=0.001, eta=1.0)
    u, d = filter_step(cfg, fs, scalar_model(), quadratic_barrier_1d(0.2), [0.0632], [0.0], [0.7])
    assert not d.activated and u[0] == 0.7
    np.testing.assert_allclose(fs.u_last, [0.7])


def test_activation_at_boundary_sample():
    b = quadratic_barrier_1d(0.2)
    assert b.eval([0.1999]) <= 0.001
    fs = FilterState(u_last=np.array([-0.1999]), x_prev=np.array([0.1999]))
    cfg = FilterConfig(theta=0.001, eta=1.0)
    u, d = filter_step(cfg, fs, scalar_model(), b, [0.1999], [0.5 * 0.1999], [-0.1999])
    assert d.activated
    np.testing.assert_allclose(fs.u_last, u)
    assert d.guarantee_held


def test_vanishing_gradient_raises():
    b = BarrierFunction(value=lambda x: -x[0] ** 2, gradient=lambda x: np.array([-2 * x[0]]), dim=1)
    cfg = FilterConfig(theta=1.0, eta=1.0)
    with pytest.raises(FilterError):
        filter_step(cfg, FilterState(np.zeros(1), np.zeros(1)), scalar_model(), b, [0.0], [0.0], [0.0])


def test_config_validation():
    with pytest.raises(ConfigError):
        FilterConfig(theta=0.0, eta=1.0)
    with pytest.raises(ConfigError):
        FilterConfig(theta=1.0, eta=-1.0)
    with pytest.raises(ConfigError):
        FilterConfig(theta=1.0, eta=1.0, alpha_norm="other")


def test_clipping_is_flagged():
    cfg = FilterConfig(theta=0.001, eta=1.0, clip_low=-0.01, clip_high=0.01)
    fs = FilterState(u_last=np.zeros(1), x_prev=np.zeros(1))
    u, d = filter_step(cfg, fs, scalar_model(), quadratic_barrier_1d(0.2), [0.25], [1.0], [0.0])
    assert d.clipped and abs(u[0]) == pytest.approx(0.01)


def test_frozen_gain_mode():
    cfg = FilterConfig(theta=0.001, eta=1.0, frozen_gamma=4.0)
    fs = FilterState(u_last=np.array([-0.2]), x_prev=np.zeros(1))
    u, d = filter_step(cfg, fs, scalar_model(), quadratic_barrier_1d(0.2), [0.2], [0.1], [0.0])
    np.testing.assert_allclose(d.target, [0.4])
    np.testing.assert_allclose(u, [-0.6])


# -- adversarial drift ------------------------------------------------------------------------


def test_adversarial_example():
    b = BarrierFunction(value=lambda x: 1 - 25 * x[0] ** 2, gradient=lambda x: np.array([-10.0]), dim=1)
    f = adversarial_f(b, np.array([[1.0]]), [0.2], [3.0])
    np.testing.assert_allclose(f, [7.0])
    assert float(b.grad([0.2]) @ (f + 3.0)) == -100.0


def test_adversarial_zero_action():
    b = quadratic_barrier_1d(0.2)
    np.testing.assert_allclose(adversarial_f(b, np.eye(1), [0.1], [0.0]), -b.grad([0.1]))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000), d=st.integers(1, 4), p=st.integers(1, 3))
def test_adversarial_identity(seed, d, p):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(d, p))
    c = rng.normal(size=d)
    b = BarrierFunction(value=lambda x: 1 - float(np.sum((x - c) ** 2)), gradient=lambda x: -2 * (x - c), dim=d)
    x0, u0 = rng.normal(size=d), rng.normal(size=p) * 5
    grad = b.grad(x0)
    rate = grad @ (adversarial_f(b, g, x0, u0) + g @ u0)
    assert rate == pytest.approx(-grad @ grad, rel=1e-12)


# -- properties ------------------------------------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 100_000), d=st.integers(1, 4))
def test_parseval(seed, d):
    _, model, _, b, x = _random_case(seed, d, 1, 1)
    beta = compute_beta(b, model, x)
    assert beta @ beta == pytest.approx(b.grad(x) @ b.grad(x), rel=1e-12)


@settings(max_examples=300, deadline=None)
@given(seed=st.integers(0, 100_000), d=st.integers(1, 4), p=st.integers(1, 3), eta=st.floats(0.01, 100.0))
def test_rate_at_least_eta_for_any_admissible_singular_values(seed, d, p, eta):
    """With the exact left derivative the post-correction rate is at least eta."""
    k = min(d, p)
    rng, model, g, b, x = _random_case(seed, d, p, k)
    cfg = FilterConfig(theta=1e9, eta=eta)
    u_last = rng.normal(size=p)
    f = rng.normal(size=d) * 10
    xdot_minus = f + g @ u_last
    beta = compute_beta(b, model, x)
    if beta[:k] @ beta[:k] < 1e-8:
        return
    fs = FilterState(u_last=u_last.copy(), x_prev=x.copy())
    u, diag = filter_step(cfg, fs, model, b, x, xdot_minus, np.zeros(p))
    rate = float(b.grad(x) @ (f + g @ u))
    scale = abs(b.grad(x) @ xdot_minus) + eta + 1.0
    assert rate >= eta - 1e-9 * scale
    assert diag.rate_lower_bound >= eta - 1e-9 * scale
    assert diag.rate_lower_bound <= rate + 1e-9 * scale


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 100_000), d=st.integers(1, 4))
def test_target_reaches_through_gamma(seed, d):
    rng, model, g, b, x = _random_case(seed, d, 1, 1)
    xdot = rng.normal(size=d)
    y = rng.normal(size=d)
    gam = solve_gamma(y, xdot)
    assert np.linalg.norm(gam @ xdot - y) < 1e-12 * max(1.0, np.linalg.norm(y))


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_full_and_actuated_normalisation_agree_at_full_rank(seed):
    rng, model, g, b, x = _random_case(seed, 3, 3, 3)
    xdot = rng.normal(size=3)
    u_last = rng.normal(size=3)
    outs = []
    for mode in ("full", "actuated"):
        fs = FilterState(u_last=u_last.copy(), x_prev=x.copy())
        u, _ = filter_step(FilterConfig(theta=1e9, eta=1.0, alpha_norm=mode), fs, model, b, x, xdot, np.zeros(3))
        outs.append(u)
    np.testing.assert_allclose(outs[0], outs[1], rtol=1e-12, atol=1e-12)


def test_full_normalisation_can_miss_rate_when_rank_deficient():
    """Dividing by the whole gradient norm under-corrects when part of the gradient is unactuated."""
    model = SvdUncertaintyModel(np.eye(2), np.eye(1), [1.0], [1.0], [1.0])
    g = np.array([[1.0], [0.0]])
    b = BarrierFunction(value=lambda x: -x[0] - x[1], gradient=lambda x: np.array([-1.0, -1.0]), dim=2)
    x = np.zeros(2)
    f = np.array([1.0, 1.0])
    rates = {}
    for mode in ("full", "actuated"):
        fs = FilterState(u_last=np.zeros(1), x_prev=x.copy())
        u, _ = filter_step(FilterConfig(theta=1.0, eta=1.0, alpha_norm=mode, slack=1e-6), fs, model, b, x, f, np.zeros(1))
        rates[mode] = float(b.grad(x) @ (f + g @ u))
    assert rates["actuated"] >= 1.0
    assert rates["full"] < 1.0


def test_closed_loop_invariance_and_nominal_exit():
    sys, nominal, b = linear1d()
    cfg = IntegratorConfig(dt=2.5e-4, horizon=0.25)
    filt = SafetyFilter(FilterConfig(theta=0.001, eta=1.0), scalar_model(1.0, 0.5, 2.0), b, nominal)
    assert simulate(sys, cfg, filt, [0.1999], b).phis.min() >= 0

    class Nominal:
        def __call__(self, w):
            return nominal(w.x_now)

    nom = simulate(sys, cfg, Nominal(), [0.1999], b)
    first_exit = nom.times[np.argmax(nom.phis < 0)]
    # closed loop xdot = 0.5 x leaves [-0.2, 0.2] at t = 2 ln(0.2 / 0.1999)
    assert first_exit == pytest.approx(2 * math.log(0.2 / 0.1999), abs=cfg.dt)


def test_oracle_derivative_mode():
    sys, nominal, b = linear1d()
    cfg = IntegratorConfig(dt=2.5e-4, horizon=0.1)
    filt = SafetyFilter(
        FilterConfig(theta=0.001, eta=1.0), scalar_model(1.0, 0.5, 2.0), b, nominal,
        xdot_oracle=lambda x, u: sys.xdot(x, u), keep_diagnostics=True,
    )
    traj = simulate(sys, cfg, filt, [0.1999], b)
    assert traj.phis.min() >= 0
    assert all(d.guarantee_held for d in filt.diagnostics if d.activated)
