import math

import numpy as np
import pytest

from samplesafe.core import ConfigError
from samplesafe.uncertainty import (
    SvdUncertaintyModel,
    TrueActuation,
    bicycle_svd,
    g_hat_pinv,
    scalar_model,
    sigma_hat_pinv,
    vehicle4d_svd,
)


def test_scalar_pinv():
    m = scalar_model(2.0)
    np.testing.assert_allclose(sigma_hat_pinv(m), [[0.5]])
    np.testing.assert_allclose(g_hat_pinv(m), [[0.5]])


def test_identity_case():
    m = SvdUncertaintyModel(np.eye(2), np.eye(2), [1.0, 1.0], [0.5, 0.5], [2.0, 2.0])
    np.testing.assert_allclose(sigma_hat_pinv(m), np.eye(2))


def test_vehicle_pinv_shape_and_entries():
    model, _ = vehicle4d_svd(lambda_hat=0.8)
    s = sigma_hat_pinv(model)
    assert s.shape == (1, 4)
    np.testing.assert_allclose(s, [[1 / 0.8, 0, 0, 0]])


def test_vehicle_true_value_matches_actuation_column():
    model, true = vehicle4d_svd()
    g = true.g_matrix(model)
    np.testing.assert_allclose(g[:, 0], [10 / 100, 1 * 10 / 20, 0, 0], atol=1e-14)


def test_exact_knowledge_gives_projection():
    rng = np.random.default_rng(0)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    v, _ = np.linalg.qr(rng.normal(size=(2, 2)))
    lam = np.array([2.0, 0.7])
    model = SvdUncertaintyModel(q, v, lam, [0.5, 0.5], [2.0, 2.0])
    g = TrueActuation(lam).g_matrix(model)
    proj = q[:, :2] @ q[:, :2].T
    np.testing.assert_allclose(g @ g_hat_pinv(model), proj, atol=1e-12)


def test_bicycle_unit_parameters():
    model, true = bicycle_svd(1.0, 1.0, 1.0, 1.0)
    assert true.lambda_true[0] == pytest.approx(math.sqrt(2))
    r = 1 / math.sqrt(2)
    np.testing.assert_allclose(model.u_factor, [[r, r], [r, -r]], atol=1e-15)
    np.testing.assert_allclose(model.u_factor @ model.u_factor.T, np.eye(2), atol=1e-12)


def test_bicycle_pinv_is_scaled_direction():
    m, a1, iz, cf = 1500.0, 1.2, 2500.0, 8e4
    model, true = bicycle_svd(m, a1, iz, cf, cf_guess=6e4)
    lam = true.lambda_true[0]
    direction = np.array([cf / m, cf * a1 / iz]) / lam
    np.testing.assert_allclose(g_hat_pinv(model), direction[None, :] / model.lambda_hat[0], rtol=1e-12)


def test_true_value_outside_bounds_rejected():
    with pytest.raises(ConfigError):
        bicycle_svd(1.0, 1.0, 1.0, 1.0, cf_guess=100.0)


def test_non_orthogonal_factor_rejected():
    with pytest.raises(ConfigError):
        SvdUncertaintyModel(np.array([[1.0, 0.1], [0.0, 1.0]]), np.eye(1), [1.0], [0.5], [2.0])


def test_bad_ratio_bounds_rejected():
    with pytest.raises(ConfigError):
        scalar_model(1.0, 2.0, 0.5)
    with pytest.raises(ConfigError):
        scalar_model(1.0, 0.0, 1.0)


def test_rank_cannot_exceed_dimensions():
    with pytest.raises(ConfigError):
        SvdUncertaintyModel(np.eye(2), np.eye(1), [1.0, 1.0], [1.0, 1.0], [1.0, 1.0])


def test_state_dependent_factors():
    def fn(x):
        c, s = math.cos(x[0]), math.sin(x[0])
        return np.array([[c, -s], [s, c]]), np.eye(1)

    model = SvdUncertaintyModel(np.eye(2), np.eye(1), [1.0], [0.5], [2.0], factor_fn=fn)
    u, _ = model.factors(np.array([0.3, 0.0]))
    assert u[0, 0] == pytest.approx(math.cos(0.3))
    np.testing.assert_allclose(g_hat_pinv(model, np.array([0.3, 0.0])), [[math.cos(0.3), math.sin(0.3)]])
