"""Partial knowledge of the actuation matrix ``g(x) = U diag(lambda) V^T``.

The controller side knows the orthogonal factors and a guess ``lambda_hat`` of
each non-zero singular value together with ratio bounds
``lower_i * lambda_hat_i <= lambda_i <= upper_i * lambda_hat_i``. The true
singular values live in :class:`TrueActuation`, which only simulators and test
oracles hold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from .core import ConfigError, as_vector

ORTHO_TOL = 1e-9


def _check_orthogonal(m: np.ndarray, name: str) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigError(f"{name} must be square, got shape {m.shape}")
    err = np.max(np.abs(m.T @ m - np.eye(m.shape[0])))
    if err >= ORTHO_TOL:
        raise ConfigError(f"{name} is not orthogonal (max |M^T M - I| = {err:.3e})")


@dataclass(frozen=True)
class SvdUncertaintyModel:
    u_factor: np.ndarray
    v_factor: np.ndarray
    lambda_hat: np.ndarray
    lower_ratio: np.ndarray
    upper_ratio: np.ndarray
    # Optional state-dependent factors; returns (U, V) for a state.
    factor_fn: Optional[Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]] = field(default=None, compare=False)

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.u_factor, dtype=float))
        v = np.atleast_2d(np.asarray(self.v_factor, dtype=float))
        lam = as_vector(self.lambda_hat, name="lambda_hat")
        k = lam.size
        lo = np.broadcast_to(as_vector(self.lower_ratio, name="lower_ratio"), (k,)).copy()
        hi = np.broadcast_to(as_vector(self.upper_ratio, name="upper_ratio"), (k,)).copy()
        _check_orthogonal(u, "U")
        _check_orthogonal(v, "V")
        if k > min(u.shape[0], v.shape[0]):
            raise ConfigError(f"rank {k} exceeds min(d, p) = {min(u.shape[0], v.shape[0])}")
        if np.any(lam <= 0):
            raise ConfigError("lambda_hat entries must be positive")
        if np.any(lo <= 0) or np.any(hi < lo):
            raise ConfigError("ratio bounds must satisfy 0 < lower <= upper")
        object.__setattr__(self, "u_factor", u)
        object.__setattr__(self, "v_factor", v)
        object.__setattr__(self, "lambda_hat", lam)
        object.__setattr__(self, "lower_ratio", lo)
        object.__setattr__(self, "upper_ratio", hi)

    @property
    def dim_state(self) -> int:
        return self.u_factor.shape[0]

    @property
    def dim_action(self) -> int:
        return self.v_factor.shape[0]

    @property
    def rank(self) -> int:
        return self.lambda_hat.size

    def factors(self, x=None) -> Tuple[np.ndarray, np.ndarray]:
        if self.factor_fn is None or x is None:
            return self.u_factor, self.v_factor
        u, v = self.factor_fn(np.asarray(x, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        v = np.atleast_2d(np.asarray(v, dtype=float))
        _check_orthogonal(u, "U(x)")
        _check_orthogonal(v, "V(x)")
        return u, v


@dataclass(frozen=True)
class TrueActuation:
    """The hidden singular values of ``g``; never handed to a controller."""

    lambda_true: np.ndarray

    def __post_init__(self):
        lam = as_vector(self.lambda_true, name="lambda_true")
        if np.any(lam <= 0):
            raise ConfigError("true singular values must be positive")
        object.__setattr__(self, "lambda_true", lam)

    def check_against(self, model: SvdUncertaintyModel) -> None:
        lam = self.lambda_true
        if lam.size != model.rank:
            raise ConfigError(f"{lam.size} true singular values for a rank-{model.rank} model")
        lo = model.lower_ratio * model.lambda_hat
        hi = model.upper_ratio * model.lambda_hat
        # relative slack absorbs rounding when a bound is hit exactly
        tol = 1e-12 * np.maximum(1.0, hi)
        if np.any(lam < lo - tol) or np.any(lam > hi + tol):
            raise ConfigError(
                f"true singular values {lam} violate bounds [{lo}, {hi}] (m_i lambda_hat_i <= lambda_i <= M_i lambda_hat_i)"
            )

    def ratios(self, model: SvdUncertaintyModel) -> np.ndarray:
        return self.lambda_true / model.lambda_hat

    def g_matrix(self, model: SvdUncertaintyModel, x=None) -> np.ndarray:
        u, v = model.factors(x)
        sigma = np.zeros((u.shape[0], v.shape[0]))
        k = self.lambda_true.size
        sigma[np.arange(k), np.arange(k)] = self.lambda_true
        return u @ sigma @ v.T


def sigma_hat(model: SvdUncertaintyModel) -> np.ndarray:
    s = np.zeros((model.dim_state, model.dim_action))
    k = model.rank
    s[np.arange(k), np.arange(k)] = model.lambda_hat
    return s


def sigma_hat_pinv(model: SvdUncertaintyModel) -> np.ndarray:
    """p x d matrix with ``1 / lambda_hat_i`` on the first k diagonal entries."""
    if np.any(model.lambda_hat <= 0):
        raise ConfigError("lambda_hat entries must be positive")
    s = np.zeros((model.dim_action, model.dim_state))
    k = model.rank
    s[np.arange(k), np.arange(k)] = 1.0 / model.lambda_hat
    return s


def g_hat_pinv(model: SvdUncertaintyModel, x=None) -> np.ndarray:
    """Estimated pseudo-inverse ``V sigma_hat^+ U^T`` of the actuation matrix."""
    u, v = model.factors(x)
    return v @ sigma_hat_pinv(model) @ u.T


def bicycle_svd(
    m_mass: float,
    a1: float,
    iz: float,
    cf_hidden: float,
    cf_guess: Optional[float] = None,
    lower: float = 0.2,
    upper: float = 5.0,
) -> Tuple[SvdUncertaintyModel, TrueActuation]:
    """SVD of the steering column ``[c_f/m, c_f a1/I_z]`` of the 2-D yaw model.

    The cornering stiffness cancels in ``U`` so the factors are exact; the
    singular value is only guessed from ``cf_guess`` (defaults to the hidden
    value, i.e. a perfect guess) and must fall inside the ratio bounds.
    """
    if min(m_mass, a1, iz, cf_hidden) <= 0:
        raise ConfigError("bicycle parameters must be positive")
    l1 = cf_hidden / m_mass
    l2 = cf_hidden * a1 / iz
    lam = float(np.hypot(l1, l2))
    c, s = l1 / lam, l2 / lam
    u = np.array([[c, s], [s, -c]])
    v = np.array([[1.0]])
    guess = cf_hidden if cf_guess is None else cf_guess
    lam_hat = guess * float(np.hypot(1.0 / m_mass, a1 / iz))
    model = SvdUncertaintyModel(u, v, [lam_hat], [lower], [upper])
    true = TrueActuation([lam])
    true.check_against(model)
    return model, true


def vehicle4d_svd(
    m_mass: float = 100.0,
    iz: float = 20.0,
    a: float = 1.0,
    c_alpha: float = 10.0,
    lambda_hat: float = 1.0,
    lower: float = 0.2,
    upper: float = 5.0,
) -> Tuple[SvdUncertaintyModel, TrueActuation]:
    """SVD of the 4-D vehicle steering column ``[C/m, a C/I_z, 0, 0]``.

    ``V`` is taken as ``[1]`` so that it is orthogonal; the stiffness ``C`` is
    folded into the singular value ``C * sqrt(1/m^2 + a^2/I_z^2)``.
    """
    n = float(np.hypot(1.0 / m_mass, a / iz))
    c, s = (1.0 / m_mass) / n, (a / iz) / n
    u = np.array(
        [
            [c, -s, 0.0, 0.0],
            [s, c, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    model = SvdUncertaintyModel(u, np.array([[1.0]]), [lambda_hat], [lower], [upper])
    true = TrueActuation([c_alpha * n])
    true.check_against(model)
    return model, true


def scalar_model(lambda_hat: float = 1.0, lower: float = 1.0, upper: float = 1.0) -> SvdUncertaintyModel:
    """1-D model with ``U = V = [1]``."""
    return SvdUncertaintyModel(np.eye(1), np.eye(1), [lambda_hat], [lower], [upper])
