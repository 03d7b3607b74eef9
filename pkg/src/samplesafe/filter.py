"""Sample-minimal safety filter.

Whenever ``phi(x) <= theta`` the nominal action is replaced by

    u_corr = u_last - g_hat^+(x) y,

where ``y`` plays the role of ``Gamma xdot^-``. Its coordinates in the ``U``
basis are chosen so that every term ``beta_i * eps_i`` of the recovery-rate
identity is non-negative for any singular values inside the ratio bounds,
which makes ``dphi/dt^+ >= eta``. Only ``x``, the left derivative ``xdot^-``
and the previously played action are needed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from .core import BarrierFunction, ConfigError, InformationWindow, as_vector
from .uncertainty import SvdUncertaintyModel, g_hat_pinv

log = logging.getLogger(__name__)

ALPHA_NORMS = ("actuated", "full")


class FilterError(RuntimeError):
    """The correction is undefined at this state (vanishing barrier gradient)."""


@dataclass(frozen=True)
class FilterConfig:
    """Hyper-parameters of the correction controller.

    ``alpha_norm="full"`` divides by ``|grad phi|^2`` exactly as written for a
    full-rank actuation matrix. ``"actuated"`` (default) divides by the squared
    norm of the gradient's projection on the actuated directions
    ``U_1..U_k``; the two coincide when ``k = d``, and only the latter keeps the
    rate guarantee when ``g`` is rank deficient.
    """

    theta: float
    eta: float
    slack: float = 1e-3
    xdot_tol: float = 1e-9
    clip_low: Optional[float] = None
    clip_high: Optional[float] = None
    alpha_norm: str = "actuated"
    frozen_gamma: Optional[float] = None
    grad_tol: float = 1e-12

    def __post_init__(self):
        if not self.theta > 0:
            raise ConfigError(f"theta must be > 0, got {self.theta}")
        if not self.eta > 0:
            raise ConfigError(f"eta must be > 0, got {self.eta}")
        if not self.slack > 0:
            raise ConfigError(f"slack must be > 0, got {self.slack}")
        if self.xdot_tol < 0:
            raise ConfigError("xdot_tol must be >= 0")
        if self.alpha_norm not in ALPHA_NORMS:
            raise ConfigError(f"alpha_norm must be one of {ALPHA_NORMS}")
        if self.clip_low is not None and self.clip_high is not None and self.clip_low > self.clip_high:
            raise ConfigError("clip_low > clip_high")


@dataclass
class FilterState:
    u_last: np.ndarray
    x_prev: np.ndarray
    t_prev: float = 0.0


@dataclass(frozen=True)
class CorrectionDiagnostics:
    activated: bool
    phi: float
    alpha: float = float("nan")
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    coords: np.ndarray = field(default_factory=lambda: np.zeros(0))
    target: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gamma: Optional[np.ndarray] = None
    # worst-case eps_i over the admissible ratio range, i.e. the one minimising beta_i * eps_i
    epsilon_lb: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # guaranteed lower bound on dphi/dt^+ for the action actually returned, if xdot^- is exact
    rate_lower_bound: float = float("nan")
    eta: float = float("nan")
    clipped: bool = False

    @property
    def guarantee_held(self) -> bool:
        if not self.activated:
            return True
        return self.rate_lower_bound >= self.eta


def _checked_grad(b: BarrierFunction, x: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    grad = b.grad(x)
    if not np.linalg.norm(grad) > tol:
        raise FilterError(f"barrier gradient vanishes at x={x}; correction undefined")
    return grad


def compute_beta(b: BarrierFunction, model: SvdUncertaintyModel, x) -> np.ndarray:
    """Coordinates of ``grad phi(x)`` in the orthonormal basis given by the columns of U."""
    x = as_vector(x, b.dim, "state")
    grad = _checked_grad(b, x)
    u, _ = model.factors(x)
    return u.T @ grad


def compute_alpha(
    b: BarrierFunction,
    x,
    xdot_minus,
    eta: float,
    norm_sq: Optional[float] = None,
) -> float:
    """``(<grad phi, xdot^-> - eta) / norm_sq`` with ``norm_sq`` defaulting to ``|grad phi|^2``."""
    x = as_vector(x, b.dim, "state")
    grad = _checked_grad(b, x)
    if norm_sq is None:
        norm_sq = float(grad @ grad)
    if not norm_sq > 0:
        raise FilterError("barrier gradient has no component along the actuated directions")
    return (float(grad @ as_vector(xdot_minus, b.dim, "xdot")) - eta) / norm_sq


def solve_target(alpha: float, beta, lower, upper, slack: float) -> np.ndarray:
    """Coordinates ``z_i = <U_i, y>`` strictly satisfying the per-direction inequalities.

    Each ``z_i`` sits ``slack`` inside the open half-line allowed for its sign
    pattern of (alpha, beta_i). Directions beyond the rank of the model and
    directions with ``beta_i == 0`` contribute nothing and get ``z_i = 0``.
    """
    if not slack > 0:
        raise ConfigError("slack must be positive")
    beta = np.asarray(beta, dtype=float)
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    z = np.zeros_like(beta)
    for i in range(min(beta.size, lower.size)):
        bi = beta[i]
        if bi > 0:
            z[i] = alpha * bi / (upper[i] if alpha >= 0 else lower[i]) - slack
        elif bi < 0:
            z[i] = alpha * bi / (lower[i] if alpha <= 0 else upper[i]) + slack
    return z


def solve_gamma(target, xdot_minus, xdot_tol: float = 1e-9) -> Optional[np.ndarray]:
    """Rank-one ``Gamma`` with ``Gamma @ xdot_minus == target``, or None when ``xdot_minus`` ~ 0."""
    y = np.atleast_1d(np.asarray(target, dtype=float))
    v = np.atleast_1d(np.asarray(xdot_minus, dtype=float))
    nsq = float(v @ v)
    if np.sqrt(nsq) <= xdot_tol:
        return None
    return np.outer(y, v) / nsq


def correction_control(state: FilterState, model: SvdUncertaintyModel, target, x=None) -> np.ndarray:
    return np.asarray(state.u_last, dtype=float) - g_hat_pinv(model, x) @ np.asarray(target, dtype=float)


def _worst_epsilon(alpha, beta, z, lower, upper):
    k = lower.size
    eps_m = alpha * beta[:k] - lower * z[:k]
    eps_big = alpha * beta[:k] - upper * z[:k]
    return np.where(beta[:k] * eps_m <= beta[:k] * eps_big, eps_m, eps_big)


def rate_lower_bound(grad, xdot_minus, model: SvdUncertaintyModel, du, x=None) -> float:
    """Smallest ``dphi/dt^+`` over all admissible singular values after changing the action by ``du``.

    Uses ``xdot^+ = xdot^- + g du``, which is exact when ``xdot^-`` equals
    ``f(x) + g(x) u_last``.
    """
    u, v = model.factors(x)
    beta = u.T @ grad
    k = model.rank
    w = (v.T @ du)[:k] * beta[:k] * model.lambda_hat
    worst = np.minimum(model.lower_ratio * w, model.upper_ratio * w)
    return float(grad @ xdot_minus + np.sum(worst))


def _clip(u: np.ndarray, cfg: FilterConfig) -> Tuple[np.ndarray, bool]:
    if cfg.clip_low is None and cfg.clip_high is None:
        return u, False
    lo = -np.inf if cfg.clip_low is None else cfg.clip_low
    hi = np.inf if cfg.clip_high is None else cfg.clip_high
    clipped = np.clip(u, lo, hi)
    return clipped, bool(np.any(clipped != u))


def filter_step(
    cfg: FilterConfig,
    fs: FilterState,
    model: SvdUncertaintyModel,
    b: BarrierFunction,
    x,
    xdot_minus,
    u_nom,
    t: Optional[float] = None,
) -> Tuple[np.ndarray, CorrectionDiagnostics]:
    """One pass of the filter; mutates ``fs`` to remember the action it returns."""
    x = as_vector(x, b.dim, "state")
    phi = b.eval(x)
    if phi > cfg.theta:
        u = np.asarray(u_nom, dtype=float)
        diag = CorrectionDiagnostics(activated=False, phi=phi)
    else:
        xdot = as_vector(xdot_minus, b.dim, "xdot")
        grad = _checked_grad(b, x, cfg.grad_tol)
        umat, _ = model.factors(x)
        beta = umat.T @ grad
        k = model.rank
        if cfg.alpha_norm == "full":
            norm_sq = float(grad @ grad)
        else:
            norm_sq = float(beta[:k] @ beta[:k])
        if not norm_sq > cfg.grad_tol**2:
            raise FilterError(f"barrier gradient is orthogonal to every actuated direction at x={x}")
        alpha = (float(grad @ xdot) - cfg.eta) / norm_sq

        if cfg.frozen_gamma is not None:
            gamma = np.atleast_2d(cfg.frozen_gamma) * (np.eye(b.dim) if np.ndim(cfg.frozen_gamma) == 0 else 1.0)
            y = gamma @ xdot
            z = umat.T @ y
        else:
            z = solve_target(alpha, beta, model.lower_ratio, model.upper_ratio, cfg.slack)
            y = umat @ z
            gamma = solve_gamma(y, xdot, cfg.xdot_tol)

        u_raw = correction_control(fs, model, y, x)
        u, clipped = _clip(u_raw, cfg)
        eps = _worst_epsilon(alpha, beta, z, model.lower_ratio, model.upper_ratio)
        bound = rate_lower_bound(grad, xdot, model, u - np.asarray(fs.u_last, dtype=float), x) - cfg.eta
        diag = CorrectionDiagnostics(
            activated=True,
            phi=phi,
            alpha=alpha,
            beta=beta,
            coords=z,
            target=y,
            gamma=gamma,
            epsilon_lb=eps,
            rate_lower_bound=bound + cfg.eta,
            eta=cfg.eta,
            clipped=clipped,
        )
        if clipped and bound < 0:
            log.debug("clipping broke the recovery-rate guarantee at x=%s", x)

    fs.u_last = np.array(u, dtype=float)
    fs.x_prev = x.copy()
    if t is not None:
        fs.t_prev = t
    return u, diag


def adversarial_f(b: BarrierFunction, g, x0, u0) -> np.ndarray:
    """Drift that defeats a controller which played ``u0`` after seeing only ``x0``.

    With ``f(x0) = -grad phi(x0) - g(x0) u0`` the right derivative of ``phi``
    is ``-|grad phi(x0)|^2 < 0``, so a boundary state leaves the safe set.
    """
    x0 = as_vector(x0, b.dim, "state")
    grad = b.grad(x0)
    if not np.linalg.norm(grad) > 0:
        raise FilterError("adversarial construction needs a non-zero barrier gradient")
    gmat = np.atleast_2d(g(x0) if callable(g) else np.asarray(g, dtype=float))
    if gmat.shape[0] != b.dim:
        gmat = gmat.reshape(b.dim, -1)
    return -grad - gmat @ np.atleast_1d(np.asarray(u0, dtype=float))


class SafetyFilter:
    """Stateful wrapper that turns a nominal state-feedback law into a safe controller.

    Called with an :class:`InformationWindow`; sees nothing else. With
    ``xdot_oracle`` set, the left derivative comes from ``xdot_oracle(x,
    u_last)`` instead of the finite difference, which is only meant for
    property tests.
    """

    def __init__(
        self,
        cfg: FilterConfig,
        model: SvdUncertaintyModel,
        barrier: BarrierFunction,
        nominal: Callable[[np.ndarray], np.ndarray],
        xdot_oracle: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
        keep_diagnostics: bool = False,
    ):
        self.cfg = cfg
        self.model = model
        self.barrier = barrier
        self.nominal = nominal
        self.xdot_oracle = xdot_oracle
        self.keep_diagnostics = keep_diagnostics
        self.state: Optional[FilterState] = None
        self.activated = False
        self.last_diagnostics: Optional[CorrectionDiagnostics] = None
        self.diagnostics: list = []

    def reset(self, x0, t0: float = 0.0) -> None:
        x0 = as_vector(x0, self.barrier.dim, "state")
        u0 = np.atleast_1d(np.asarray(self.nominal(x0), dtype=float))
        self.state = FilterState(u_last=u0, x_prev=x0.copy(), t_prev=t0)
        self.diagnostics = []

    def __call__(self, window: InformationWindow) -> np.ndarray:
        x = as_vector(window.x_now, self.barrier.dim, "state")
        if self.state is None:
            self.reset(x, window.t)
        fs = self.state
        if self.xdot_oracle is not None:
            xdot = np.asarray(self.xdot_oracle(x, fs.u_last), dtype=float)
        else:
            xdot = (x - fs.x_prev) / window.delta
        u_nom = np.atleast_1d(np.asarray(self.nominal(x), dtype=float))
        u, diag = filter_step(self.cfg, fs, self.model, self.barrier, x, xdot, u_nom, t=window.t)
        self.activated = diag.activated
        self.last_diagnostics = diag
        if self.keep_diagnostics:
            self.diagnostics.append(diag)
        return u
