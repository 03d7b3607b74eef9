"""Adaptive comparison controllers for the scalar benchmark ``xdot = a x + u``.

All four are written for the 1-D plant only: the CBF-QPs have one decision
variable and are solved in closed form as projections onto a half-line, and
the convex-body-chasing polytope lives in the 2-D (alpha, beta) plane.

The adaptive CBF controllers share a model ``xdot = a_known x + theta F(x) + u``
with ``F(x) = x`` and barrier ``phi_a(x) = 1 - k x^2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .core import InformationWindow

log = logging.getLogger(__name__)


@dataclass
class AcbfState:
    theta_hat: float = 0.0
    gamma_rate: float = 5.0
    a_known: float = 1.0
    barrier_k: float = 25.0


@dataclass
class RacbfState(AcbfState):
    nu_tilde: float = 2.0
    d_bound: float = 0.07
    r_min: float = -np.inf
    r_max: float = np.inf
    inconsistent: bool = False

    def __post_init__(self):
        if not np.isfinite(self.r_min):
            self.r_min = self.theta_hat - self.nu_tilde
        if not np.isfinite(self.r_max):
            self.r_max = self.theta_hat + self.nu_tilde


def _project_halfline(u_nom: float, lhs_coef: float, rhs: float) -> float:
    """Closest ``u`` to ``u_nom`` with ``lhs_coef * u >= rhs`` (unchanged when infeasible or vacuous)."""
    if lhs_coef > 0:
        return max(u_nom, rhs / lhs_coef)
    if lhs_coef < 0:
        return min(u_nom, rhs / lhs_coef)
    return u_nom


def _cbf_qp(s: AcbfState, x: float, u_nom: float, rhs: float) -> float:
    # constraint: dphi/dx * (a x + theta_hat x + u) >= rhs,  dphi/dx = -2 k x
    dphi = -2.0 * s.barrier_k * x
    drift = (s.a_known + s.theta_hat) * x
    return _project_halfline(u_nom, dphi, rhs - dphi * drift)


def _adapt(s: AcbfState, x: float, dt: float) -> None:
    # tau = -F(x) dphi/dx = 2 k x^2
    s.theta_hat += dt * s.gamma_rate * 2.0 * s.barrier_k * x * x


def acbf_control(s: AcbfState, x: float, u_nom: float, dt: float = 0.0) -> float:
    """Adaptive CBF-QP action, then one Euler step of the estimate over ``dt``."""
    u = _cbf_qp(s, x, u_nom, 0.0)
    _adapt(s, x, dt)
    return u


def racbf_tightening(s: RacbfState) -> float:
    return s.nu_tilde**2 / (2.0 * s.gamma_rate)


def racbf_control(s: RacbfState, x: float, u_nom: float, phi_a: Optional[float] = None, dt: float = 0.0) -> float:
    """Robust adaptive CBF-QP: right side ``-phi_a(x) + nu^2 / (2 Gamma)``."""
    if phi_a is None:
        phi_a = 1.0 - s.barrier_k * x * x
    u = _cbf_qp(s, x, u_nom, -phi_a + racbf_tightening(s))
    _adapt(s, x, dt)
    return u


def smid_update(s: RacbfState, history: List[Tuple[float, float, float]]) -> RacbfState:
    """Intersect the parameter interval with the data ``(x, u, xdot)`` and refresh ``nu_tilde``.

    Each sample is consistent with ``|xdot - a x - u - x theta| <= D``. An
    empty intersection leaves the interval as it was and sets ``inconsistent``.
    The estimate is projected back into the interval before ``nu_tilde`` is
    recomputed, otherwise the ever-growing adaptation law would inflate it.
    """
    lo, hi = s.r_min, s.r_max
    for x, u, xdot in history:
        resid = xdot - s.a_known * x - u
        if abs(x) < 1e-12:
            if abs(resid) > s.d_bound:
                s.inconsistent = True
            continue
        a, b = (resid - s.d_bound) / x, (resid + s.d_bound) / x
        lo, hi = max(lo, min(a, b)), min(hi, max(a, b))
    if lo > hi:
        log.warning("set-membership interval became empty; keeping [%g, %g]", s.r_min, s.r_max)
        s.inconsistent = True
    else:
        s.r_min, s.r_max = lo, hi
    s.theta_hat = min(max(s.theta_hat, s.r_min), s.r_max)
    s.nu_tilde = max(abs(s.r_min - s.theta_hat), abs(s.r_max - s.theta_hat))
    return s


# -- convex body chasing ------------------------------------------------------


def _clip_polygon(poly: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon to ``normal . p <= offset``."""
    if poly.shape[0] == 0:
        return poly
    out = []
    vals = poly @ normal - offset
    n = poly.shape[0]
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        vp, vq = vals[i], vals[(i + 1) % n]
        if vp <= 0:
            out.append(p)
        if (vp < 0 < vq) or (vq < 0 < vp):
            out.append(p + (vp / (vp - vq)) * (q - p))
    return np.array(out) if out else np.zeros((0, 2))


def _project_segment(c: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    d = q - p
    dd = float(d @ d)
    if dd == 0.0:
        return p.copy()
    t = min(1.0, max(0.0, float((c - p) @ d) / dd))
    return p + t * d


def project_polygon(c: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Euclidean projection of ``c`` onto a convex polygon given by its vertices (counter-clockwise)."""
    n = poly.shape[0]
    if n == 1:
        return poly[0].copy()
    inside = True
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        e = q - p
        if e[0] * (c[1] - p[1]) - e[1] * (c[0] - p[0]) < 0:
            inside = False
            break
    if inside:
        return c.copy()
    best, best_d = None, np.inf
    for i in range(n):
        cand = _project_segment(c, poly[i], poly[(i + 1) % n])
        dist = float(np.sum((cand - c) ** 2))
        if dist < best_d:
            best, best_d = cand, dist
    return best


@dataclass
class CbcState:
    """Consistent-parameter polygon for ``x_{i+1} = alpha x_i + beta u_i`` and the chased candidate."""

    alpha_bound: float = 5.0
    beta_low: float = 2.5e-6
    beta_high: float = 0.05
    eta_slack: float = 1e-6
    candidate: Optional[np.ndarray] = None
    constraint_list: List[Tuple[float, float, float]] = field(default_factory=list)
    polygon: Optional[np.ndarray] = None
    empty_events: int = 0

    def __post_init__(self):
        a, lo, hi = self.alpha_bound, self.beta_low, self.beta_high
        if self.polygon is None:
            self.polygon = np.array([[-a, lo], [a, lo], [a, hi], [-a, hi]])
        if self.candidate is None:
            self.candidate = np.array([0.0, 0.5 * (lo + hi)])

    def add_sample(self, x: float, u: float, x_next: float) -> None:
        self.constraint_list.append((x, u, x_next))
        nrm = np.array([x, u])
        poly = _clip_polygon(self.polygon, nrm, x_next + self.eta_slack)
        poly = _clip_polygon(poly, -nrm, -x_next + self.eta_slack)
        if poly.shape[0] == 0:
            self.empty_events += 1
            log.warning("convex body chasing polytope became empty; keeping previous one")
            return
        self.polygon = poly
        self.candidate = project_polygon(self.candidate, poly)

    def max_violation(self, point: np.ndarray) -> float:
        """Largest amount by which ``point`` breaks a stored or box constraint."""
        a, b = point
        worst = max(abs(a) - self.alpha_bound, self.beta_low - b, b - self.beta_high, 0.0)
        for x, u, xn in self.constraint_list:
            worst = max(worst, abs(a * x + b * u - xn) - self.eta_slack)
        return worst


def cbc_control(s: CbcState, x: float, sample: Optional[Tuple[float, float, float]] = None) -> float:
    """Absorb the latest transition, chase the candidate and play the cancelling action ``-(alpha/beta) x``."""
    if sample is not None:
        s.add_sample(*sample)
    alpha, beta = s.candidate
    return -(alpha / beta) * x


# -- controller wrappers used by the simulator --------------------------------


class _Scalar:
    activated = False

    def __init__(self, nominal_gain: float = 1.0, action_clip: Optional[float] = None):
        self.nominal_gain = nominal_gain
        self.action_clip = action_clip

    def _out(self, u: float) -> np.ndarray:
        if self.action_clip is not None:
            u = float(np.clip(u, -self.action_clip, self.action_clip))
        return np.array([u])


class AcbfController(_Scalar):
    def __init__(self, state: Optional[AcbfState] = None, **kw):
        super().__init__(**kw)
        self.state = state or AcbfState()

    def __call__(self, w: InformationWindow) -> np.ndarray:
        x = float(w.x_now[0])
        u_nom = -self.nominal_gain * x
        u = acbf_control(self.state, x, u_nom, w.delta)
        self.activated = u != u_nom
        return self._out(u)


class RacbfController(_Scalar):
    """Robust aCBF; with ``smid_period`` set it becomes the set-membership variant."""

    def __init__(self, state: Optional[RacbfState] = None, smid_period: Optional[float] = None, **kw):
        super().__init__(**kw)
        self.state = state or RacbfState()
        self.smid_period = smid_period
        self._buffer: List[Tuple[float, float, float]] = []
        self._since = 0.0
        self.nu_history: List[float] = [self.state.nu_tilde]

    def __call__(self, w: InformationWindow) -> np.ndarray:
        x = float(w.x_now[0])
        if self.smid_period is not None and w.t > 0:
            self._buffer.append((float(w.x_prev[0]), float(w.u_last[0]), float(w.xdot_minus[0])))
            self._since += w.delta
            if self._since >= self.smid_period - 1e-12:
                smid_update(self.state, self._buffer)
                self.nu_history.append(self.state.nu_tilde)
                self._buffer = []
                self._since = 0.0
        u_nom = -self.nominal_gain * x
        u = racbf_control(self.state, x, u_nom, dt=w.delta)
        self.activated = u != u_nom
        return self._out(u)


class CbcController(_Scalar):
    def __init__(self, state: Optional[CbcState] = None, **kw):
        super().__init__(**kw)
        self.state = state or CbcState()

    def __call__(self, w: InformationWindow) -> np.ndarray:
        x = float(w.x_now[0])
        sample = None
        if w.t > 0:
            sample = (float(w.x_prev[0]), float(w.u_last[0]), x)
        self.activated = True
        return self._out(cbc_control(self.state, x, sample))
