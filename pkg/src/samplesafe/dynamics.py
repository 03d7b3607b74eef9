"""Closed-loop simulation of control-affine systems under zero-order-hold control.

Also hosts the three benchmark systems: the unstable scalar plant, the 2-D
bicycle yaw model and the 4-D nonlinear vehicle used for shielded training.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .core import BarrierFunction, ConfigError, InformationWindow, as_vector, quadratic_barrier_1d

METHODS = ("euler", "rk4")


class SimulationFault(RuntimeError):
    """Non-finite state during integration; ``trajectory`` holds the samples so far."""

    def __init__(self, message: str, trajectory: Optional["Trajectory"] = None):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class AffineSystem:
    """``xdot = f(x) + g(x) u``. ``state_clip`` is a (low, high) pair of per-coordinate bounds."""

    drift: Callable[[np.ndarray], np.ndarray]
    actuation: Callable[[np.ndarray], np.ndarray]
    dim_state: int
    dim_action: int
    state_clip: Optional[Tuple[np.ndarray, np.ndarray]] = None
    name: str = "system"

    def f(self, x) -> np.ndarray:
        return np.asarray(self.drift(x), dtype=float).reshape(self.dim_state)

    def g(self, x) -> np.ndarray:
        return np.asarray(self.actuation(x), dtype=float).reshape(self.dim_state, self.dim_action)

    def xdot(self, x, u) -> np.ndarray:
        return self.f(x) + self.g(x) @ np.asarray(u, dtype=float).reshape(self.dim_action)

    def clip(self, x: np.ndarray) -> np.ndarray:
        if self.state_clip is None:
            return x
        return np.clip(x, self.state_clip[0], self.state_clip[1])


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    method: str = "rk4"
    horizon: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown integration method {self.method!r}; expected one of {METHODS}")
        if not self.horizon >= self.dt:
            raise ConfigError("horizon must be at least one step")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class Trajectory:
    t: List[float] = field(default_factory=list)
    x: List[np.ndarray] = field(default_factory=list)
    u: List[np.ndarray] = field(default_factory=list)
    phi: List[float] = field(default_factory=list)
    activated: List[bool] = field(default_factory=list)

    def append(self, t, x, u, phi, activated) -> None:
        self.t.append(float(t))
        self.x.append(np.array(x, dtype=float))
        self.u.append(np.array(u, dtype=float))
        self.phi.append(float(phi))
        self.activated.append(bool(activated))

    def __len__(self) -> int:
        return len(self.t)

    @property
    def states(self) -> np.ndarray:
        return np.array(self.x)

    @property
    def actions(self) -> np.ndarray:
        return np.array(self.u)

    @property
    def phis(self) -> np.ndarray:
        return np.array(self.phi)

    @property
    def times(self) -> np.ndarray:
        return np.array(self.t)

    def to_csv(self, path=None) -> str:
        """Write ``t,x0..,u0..,phi,activated`` rows; floats use ``repr`` so output is bit-exact."""
        d = self.x[0].size if self.x else 0
        p = self.u[0].size if self.u else 0
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{i}" for i in range(d)] + [f"u{i}" for i in range(p)] + ["phi", "activated"])
        for t, x, u, phi, act in zip(self.t, self.x, self.u, self.phi, self.activated):
            w.writerow([repr(t)] + [repr(float(v)) for v in x] + [repr(float(v)) for v in u] + [repr(phi), int(act)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def step(sys: AffineSystem, cfg: IntegratorConfig, x, u) -> np.ndarray:
    """Advance one ``dt`` with ``u`` held constant, then saturate the state."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    dt = cfg.dt
    if cfg.method == "euler":
        x_next = x + dt * sys.xdot(x, u)
    else:
        k1 = sys.xdot(x, u)
        k2 = sys.xdot(x + 0.5 * dt * k1, u)
        k3 = sys.xdot(x + 0.5 * dt * k2, u)
        k4 = sys.xdot(x + dt * k3, u)
        x_next = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    x_next = sys.clip(x_next)
    if not np.all(np.isfinite(x_next)):
        raise SimulationFault(f"non-finite state {x_next} after step from {x} with u={u}")
    return x_next


def simulate(
    sys: AffineSystem,
    cfg: IntegratorConfig,
    controller: Callable[[InformationWindow], np.ndarray],
    x0,
    barrier: Optional[BarrierFunction] = None,
    u_init=None,
) -> Trajectory:
    """Run the closed loop for ``cfg.horizon`` seconds.

    The controller sees only the current state, the state one step earlier and
    the action held in between. ``activated`` is read from the controller's
    ``activated`` attribute when it has one.
    """
    x = as_vector(x0, sys.dim_state, "x0").copy()
    u_last = np.zeros(sys.dim_action) if u_init is None else as_vector(u_init, sys.dim_action, "u_init")
    x_prev = x.copy()
    traj = Trajectory()
    n = cfg.n_steps
    for k in range(n + 1):
        t = k * cfg.dt
        window = InformationWindow(x_now=x, x_prev=x_prev, u_last=u_last, delta=cfg.dt, t=t)
        u = np.atleast_1d(np.asarray(controller(window), dtype=float))
        if not np.all(np.isfinite(u)):
            raise SimulationFault(f"controller returned non-finite action {u} at t={t}", traj)
        phi = barrier.eval(x) if barrier is not None else float("nan")
        traj.append(t, x, u, phi, getattr(controller, "activated", False))
        if k == n:
            break
        try:
            x_next = step(sys, cfg, x, u)
        except SimulationFault as exc:
            exc.trajectory = traj
            raise
        x_prev, x, u_last = x, x_next, u
    return traj


# -- benchmark systems -------------------------------------------------------


def linear1d(a: float = 1.5, b: float = 1.0, nominal_gain: float = 1.0, half_width: float = 0.2):
    """``xdot = a x + b u`` with nominal law ``u = -gain x`` and ``phi = 1 - (x / half_width)^2``."""
    sys = AffineSystem(
        drift=lambda x: np.array([a * x[0]]),
        actuation=lambda x: np.array([[b]]),
        dim_state=1,
        dim_action=1,
        name="linear1d",
    )

    def nominal(x):
        return np.array([-nominal_gain * np.asarray(x, dtype=float)[0]])

    return sys, nominal, quadratic_barrier_1d(half_width)


@dataclass(frozen=True)
class BicycleParams:
    m: float = 1500.0
    a1: float = 1.2
    a2: float = 1.6
    iz: float = 2500.0
    u_speed: float = 20.0
    cf: float = 8.0e4
    cr: float = 8.0e4


def bicycle2d(m, a1, a2, iz, u_speed, cf_hidden, cr_hidden) -> AffineSystem:
    """Linear 2-D yaw model, state ``[v, r]``, input front steering angle."""
    if min(m, a1, a2, iz, u_speed, cf_hidden, cr_hidden) <= 0:
        raise ConfigError("bicycle parameters must be positive")
    mu = m * u_speed
    ui = u_speed * iz
    a_mat = np.array(
        [
            [-(cr_hidden + cf_hidden) / mu, (cr_hidden * a2 - cf_hidden * a1) / mu - u_speed],
            [(cr_hidden * a2 - cf_hidden * a1) / ui, -(cf_hidden * a1**2 + cr_hidden * a2**2) / ui],
        ]
    )
    g_col = np.array([[cf_hidden / m], [cf_hidden * a1 / iz]])
    return AffineSystem(
        drift=lambda x: a_mat @ x,
        actuation=lambda x: g_col,
        dim_state=2,
        dim_action=1,
        name="bicycle2d",
    )


def sinc_ratio(psi: float) -> float:
    """``sin(psi) / psi`` with the removable singularity at 0 filled by its series."""
    if abs(psi) < 1e-4:
        p2 = psi * psi
        return 1.0 - p2 / 6.0 + p2 * p2 / 120.0
    return math.sin(psi) / psi


@dataclass(frozen=True)
class VehicleParams:
    m: float = 100.0
    iz: float = 20.0
    a: float = 1.0
    c_alpha: float = 10.0
    c0: float = 70.0
    c1: float = 40.0
    c2: float = 180.0
    vx: float = 5.0
    vy_clip: float = 7.0
    r_clip: float = 350.0
    # barrier phi = offset - r_weight (r - r_ref)^2 - vy_weight (V_y - vy_ref)^2
    phi_offset: float = 200.0
    phi_r_weight: float = 4.0
    phi_vy_weight: float = 0.001
    r_ref: float = 50.0 * math.pi
    vy_ref: float = 2.5
    # goal heading and tolerance
    psi_goal: float = math.pi / 2
    psi_tol: float = math.pi / 36
    goal_reward: float = 7000.0
    step_penalty: float = 4.0
    shaping_weight: float = 0.25
    shaping_eps: float = 1e-4
    # constraint cost
    cost_r_weight: float = 0.004
    cost_vy_weight: float = 1e-6
    cost_cap: float = 0.1


def vehicle4d(params: VehicleParams = VehicleParams()):
    """Nonlinear 4-D yaw model with state ``[V_y, r, psi, y]``.

    Returns ``(system, barrier, reward, cost)`` where ``reward(s, s_next)``
    returns ``(r, done)`` and ``cost(s_next)`` is the capped constraint cost.
    The longitudinal speed ``V_x`` is held constant and the net speed is
    ``sqrt(V_x^2 + V_y^2)``.
    """
    p = params

    def drift(x):
        vy, r, psi, _ = x
        v = math.hypot(p.vx, vy)
        return np.array(
            [
                -p.c0 / (p.m * v) * vy + (-p.c1 / (p.m * v) - v) * r,
                -p.c1 / (p.iz * v) * vy - p.c2 / (p.iz * v) * r,
                r,
                math.cos(psi) * vy + p.vx * sinc_ratio(psi) * psi,
            ]
        )

    g_col = np.array([[p.c_alpha / p.m], [p.a * p.c_alpha / p.iz], [0.0], [0.0]])
    lim = np.array([p.vy_clip, p.r_clip, np.inf, np.inf])
    sys = AffineSystem(
        drift=drift,
        actuation=lambda x: g_col,
        dim_state=4,
        dim_action=1,
        state_clip=(-lim, lim),
        name="vehicle4d",
    )

    def phi(x):
        return p.phi_offset - p.phi_r_weight * (x[1] - p.r_ref) ** 2 - p.phi_vy_weight * (x[0] - p.vy_ref) ** 2

    def grad(x):
        return np.array([-2.0 * p.phi_vy_weight * (x[0] - p.vy_ref), -2.0 * p.phi_r_weight * (x[1] - p.r_ref), 0.0, 0.0])

    barrier = BarrierFunction(value=phi, gradient=grad, dim=4, name="vehicle4d")

    def reward(s, s_next) -> Tuple[float, bool]:
        if abs(s_next[2] - p.psi_goal) < p.psi_tol:
            return p.goal_reward, True
        return -p.step_penalty + p.shaping_weight / ((s[2] - p.psi_goal) ** 2 + p.shaping_eps), False

    def cost(s_next) -> float:
        c = p.cost_r_weight * (s_next[1] - p.r_ref) ** 2 + p.cost_vy_weight * (s_next[0] - p.vy_ref) ** 2
        return min(c, p.cost_cap)

    return sys, barrier, reward, cost


def bicycle_barrier(v_max: float = 2.0, r_max: float = 0.5) -> BarrierFunction:
    """Ellipse ``1 - (v/v_max)^2 - (r/r_max)^2`` on the bicycle state."""
    from .core import ellipse_barrier

    b = ellipse_barrier([v_max, r_max])
    return BarrierFunction(value=b.value, gradient=b.gradient, dim=2, name="bicycle-ellipse")


def lipschitz_ratio(fn: Callable[[np.ndarray], np.ndarray], points: Sequence[np.ndarray], rng: np.random.Generator, h: float = 1e-3) -> float:
    """Largest ``|fn(x + e) - fn(x)| / |e|`` over random perturbations ``|e| = h`` at ``points``."""
    worst = 0.0
    for x in points:
        e = rng.normal(size=np.shape(x))
        e *= h / np.linalg.norm(e)
        worst = max(worst, float(np.linalg.norm(np.asarray(fn(x + e)) - np.asarray(fn(x))) / h))
    return worst
