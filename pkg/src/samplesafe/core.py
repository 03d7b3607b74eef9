"""Barrier functions, safe sub-level sets and the two-sample information window."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


class ConfigError(ValueError):
    """Raised when a component is constructed or called with inconsistent settings."""


def as_vector(x, dim: Optional[int] = None, name: str = "vector") -> np.ndarray:
    """Return ``x`` as a 1-D float array, checking its length when ``dim`` is given."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise ConfigError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ConfigError(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    return arr


def finite_difference_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (fn(x + e) - fn(x - e)) / (2.0 * h)
    return grad


@dataclass(frozen=True)
class BarrierFunction:
    """Scalar barrier ``phi`` whose super-level set ``{phi >= 0}`` is the safe set.

    ``grad`` may be omitted, in which case a central finite difference is used.
    Every shipped benchmark supplies an analytic gradient.
    """

    value: Callable[[np.ndarray], float]
    dim: int
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "phi"
    fd_step: float = 1e-6

    def eval(self, x) -> float:
        return float(self.value(as_vector(x, self.dim, "state")))

    def grad(self, x) -> np.ndarray:
        x = as_vector(x, self.dim, "state")
        if self.gradient is None:
            return finite_difference_gradient(self.value, x, self.fd_step)
        return as_vector(self.gradient(x), self.dim, "gradient")


def phi_eval(b: BarrierFunction, x) -> float:
    return b.eval(x)


def grad_check(b: BarrierFunction, x, h: float = 1e-6) -> float:
    """Max relative error between ``b.grad`` and a central finite difference of ``b.eval``.

    The error is normalised by the larger infinity norm of the two gradient
    estimates, so coordinates with an exactly zero derivative do not blow up.
    """
    if h <= 0:
        raise ConfigError("finite-difference step must be positive")
    x = as_vector(x, b.dim, "state")
    analytic = b.grad(x)
    numeric = finite_difference_gradient(b.value, x, h)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


@dataclass(frozen=True)
class SafeSubset:
    """The theta-super-level set ``{x : phi(x) >= theta}``."""

    barrier: BarrierFunction
    theta: float = 0.0

    def __post_init__(self):
        if not self.theta >= 0:
            raise ConfigError(f"theta must be >= 0, got {self.theta}")

    def contains(self, x) -> bool:
        return self.barrier.eval(x) >= self.theta

    def distance(self, x) -> float:
        return distance_to_subset(self, x)


def distance_to_subset(s: SafeSubset, x) -> float:
    """Barrier-level distance ``theta - phi(x)``, clamped to zero inside the set."""
    return max(0.0, s.theta - s.barrier.eval(x))


@dataclass(frozen=True)
class InformationWindow:
    """What a controller may see at one control instant.

    ``x_prev`` is the state exactly ``delta`` seconds before ``x_now`` and
    ``u_last`` is the action that was held over that interval.
    """

    x_now: np.ndarray
    x_prev: np.ndarray
    u_last: np.ndarray
    delta: float
    t: float = 0.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigError("information window needs delta > 0; a single sample cannot certify safety")

    @property
    def xdot_minus(self) -> np.ndarray:
        return (np.asarray(self.x_now, dtype=float) - np.asarray(self.x_prev, dtype=float)) / self.delta


def quadratic_barrier_1d(half_width: float = 0.2) -> BarrierFunction:
    """``phi(x) = 1 - (x / half_width)^2``; with 0.2 this is ``1 - 25 x^2``."""
    k = 1.0 / half_width**2
    return BarrierFunction(
        value=lambda x: 1.0 - k * x[0] ** 2,
        gradient=lambda x: np.array([-2.0 * k * x[0]]),
        dim=1,
        name=f"1-{k:g}x^2",
    )


def ellipse_barrier(radii) -> BarrierFunction:
    """``phi(x) = 1 - sum((x_i / r_i)^2)``, an ellipsoidal safe set centred at the origin."""
    radii = as_vector(radii, name="radii")
    inv = 1.0 / radii**2
    return BarrierFunction(
        value=lambda x: 1.0 - float(np.sum(inv * x**2)),
        gradient=lambda x: -2.0 * inv * x,
        dim=radii.size,
        name="ellipse",
    )


def abs_barrier_1d() -> BarrierFunction:
    """``phi(x) = 1 - |x|``: not differentiable at 0, used to exercise :func:`grad_check`."""
    return BarrierFunction(
        value=lambda x: 1.0 - abs(x[0]),
        gradient=lambda x: np.array([-1.0 if x[0] >= 0 else 1.0]),
        dim=1,
        name="1-|x|",
    )
