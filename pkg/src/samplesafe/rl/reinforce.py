"""Shielded REINFORCE.

Each episode samples ``a_n ~ pi_w(.|s_n)``, clips it to the actuator box,
passes it through the shield ``C(s_n, sdot_n^-, a_n, u_{n-1})`` and plays the
result. The gradient estimate is ``(sum_n grad log pi_w(a_n|s_n)) * R`` with
the score taken at the *sampled* action; the shield never enters it.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from ..core import BarrierFunction
from ..dynamics import AffineSystem, VehicleParams, vehicle4d
from ..filter import CorrectionDiagnostics, FilterConfig, FilterState, filter_step
from ..uncertainty import SvdUncertaintyModel
from .policy import GaussianPolicy

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
EPISODE_FIELDS = ["episode", "steps", "return", "success", "violations", "min_phi", "cost_sum"]


@dataclass
class ControlEnv:
    """Discrete-time view of an affine system: ``s_{n+1} = clip(s_n + T_s xdot^+)``."""

    system: AffineSystem
    barrier: BarrierFunction
    reward: Callable[[np.ndarray, np.ndarray], Tuple[float, bool]]
    cost: Callable[[np.ndarray], float]
    x0: np.ndarray
    ts: float

    def transition(self, s: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.system.clip(s + self.ts * self.system.xdot(s, u))


def vehicle_env(params: VehicleParams = VehicleParams(), ts: float = 0.02, x0=None) -> ControlEnv:
    sys, barrier, reward, cost = vehicle4d(params)
    x0 = np.zeros(4) if x0 is None else np.asarray(x0, dtype=float)
    return ControlEnv(sys, barrier, reward, cost, x0, ts)


class Shield:
    """Deterministic overwrite ``C(s, sdot^-, a, u_last)``.

    Passes ``a`` through while ``phi(s) > trigger`` and otherwise returns the
    filter's correction. A fresh filter state is built from the arguments on
    every call, so the output depends on nothing else.
    """

    def __init__(self, cfg: FilterConfig, model: SvdUncertaintyModel, barrier: BarrierFunction):
        self.cfg = cfg
        self.model = model
        self.barrier = barrier

    @property
    def trigger(self) -> float:
        return self.cfg.theta

    def __call__(self, s, sdot_minus, a, u_last) -> Tuple[np.ndarray, CorrectionDiagnostics]:
        fs = FilterState(u_last=np.array(u_last, dtype=float), x_prev=np.array(s, dtype=float))
        return filter_step(self.cfg, fs, self.model, self.barrier, s, sdot_minus, a)


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    episodes: int = 500
    step_size: float = 1e-5
    seed: int = 0
    ts: float = 0.02
    max_steps: int = 1000
    action_clip: Optional[float] = 100.0
    hidden: Tuple[int, ...] = (100, 100)
    sigma: float = 0.7
    # off by default: the estimator is used verbatim unless explicitly asked for
    mean_subtract: bool = False

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.step_size < 0:
            raise ValueError("step size must be non-negative")


@dataclass
class RolloutStep:
    s: np.ndarray
    a: np.ndarray
    u: np.ndarray
    r: float
    phi: float
    cost: float
    shielded: bool
    logp_grad: Optional[np.ndarray] = None


@dataclass
class Rollout:
    steps: List[RolloutStep] = field(default_factory=list)
    return_: float = 0.0
    succeeded: bool = False
    aborted: bool = False
    # sum over steps of grad log pi(a_n|s_n), accumulated at sampling time
    score: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def phis(self) -> np.ndarray:
        return np.array([st.phi for st in self.steps])

    @property
    def violations(self) -> int:
        return int(np.sum(self.phis < 0))

    def violations_after_entry(self) -> Tuple[bool, int]:
        """Whether the safe set was ever reached and how many unsafe samples came after that."""
        phis = self.phis
        inside = np.nonzero(phis >= 0)[0]
        if inside.size == 0:
            return False, 0
        return True, int(np.sum(phis[inside[0] :] < 0))

    @property
    def cost_sum(self) -> float:
        return float(sum(st.cost for st in self.steps))


def rollout(
    env: ControlEnv,
    policy: GaussianPolicy,
    w: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
    shield: Optional[Shield] = None,
    keep_step_grads: bool = False,
    noise: Optional[Callable[[int], np.ndarray]] = None,
) -> Rollout:
    s = np.array(env.x0, dtype=float)
    s_prev = s.copy()
    u_last = np.zeros(policy.dim_out)
    out = Rollout(score=np.zeros_like(w))
    discount = 1.0
    for n in range(cfg.max_steps):
        sdot = (s - s_prev) / cfg.ts
        a, g = policy.sample(w, s, rng, None if noise is None else noise(n))
        if cfg.action_clip is not None:
            a_exec = np.clip(a, -cfg.action_clip, cfg.action_clip)
        else:
            a_exec = a
        shielded = False
        if shield is not None:
            u, diag = shield(s, sdot, a_exec, u_last)
            shielded = diag.activated
        else:
            u = a_exec
        s_next = env.transition(s, u)
        if not np.all(np.isfinite(s_next)):
            out.aborted = True
            log.warning("non-finite state at step %d; episode aborted", n)
            break
        r, done = env.reward(s, s_next)
        out.steps.append(
            RolloutStep(
                s=s,
                a=a,
                u=np.array(u, dtype=float),
                r=float(r),
                phi=env.barrier.eval(s),
                cost=float(env.cost(s_next)),
                shielded=shielded,
                logp_grad=g if keep_step_grads else None,
            )
        )
        out.score += g
        out.return_ += discount * r
        discount *= cfg.gamma
        s_prev, s, u_last = s, s_next, np.array(u, dtype=float)
        if done:
            out.succeeded = True
            break
    return out


def estimate_gradient(r: Rollout, baseline: float = 0.0) -> np.ndarray:
    """``(sum_n grad log pi(a_n|s_n)) * (R - baseline)``; baseline 0 is the plain estimator."""
    return r.score * (r.return_ - baseline)


def sgd_update(w: np.ndarray, grad: np.ndarray, alpha_e: float) -> np.ndarray:
    return w + alpha_e * grad


@dataclass
class EpisodeRecord:
    episode: int
    steps: int
    return_: float
    success: bool
    violations: int
    min_phi: float
    cost_sum: float
    entered_safe_set: bool
    violations_after_entry: int
    shield_activations: int

    def row(self) -> list:
        return [self.episode, self.steps, repr(self.return_), int(self.success), self.violations, repr(self.min_phi), repr(self.cost_sum)]


def train(
    env: ControlEnv,
    cfg: TrainConfig,
    shield: Optional[Shield] = None,
    policy: Optional[GaussianPolicy] = None,
    input_scale=None,
) -> Tuple[List[EpisodeRecord], np.ndarray]:
    """Run ``cfg.episodes`` episodes of (optionally shielded) REINFORCE from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    dim_in = env.system.dim_state
    policy = policy or GaussianPolicy(dim_in, env.system.dim_action, cfg.hidden, cfg.sigma, input_scale)
    w = policy.init_params(rng)
    records: List[EpisodeRecord] = []
    running_mean = 0.0
    for e in range(cfg.episodes):
        ro = rollout(env, policy, w, cfg, rng, shield)
        baseline = running_mean if (cfg.mean_subtract and e > 0) else 0.0
        grad = estimate_gradient(ro, baseline)
        if np.all(np.isfinite(grad)):
            w = sgd_update(w, grad, cfg.step_size)
        else:
            log.warning("non-finite gradient in episode %d; update skipped", e)
        running_mean += (ro.return_ - running_mean) / (e + 1)
        entered, after = ro.violations_after_entry()
        phis = ro.phis
        records.append(
            EpisodeRecord(
                episode=e,
                steps=len(ro),
                return_=float(ro.return_),
                success=ro.succeeded,
                violations=ro.violations,
                min_phi=float(phis.min()) if phis.size else math.nan,
                cost_sum=ro.cost_sum,
                entered_safe_set=entered,
                violations_after_entry=after,
                shield_activations=sum(st.shielded for st in ro.steps),
            )
        )
    return records, w


def write_episode_csv(records: List[EpisodeRecord], path=None) -> str:
    """One row per episode; returns the text and also writes it when ``path`` is given."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(EPISODE_FIELDS)
    for rec in records:
        wr.writerow(rec.row())
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def checkpoint_bytes(w: np.ndarray, policy: GaussianPolicy) -> bytes:
    """A JSON header line followed by the little-endian float64 weights."""
    header = {
        "version": CHECKPOINT_VERSION,
        "n_params": int(w.size),
        "dim_in": policy.dim_in,
        "dim_out": policy.dim_out,
        "hidden": list(policy.hidden),
        "sigma": policy.sigma,
    }
    return (json.dumps(header, sort_keys=True) + "\n").encode("utf-8") + np.asarray(w, dtype="<f8").tobytes()


def save_checkpoint(path, w: np.ndarray, policy: GaussianPolicy) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(w, policy))


def load_checkpoint(path) -> Tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        w = np.frombuffer(fh.read(), dtype="<f8").copy()
    if w.size != header["n_params"]:
        raise ValueError("checkpoint is truncated")
    return header, w
