"""Tabular oracle for the shielded score-function estimator.

A tiny episodic MDP (2 states, 2 actions, horizon 3) where the shield is a
fixed lookup table ``C[s, a, u_last]``. Because every trajectory can be
listed, the exact policy gradient is available and the Monte-Carlo average of
the episode-score estimator can be tested against it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class TabularMDP:
    init: np.ndarray  # (S,)
    trans: np.ndarray  # (S, U, S)
    reward: np.ndarray  # (S, U)
    shield: np.ndarray  # (S, A, U_last) -> played action index
    horizon: int = 3
    gamma: float = 0.9

    @property
    def n_states(self) -> int:
        return self.init.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]


def default_mdp(identity_shield: bool = False) -> TabularMDP:
    """Fixed oracle MDP. The shield overrides action 1 in state 1 unless the last action was 0."""
    init = np.array([0.6, 0.4])
    trans = np.array(
        [
            [[0.7, 0.3], [0.2, 0.8]],
            [[0.5, 0.5], [0.9, 0.1]],
        ]
    )
    reward = np.array([[1.0, -0.5], [0.3, 2.0]])
    shield = np.empty((2, 2, 2), dtype=int)
    for s, a, ul in itertools.product(range(2), repeat=3):
        shield[s, a, ul] = a
    if not identity_shield:
        shield[1, 1, 1] = 0
        shield[0, 0, 1] = 1
    return TabularMDP(init, trans, reward, shield)


def softmax_policy(theta: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = theta / temperature
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)


def _score(theta: np.ndarray, temperature: float, s: int, a: int) -> np.ndarray:
    """``grad_theta log pi(a|s)`` for the tempered softmax."""
    pi = softmax_policy(theta, temperature)
    g = np.zeros_like(theta)
    g[s] = -pi[s] / temperature
    g[s, a] += 1.0 / temperature
    return g


def enumerate_paths(mdp: TabularMDP, theta: np.ndarray, temperature: float = 1.0):
    """Yield ``(probability, return, score)`` for every trajectory with nonzero probability.

    The initial last action is 0.
    """
    pi = softmax_policy(theta, temperature)
    S, A, H = mdp.n_states, mdp.n_actions, mdp.horizon
    for s0 in range(S):
        for acts in itertools.product(range(A), repeat=H):
            for nexts in itertools.product(range(S), repeat=H - 1):
                p = mdp.init[s0]
                s, ul = s0, 0
                ret, score = 0.0, np.zeros_like(theta)
                for n in range(H):
                    a = acts[n]
                    u = mdp.shield[s, a, ul]
                    p *= pi[s, a]
                    ret += mdp.gamma**n * mdp.reward[s, u]
                    score += _score(theta, temperature, s, a)
                    if n < H - 1:
                        p *= mdp.trans[s, u, nexts[n]]
                        s = nexts[n]
                    ul = u
                if p > 0:
                    yield p, ret, score


def exact_objective(mdp: TabularMDP, theta: np.ndarray, temperature: float = 1.0) -> float:
    return float(sum(p * r for p, r, _ in enumerate_paths(mdp, theta, temperature)))


def exact_gradient(mdp: TabularMDP, theta: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Score-weighted return summed over all trajectories."""
    g = np.zeros_like(theta)
    for p, r, sc in enumerate_paths(mdp, theta, temperature):
        g += p * r * sc
    return g


def fd_gradient(mdp: TabularMDP, theta: np.ndarray, temperature: float = 1.0, h: float = 1e-6) -> np.ndarray:
    """Central differences of the enumerated objective; uses no score functions at all."""
    g = np.zeros_like(theta)
    for idx in np.ndindex(theta.shape):
        tp, tm = theta.copy(), theta.copy()
        tp[idx] += h
        tm[idx] -= h
        g[idx] = (exact_objective(mdp, tp, temperature) - exact_objective(mdp, tm, temperature)) / (2 * h)
    return g


def sample_estimates(
    mdp: TabularMDP, theta: np.ndarray, n: int, rng: np.random.Generator, temperature: float = 1.0
) -> np.ndarray:
    """``n`` independent episode estimates ``(sum_n grad log pi(a_n|s_n)) * R``, shape ``(n,) + theta.shape``."""
    pi = softmax_policy(theta, temperature)
    S = mdp.n_states
    s = (rng.random(n) >= mdp.init[0]).astype(int) if S == 2 else rng.choice(S, size=n, p=mdp.init)
    ul = np.zeros(n, dtype=int)
    ret = np.zeros(n)
    score = np.zeros((n,) + theta.shape)
    rows = np.arange(n)
    for step in range(mdp.horizon):
        a = (rng.random(n) >= pi[s, 0]).astype(int)
        u = mdp.shield[s, a, ul]
        ret += mdp.gamma**step * mdp.reward[s, u]
        score[rows, s, :] -= pi[s] / temperature
        score[rows, s, a] += 1.0 / temperature
        s = (rng.random(n) >= mdp.trans[s, u, 0]).astype(int)
        ul = u
    return score * ret[:, None, None]


@dataclass
class UnbiasednessReport:
    exact: np.ndarray
    fd: np.ndarray
    mc_mean: np.ndarray
    mc_se: np.ndarray
    z: np.ndarray
    n_samples: int

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))

    def passed(self, z_limit: float = 4.0) -> bool:
        return self.max_abs_z < z_limit


def unbiasedness_check(
    mdp: Optional[TabularMDP] = None,
    theta: Optional[np.ndarray] = None,
    n_samples: int = 100_000,
    seed: int = 0,
    temperature: float = 1.0,
) -> UnbiasednessReport:
    mdp = mdp or default_mdp()
    theta = np.array([[0.3, -0.2], [-0.4, 0.5]]) if theta is None else np.asarray(theta, dtype=float)
    rng = np.random.default_rng(seed)
    est = sample_estimates(mdp, theta, n_samples, rng, temperature)
    mean = est.mean(axis=0)
    se = est.std(axis=0, ddof=1) / np.sqrt(n_samples)
    exact = exact_gradient(mdp, theta, temperature)
    diff = mean - exact
    with np.errstate(divide="ignore", invalid="ignore"):
        # zero spread means every sample equals the mean; anything but an exact match is infinitely significant
        z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(np.abs(diff) < 1e-12, 0.0, np.inf))
    return UnbiasednessReport(exact, fd_gradient(mdp, theta, temperature), mean, se, z, n_samples)
