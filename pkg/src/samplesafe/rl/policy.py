"""Gaussian policy with an MLP mean, written directly in numpy.

Parameters are one flat vector ``w``; layers are unpacked as views into it.
The backward pass returns the gradient of ``<g_mu, mean(s)>`` with respect
to ``w``, which is all the score function needs.
"""

from __future__ import annotations

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np


class GaussianPolicy:
    def __init__(
        self,
        dim_in: int,
        dim_out: int,
        hidden: Sequence[int] = (100, 100),
        sigma: float = 0.7,
        input_scale: Optional[Sequence[float]] = None,
    ):
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        self.dim_in = dim_in
        self.dim_out = dim_out
        self.hidden = tuple(hidden)
        self.sigma = float(sigma)
        self.input_scale = np.ones(dim_in) if input_scale is None else np.asarray(input_scale, dtype=float)
        sizes = (dim_in,) + self.hidden + (dim_out,)
        self.shapes: List[Tuple[int, int]] = list(zip(sizes[:-1], sizes[1:]))
        self.n_params = sum(i * o + o for i, o in self.shapes)

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """Glorot-uniform weights, zero biases, output layer shrunk so initial means are near zero."""
        parts = []
        for li, (i, o) in enumerate(self.shapes):
            lim = math.sqrt(6.0 / (i + o))
            if li == len(self.shapes) - 1:
                lim *= 0.1
            parts.append(rng.uniform(-lim, lim, size=i * o))
            parts.append(np.zeros(o))
        return np.concatenate(parts)

    def unpack(self, w: np.ndarray):
        layers, k = [], 0
        for i, o in self.shapes:
            W = w[k : k + i * o].reshape(i, o)
            k += i * o
            b = w[k : k + o]
            k += o
            layers.append((W, b))
        return layers

    def forward(self, w: np.ndarray, s: np.ndarray):
        h = np.asarray(s, dtype=float) * self.input_scale
        acts = [h]
        layers = self.unpack(w)
        for W, b in layers[:-1]:
            h = np.tanh(h @ W + b)
            acts.append(h)
        W, b = layers[-1]
        return h @ W + b, acts

    def mean(self, w: np.ndarray, s: np.ndarray) -> np.ndarray:
        return self.forward(w, s)[0]

    def backward(self, w: np.ndarray, acts, g_mu: np.ndarray) -> np.ndarray:
        layers = self.unpack(w)
        grads = []
        delta = np.asarray(g_mu, dtype=float)
        for li in range(len(layers) - 1, -1, -1):
            W, _ = layers[li]
            a_in = acts[li]
            grads.append(delta)
            grads.append(np.outer(a_in, delta).ravel())
            if li > 0:
                delta = (delta @ W.T) * (1.0 - a_in * a_in)
        return np.concatenate(grads[::-1])

    def log_prob(self, w: np.ndarray, s: np.ndarray, a: np.ndarray) -> float:
        mu = self.mean(w, s)
        r = (np.asarray(a, dtype=float) - mu) / self.sigma
        return float(-0.5 * r @ r - self.dim_out * math.log(self.sigma * math.sqrt(2.0 * math.pi)))

    def grad_log_prob(self, w: np.ndarray, s: np.ndarray, a: np.ndarray) -> Tuple[float, np.ndarray]:
        mu, acts = self.forward(w, s)
        diff = np.asarray(a, dtype=float) - mu
        logp = float(-0.5 * diff @ diff / self.sigma**2 - self.dim_out * math.log(self.sigma * math.sqrt(2.0 * math.pi)))
        return logp, self.backward(w, acts, diff / self.sigma**2)

    def sample(self, w: np.ndarray, s: np.ndarray, rng: np.random.Generator, z: Optional[np.ndarray] = None):
        """Draw ``a = mean(s) + sigma z`` and return it with ``grad_w log pi(a|s)``.

        Passing ``z`` fixes the noise (``z = 0`` yields the mean action).
        """
        mu, acts = self.forward(w, s)
        if z is None:
            z = rng.standard_normal(self.dim_out)
        a = mu + self.sigma * np.asarray(z, dtype=float)
        return a, self.backward(w, acts, (a - mu) / self.sigma**2)
