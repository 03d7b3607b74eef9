"""Scalar metrics over trajectories and per-seed aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional

import numpy as np


def safety_rate(phis) -> float:
    """Fraction of samples with ``phi >= 0``."""
    phis = np.asarray(phis, dtype=float)
    if phis.size == 0:
        return math.nan
    return float(np.mean(phis >= 0))


def violations(phis) -> int:
    return int(np.sum(np.asarray(phis, dtype=float) < 0))


def recovery_time(times, phis, theta: float) -> Optional[float]:
    """Time of the first sample with ``phi >= theta``; ``None`` if it never happens."""
    idx = np.nonzero(np.asarray(phis, dtype=float) >= theta)[0]
    if idx.size == 0:
        return None
    return float(np.asarray(times)[idx[0]])


def min_phi(phis) -> float:
    phis = np.asarray(phis, dtype=float)
    return float(phis.min()) if phis.size else math.nan


@dataclass(frozen=True)
class Summary:
    mean: float
    std: float
    n: int

    def as_dict(self) -> Dict[str, float]:
        return {"mean": self.mean, "std": self.std, "n": self.n}

    def __str__(self) -> str:
        return f"{self.mean:.6g} ± {self.std:.3g} (n={self.n})"


def summarize(values: Iterable[float]) -> Summary:
    """Mean and population std over the finite values; ``None`` entries are dropped."""
    v = np.array([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if v.size == 0:
        return Summary(math.nan, math.nan, 0)
    return Summary(float(v.mean()), float(v.std()), int(v.size))


def aggregate(per_seed: List[Mapping[str, object]]) -> Dict[str, Dict[str, float]]:
    """Summarize every numeric (non-bool) metric that appears in all seed reports."""
    if not per_seed:
        return {}
    keys = [k for k, v in per_seed[0].items() if isinstance(v, (int, float)) and not isinstance(v, bool)]
    out = {}
    for k in keys:
        vals = [r.get(k) for r in per_seed]
        if all(isinstance(x, (int, float)) or x is None for x in vals):
            out[k] = summarize(vals).as_dict()
    return out
