"""Shielded policy-gradient learning."""

from .policy import GaussianPolicy
from .reinforce import Rollout, Shield, TrainConfig, estimate_gradient, rollout, sgd_update, train
from .tabular import unbiasedness_check

__all__ = [
    "GaussianPolicy",
    "Rollout",
    "Shield",
    "TrainConfig",
    "estimate_gradient",
    "rollout",
    "sgd_update",
    "train",
    "unbiasedness_check",
]
