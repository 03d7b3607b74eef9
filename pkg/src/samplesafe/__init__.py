"""Sample-based safety filtering for control-affine systems with uncertain actuation.

The filter keeps a barrier function non-negative using only the current state,
the previous sample and the action held in between, given the orthogonal
factors of the actuation matrix and bounds on its singular values.
"""

__version__ = "0.1.0"

from .core import BarrierFunction, ConfigError, InformationWindow, SafeSubset, grad_check
from .dynamics import AffineSystem, IntegratorConfig, SimulationFault, Trajectory, simulate
from .filter import CorrectionDiagnostics, FilterConfig, FilterError, SafetyFilter, filter_step
from .uncertainty import SvdUncertaintyModel, TrueActuation

__all__ = [
    "AffineSystem",
    "BarrierFunction",
    "ConfigError",
    "CorrectionDiagnostics",
    "FilterConfig",
    "FilterError",
    "InformationWindow",
    "IntegratorConfig",
    "SafeSubset",
    "SafetyFilter",
    "SimulationFault",
    "SvdUncertaintyModel",
    "Trajectory",
    "TrueActuation",
    "filter_step",
    "grad_check",
    "simulate",
]
