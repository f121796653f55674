"""Continuous-state polynomial branching processes.

Generator ``x^theta [ -a f + (c f'' - b f') + int (f(x+z) - f(x) - z f'(x) 1{z<=1}) m(dz) ]``:
the branching mechanism, hitting-time integrals, path simulation, the
discrete-state approximating chains and Monte Carlo cross-checks.
"""
from ._backend import backend_name
from .analytics import (
    ClassificationReport,
    classify,
    hit_prob,
    mean_absorption_time,
    mean_explosion_time,
    mean_extinction_time,
    mean_hit_from_infinity,
    mean_hit_time,
    mean_two_sided,
)
from .mechanism import (
    LevyMeasureSpec,
    Mechanism,
    StandingAssumptionError,
    load_mechanism,
    psi,
    psi_prime,
    root_q,
)
from .quadrature import IntegrandKind, QuadratureResult, integrate

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "backend_name",
    "ClassificationReport",
    "IntegrandKind",
    "LevyMeasureSpec",
    "Mechanism",
    "QuadratureResult",
    "StandingAssumptionError",
    "classify",
    "hit_prob",
    "integrate",
    "load_mechanism",
    "mean_absorption_time",
    "mean_explosion_time",
    "mean_extinction_time",
    "mean_hit_from_infinity",
    "mean_hit_time",
    "mean_two_sided",
    "psi",
    "psi_prime",
    "root_q",
]
