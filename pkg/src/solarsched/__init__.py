"""Minimum recharge rate scheduling for energy-harvesting processors.

A processor with discrete speed/power pairs must finish deadline-constrained
jobs while its battery, filled at a constant recharge rate, never runs dry.
This package computes the least such rate three independent ways: a
homotopy-style combinatorial solver that lowers the rate while repairing the
schedule's structure (:mod:`solarsched.engine`), an exact-rational LP over
discretized time (:mod:`solarsched.oracle`), and a primal-dual certificate
whose objective must reproduce the claimed optimum exactly
(:mod:`solarsched.certificate`).
"""

from .instance import Instance, Job, SpeedProfile, envelope_power, interpolate, validate
from .schedule import Schedule, Segment, energy_trace, min_feasible_rate
from .engine import SolveResult, solve
from .oracle import discretize, lp_min_rate, refine_until_stable

__all__ = [
    "Instance",
    "Job",
    "SpeedProfile",
    "Schedule",
    "Segment",
    "SolveResult",
    "discretize",
    "energy_trace",
    "envelope_power",
    "interpolate",
    "lp_min_rate",
    "min_feasible_rate",
    "refine_until_stable",
    "solve",
    "validate",
]
