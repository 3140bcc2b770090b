"""Caputo fractional optimal control: motions, sensitivities, value envelopes and feedback."""
from .controls import ControlSet, PiecewiseControl, RelaxedControl
from .core import GridFn, Position, ProblemConfig, dist, extension_a, extension_xf
from .dynamics import CostFn, Dynamics, Motion, SolverError, example_problem, solve_motion, solve_motion_relaxed
from .envelope import CandidateFamily, active_set, dderiv_value, hjb_residual, value_bruteforce, value_closed_form_example
from .feedback import Partition, SimReport, Strategy, run_feedback, sweep_partitions
from .sensitivity import psi, psi_derivatives, solve_sensitivity
from .special import gamma, mittag_leffler

__version__ = "0.1.0"

__all__ = [
    "CandidateFamily", "ControlSet", "CostFn", "Dynamics", "GridFn", "Motion", "Partition", "PiecewiseControl",
    "Position", "ProblemConfig", "RelaxedControl", "SimReport", "SolverError", "Strategy", "active_set",
    "dderiv_value", "dist", "example_problem", "extension_a", "extension_xf", "gamma", "hjb_residual",
    "mittag_leffler", "psi", "psi_derivatives", "run_feedback", "solve_motion", "solve_motion_relaxed",
    "solve_sensitivity", "sweep_partitions", "value_bruteforce", "value_closed_form_example",
]
