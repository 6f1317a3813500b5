"""Global optimal design of gravity-fed water distribution networks."""

from .bnb import SolverConfig, SolveResult, enumerate_designs, initial_solution, repair_heuristic, solve_global
from .formulation import build_master, lift, nogood_cut, oa_headloss_cut, strong_duality_cut
from .hydraulics import (
    check_design_feasibility,
    evaluate_objectives,
    head_loss,
    lagrangian_value,
    solve_fixed_design,
)
from .lp import LinearProgram, solve_lp
from .network import DesignVector, Network, derive_bounds, parse_network

__version__ = "0.1.0"

__all__ = [
    "DesignVector",
    "LinearProgram",
    "Network",
    "SolveResult",
    "SolverConfig",
    "build_master",
    "check_design_feasibility",
    "derive_bounds",
    "enumerate_designs",
    "evaluate_objectives",
    "head_loss",
    "initial_solution",
    "lagrangian_value",
    "lift",
    "nogood_cut",
    "oa_headloss_cut",
    "parse_network",
    "repair_heuristic",
    "solve_fixed_design",
    "solve_global",
    "solve_lp",
    "strong_duality_cut",
]
