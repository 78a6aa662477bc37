"""Learned neighborhood selection for large neighborhood search on binary MIPs."""
from .bnb import MipStatus, SolveBudget, solve_mip
from .lp import LpStatus, solve_lp
from .mip import Constraint, MipInstance, Variable, check_feasibility, load_instance, save_instance

__version__ = "0.1.0"

__all__ = [
    "Constraint",
    "LpStatus",
    "MipInstance",
    "MipStatus",
    "SolveBudget",
    "Variable",
    "check_feasibility",
    "load_instance",
    "save_instance",
    "solve_lp",
    "solve_mip",
]
