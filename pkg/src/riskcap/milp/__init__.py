from .model import EQ, GE, LE, Milp, SolveResult, Status, ToleranceConfig
from .simplex import solve_lp
from .bnb import solve_milp

__all__ = ["EQ", "GE", "LE", "Milp", "SolveResult", "Status", "ToleranceConfig", "solve_lp", "solve_milp"]
