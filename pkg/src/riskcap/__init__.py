"""Risk-averse two-stage and multistage capacity planning on scenario trees."""
from .approx import ApproxConfig, ApproxResult, approx_multistage, approx_twostage, ratio_bound
from .bounds import (BoundsReport, Recommendation, compute_bounds, recommend, tightness_metrics,
                     vms_lower_bound, vms_lower_bound_lp, vms_upper_bound)
from .errors import DomainError, InfeasiblePolicyError, SolverError, ValidationError
from .instance import (GenConfig, Instance, Pattern, RiskProfile, TreeKind, example1_instance,
                       generate_synthetic, read_instance, write_instance)
from .models import (Policy, Solution, build_deterministic, build_multistage, build_twostage,
                     evaluate_ecrm, solve_model)
from .scenario_tree import ScenarioTree, full_tree
from .substructure import Mode, SubstructureSolution, sp_rms, sp_rts

__all__ = [
    "ApproxConfig", "ApproxResult", "BoundsReport", "DomainError", "GenConfig", "InfeasiblePolicyError",
    "Instance", "Mode", "Pattern", "Policy", "Recommendation", "RiskProfile", "ScenarioTree", "Solution",
    "SolverError", "SubstructureSolution", "TreeKind", "ValidationError", "approx_multistage",
    "approx_twostage", "build_deterministic", "build_multistage", "build_twostage", "compute_bounds",
    "evaluate_ecrm", "example1_instance", "full_tree", "generate_synthetic", "ratio_bound",
    "read_instance", "recommend", "solve_model", "sp_rms", "sp_rts", "tightness_metrics",
    "vms_lower_bound", "vms_lower_bound_lp", "vms_upper_bound", "write_instance",
]
