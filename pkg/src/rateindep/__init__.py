"""Incremental minimization schemes and energy-balance verification for
finite-dimensional rate-independent systems."""

from .dissipation import (IntervalDissipation, JumpCost, delta_new, diss_new,
                          diss_psi, optimize_transition, straight_path,
                          transition_cost)
from .errors import (ConfigError, ConvergenceError, ModelError, NumericError,
                     StabilityError)
from .minimize import (MinimizeOptions, descend_projected, minimize_global,
                       minimize_in_ball)
from .model import (BVTrajectory, DiscreteTrajectory, DissipationSpec,
                    EnergyModel, JumpRecord, NeighborhoodNorm, TransitionPath,
                    dual_gap_weighted_l1, estimate_lambda, example2_reference,
                    get_model, make_double_well_2d, make_example2,
                    make_generic_psi, make_l2_norm, make_lp_norm,
                    make_poly1d, make_random_double_well, make_scaled_l2,
                    make_weighted_l1)
from .schemes import (LimitDiagnostics, SchemeConfig, refine_limit,
                      solve_efendiev_mielke, solve_energetic,
                      solve_eps_neighborhood, solve_viscous)
from .serialize import (read_bv, read_trajectory, write_bv, write_json,
                        write_trajectory)
from .verify import (BalanceReport, DiscreteBoundsReport, JumpCheck, KKTReport,
                     StabilityReport, check_discrete_bounds, check_eps_stability,
                     check_global_stability, check_integral_bound,
                     check_kkt_identity, check_new_balance,
                     check_weak_local_stability)

__version__ = "0.1.0"

__all__ = [
    "BVTrajectory", "BalanceReport", "ConfigError", "ConvergenceError",
    "DiscreteBoundsReport", "DiscreteTrajectory", "DissipationSpec",
    "EnergyModel", "IntervalDissipation", "JumpCheck", "JumpCost",
    "JumpRecord", "KKTReport", "LimitDiagnostics", "MinimizeOptions",
    "ModelError", "NeighborhoodNorm", "NumericError", "SchemeConfig",
    "StabilityError", "StabilityReport", "TransitionPath",
    "check_discrete_bounds", "check_eps_stability", "check_global_stability",
    "check_integral_bound", "check_kkt_identity", "check_new_balance",
    "check_weak_local_stability", "delta_new", "descend_projected",
    "diss_new", "diss_psi", "dual_gap_weighted_l1", "estimate_lambda",
    "example2_reference", "get_model", "make_double_well_2d", "make_example2",
    "make_generic_psi", "make_l2_norm", "make_lp_norm", "make_poly1d",
    "make_random_double_well", "make_scaled_l2", "make_weighted_l1",
    "minimize_global", "minimize_in_ball", "optimize_transition", "read_bv",
    "read_trajectory", "refine_limit", "solve_efendiev_mielke",
    "solve_energetic", "solve_eps_neighborhood", "solve_viscous",
    "straight_path", "transition_cost", "write_bv", "write_json",
    "write_trajectory",
]
