"""Affine value-function dispatch for connected hydro reservoirs.

Simulates seasonal ARMA price/inflow scenarios, trains per-stage affine
approximations of the value of stored water by smoothed finite-difference
updates on one-hour LPs, evaluates the resulting policy online, and
benchmarks it against perfect-information LP solutions.
"""

from .lp import LpError, LpInternalError, LpProblem, LpSolution, solve
from .scenarios import (ArmaSpec, NoiseModel, ScenarioError, ScenarioSet,
                        expand_polynomial, forecast_one_step, implied_innovations,
                        load_scenarios, save_scenarios, shipped_inflow_specs,
                        shipped_price_spec, simulate, specs_for_system,
                        terminal_price_forecasts)
from .system import (ReservoirSpec, ReservoirSystem, StageDecision,
                     StageExogenous, SystemConfigError, TunnelSpec,
                     advance_level, build_full_horizon_lp, build_stage_lp,
                     feasible, load_shipped_system, load_system,
                     solve_full_horizon, stage_profit, stage_solution_decision,
                     stage_solution_level)
from .training import (EvaluationResult, TrainConfig, TrainTrace, TrainingError,
                       ValueApproximation, evaluate_online, train_offline)
from .analysis import (RunReport, compare_cases, convergence_stats,
                       deterministic_crosscheck, emit_report, emit_trace,
                       emit_trajectories, run_case, wait_and_see)

__version__ = "1.0.0"
