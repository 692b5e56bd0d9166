"""Density-based correlated equilibria (DBCE) for tabular Markov games."""
from .baselines import reward_modified_game, run_ce_q, run_reward_modified
from .dbcpi import DbcpiConfig, RunResult, dbcpi_run, evaluate_policy_exact, evaluate_policy_td
from .environments import build_collect_explore, build_fair_gamble, build_game, build_hunters, requirement_preset
from .game import (
    DensityKind,
    DensityObjective,
    MarkovGame,
    RequirementKind,
    RequirementSpec,
    bellman_flow_error,
    density_error,
    exact_occupancy,
    policy_from_occupancy,
    requirement_score,
    rollout,
    validate_game,
)
from .lp import LinearProgram, LpStatus, solve_lp
from .stage import InfeasibleStage, StageSolveOptions, build_stage_lp, solve_stage_game, stage_regret

__version__ = "0.1.0"
