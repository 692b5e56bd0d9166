"""Comparison methods built on utilitarian CE-Q iteration.

RM-p shifts the reward of every undesired state by a negative constant; CM-b
adds the density cap phi'(f) <= b to each stage LP.  Both reuse the DBCPI loop
with the utilitarian stage objective.
"""
from __future__ import annotations

from typing import Iterable, Optional, Union

import numpy as np

from .dbcpi import DbcpiConfig, RunResult, evaluate_policy_exact, policy_iteration
from .game import DensityObjective, MarkovGame, RewardMixture
from .stage import UTILITARIAN, ZERO, StageSolveOptions, stage_regret


def _state_mask(game: MarkovGame, s_star) -> np.ndarray:
    """Boolean mask from a collection of state labels or a per-state weight vector."""
    if isinstance(s_star, np.ndarray) and s_star.shape == (game.num_states,) and s_star.dtype != object:
        return s_star.astype(float) != 0.0
    mask = np.zeros(game.num_states, dtype=bool)
    for s in s_star:
        mask[game.state_index(s)] = True
    return mask


def reward_modified_game(game: MarkovGame, s_star: Union[Iterable, np.ndarray], p: float) -> MarkovGame:
    """Copy of ``game`` with ``p`` added to every agent's reward in the states ``s_star``."""
    if not p < 0:
        raise ValueError(f"reward shift must be negative, got {p}")
    mask = _state_mask(game, s_star)
    shift = np.where(mask, p, 0.0)[None, :, None]
    sampler = game.reward_sampler
    if sampler is not None:
        sampler = RewardMixture(sampler.probs, sampler.tables + shift[None])
    return game.with_rewards(game.rewards + shift, sampler)


def run_ce_q(game: MarkovGame, cfg: Optional[DbcpiConfig] = None,
             cap: Optional[tuple] = None, error_objective: Optional[DensityObjective] = None,
             objective: str = UTILITARIAN) -> RunResult:
    """Utilitarian CE-Q; with ``cap = (DensityObjective, b)`` this is CM-b.

    ``error_objective`` only feeds the reported Error (defaults to the cap's
    objective).  ``objective="zero"`` drops the utilitarian selection and
    returns whichever feasible CE the simplex finds first.
    """
    if objective not in (UTILITARIAN, ZERO):
        raise ValueError(f"objective must be {UTILITARIAN!r} or {ZERO!r}")
    cfg = cfg or DbcpiConfig()
    if error_objective is None:
        if cap is None:
            raise ValueError("need an error objective when no cap is given")
        error_objective = cap[0]
    opts = StageSolveOptions(objective=objective, density_cap=cap)
    return policy_iteration(game, opts, error_objective, cfg)


def run_reward_modified(game: MarkovGame, s_star, p: float, error_objective: DensityObjective,
                        cfg: Optional[DbcpiConfig] = None) -> RunResult:
    """RM-p: CE-Q on the shifted game, with regret also measured on the original game.

    ``max_reg`` is against the modified game's Q; ``max_reg_original`` re-evaluates
    the final policy on the original rewards.
    """
    cfg = cfg or DbcpiConfig()
    modified = reward_modified_game(game, s_star, p)
    result = run_ce_q(modified, cfg, error_objective=error_objective)
    q_orig = evaluate_policy_exact(game, result.policy)
    result.max_reg_original = stage_regret(game, result.occupancy, q_orig)[0]
    return result
