"""Stage-game LP: the density-selected correlated equilibrium of a frozen Q.

Variables are the occupancy entries f(s, a) (flattened row-major) followed by
at most one epigraph variable for absolute-value objectives.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .game import (
    DensityObjective,
    MarkovGame,
    bellman_flow_error,
    policy_from_occupancy,
)
from .lp import LinearProgram, LpStatus, Relation, Sense, solve_lp

COEFF_CLEAN = 1e-12
UTILITARIAN = "utilitarian"
ZERO = "zero"


class StageSolveError(RuntimeError):
    pass


class InfeasibleStage(StageSolveError):
    def __init__(self, message, iteration=None):
        super().__init__(message if iteration is None else f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass(frozen=True)
class StageSolveOptions:
    """``objective`` is a DensityObjective, ``"utilitarian"`` or ``"zero"``.

    ``density_cap`` = (objective, b) adds the constraint phi'(f) <= b.
    """

    objective: Union[DensityObjective, str] = UTILITARIAN
    density_cap: Optional[tuple] = None
    feasibility_tolerance: float = 1e-7

    def __post_init__(self):
        if isinstance(self.objective, str) and self.objective not in (UTILITARIAN, ZERO):
            raise ValueError(f"unknown objective mode {self.objective!r}")
        if self.density_cap is not None and self.density_cap[1] < 0:
            raise ValueError("density cap bound must be >= 0")


@dataclass
class StageDiagnostics:
    status: LpStatus
    objective_value: float
    max_regret: float
    max_bf_error: float
    lp_iterations: int


def deviation_table(game: MarkovGame, agent: int) -> np.ndarray:
    """dev[a, k] = joint index obtained from ``a`` when ``agent`` plays ``k`` instead."""
    ja = game.joint_actions
    out = np.empty((game.num_joint, game.action_counts[agent]), dtype=int)
    for k in range(game.action_counts[agent]):
        alt = ja.copy()
        alt[:, agent] = k
        out[:, k] = np.ravel_multi_index(alt.T, game.action_counts)
    return out


def _density_rows(game: MarkovGame, obj: DensityObjective) -> tuple[np.ndarray, float]:
    """Coefficients over f of the signed linear functional of ``obj`` and its constant."""
    w, c = obj.linear_part(game.discount)
    return np.repeat(w, game.num_joint), c


def build_stage_lp(game: MarkovGame, q: np.ndarray, opts: StageSolveOptions) -> LinearProgram:
    S, J, N = game.num_states, game.num_joint, game.num_agents
    q = np.asarray(q, dtype=float)
    if q.shape != (N, S, J):
        raise ValueError(f"Q shape {q.shape} != {(N, S, J)}")
    absolute = isinstance(opts.objective, DensityObjective) and opts.objective.is_absolute
    n_f = S * J
    n = n_f + (1 if absolute else 0)

    names = [f"f_{s}_{a}" for s in range(S) for a in range(J)]
    if absolute:
        names.append("t")
    lp = LinearProgram(n, np.zeros(n), Sense.MINIMIZE, var_names=names)
    ja = game.joint_actions

    # Differences below this are evaluation noise; left in, row scaling would
    # blow them up into spurious constraints.
    noise = COEFF_CLEAN * max(1.0, float(np.max(np.abs(q), initial=0.0)))

    # correlated-equilibrium regret rows
    for i in range(N):
        dev = deviation_table(game, i)
        for s in range(S):
            for ai in range(game.action_counts[i]):
                rec = np.flatnonzero(ja[:, i] == ai)
                for alt in range(game.action_counts[i]):
                    row = np.zeros(n)
                    diff = q[i, s, dev[rec, alt]] - q[i, s, rec]
                    diff[np.abs(diff) <= noise] = 0.0
                    row[s * J + rec] = diff
                    lp.add_constraint(row, Relation.LE, 0.0, f"reg_{i}_{s}_{ai}_{alt}")

    # Bellman flow equalities
    inflow = game.transition.reshape(n_f, S)
    for s in range(S):
        row = np.zeros(n)
        row[s * J:(s + 1) * J] += 1.0
        row[:n_f] -= game.discount * inflow[:, s]
        lp.add_constraint(row, Relation.EQ, float(game.initial_dist[s]), f"bf_{s}")

    obj = opts.objective
    if isinstance(obj, DensityObjective):
        w, c = _density_rows(game, obj)
        if absolute:
            lp.objective[n_f] = 1.0
            row = np.zeros(n)
            row[n_f] = 1.0
            row[:n_f] = -w
            lp.add_constraint(row, Relation.GE, -c, "epi_pos")
            row = np.zeros(n)
            row[n_f] = 1.0
            row[:n_f] = w
            lp.add_constraint(row, Relation.GE, c, "epi_neg")
        else:
            lp.objective[:n_f] = w
    elif obj == UTILITARIAN:
        lp.sense = Sense.MAXIMIZE
        lp.objective[:n_f] = q.sum(axis=0).reshape(n_f)

    if opts.density_cap is not None:
        cap_obj, bound = opts.density_cap
        w, c = _density_rows(game, cap_obj)
        row = np.zeros(n)
        row[:n_f] = w
        if cap_obj.is_absolute:
            lp.add_constraint(row, Relation.LE, bound + c, "cap_pos")
            lp.add_constraint(-row, Relation.LE, bound - c, "cap_neg")
        else:
            lp.add_constraint(row, Relation.LE, bound, "cap")
    return lp


def stage_regret(game: MarkovGame, f: np.ndarray, q: np.ndarray):
    """Occupancy-weighted regrets of every (agent, state, recommended, deviation).

    Returns ``(max_regret, per_agent)`` where ``per_agent[i]`` has shape
    ``(S, A_i, A_i)`` indexed by (state, recommended action, deviation action).
    """
    S = game.num_states
    f = np.asarray(f, dtype=float).reshape((S,) + game.action_counts)
    q = np.asarray(q, dtype=float)
    per_agent = []
    for i in range(game.num_agents):
        qi = q[i].reshape((S,) + game.action_counts)
        Fi = np.moveaxis(f, i + 1, 1).reshape(S, game.action_counts[i], -1)
        Qi = np.moveaxis(qi, i + 1, 1).reshape(S, game.action_counts[i], -1)
        gain = np.einsum("sar,sbr->sab", Fi, Qi)
        base = np.einsum("sar,sar->sa", Fi, Qi)
        per_agent.append(gain - base[:, :, None])
    max_regret = max(float(r.max()) for r in per_agent)
    return max_regret, per_agent


def solve_stage_game(game: MarkovGame, q: np.ndarray, opts: StageSolveOptions):
    """Solve the stage LP; returns (occupancy, policy, diagnostics)."""
    lp = build_stage_lp(game, q, opts)
    sol = solve_lp(lp)
    if sol.status is LpStatus.INFEASIBLE:
        raise InfeasibleStage(f"stage LP infeasible ({sol.message})")
    if not sol.optimal:
        raise StageSolveError(f"stage LP {sol.status.value}: {sol.message}")
    S, J = game.num_states, game.num_joint
    f = sol.values[: S * J].reshape(S, J).copy()
    f[f < 0] = 0.0
    pi = policy_from_occupancy(f)
    max_reg, _ = stage_regret(game, f, q)
    bf = float(np.max(np.abs(bellman_flow_error(game, f))))
    diag = StageDiagnostics(sol.status, sol.objective_value, max_reg, bf, sol.iterations)
    return f, pi, diag
