"""Density-based correlated policy iteration.

Each iteration solves the stage LP for the current Q, turns the occupancy into
a joint policy, and re-evaluates Q under that policy (exactly, or with the
sampled TD(0) loop).
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .game import (
    DensityObjective,
    MarkovGame,
    bellman_flow_error,
    density_error,
)
from .stage import InfeasibleStage, StageSolveOptions, solve_stage_game, stage_regret

EXACT = "exact"
SAMPLED = "sampled"


@dataclass
class DbcpiConfig:
    iterations: int = 250
    eval_mode: str = EXACT
    alpha_start: float = 0.3
    alpha_end: float = 0.001
    # None: decay so that alpha reaches alpha_end at inner_max_steps
    alpha_decay: Optional[float] = None
    inner_convergence_epsilon: float = 1e-4
    inner_window: int = 500
    inner_max_steps: int = 200_000
    seed: int = 0

    def __post_init__(self):
        if self.eval_mode not in (EXACT, SAMPLED):
            raise ValueError(f"eval_mode must be {EXACT!r} or {SAMPLED!r}")
        if not 0.0 <= self.alpha_end <= self.alpha_start < 1.0:
            raise ValueError("need 0 <= alpha_end <= alpha_start < 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")

    @property
    def decay(self) -> float:
        if self.alpha_decay is not None:
            return self.alpha_decay
        if self.alpha_end == 0.0 or self.alpha_start == 0.0:
            return 1.0
        return (self.alpha_end / self.alpha_start) ** (1.0 / self.inner_max_steps)


@dataclass
class RunResult:
    policy: np.ndarray
    occupancy: np.ndarray
    q: np.ndarray
    max_reg: float
    max_bf: float
    error: float
    trace: list
    runtime_s: float
    config: dict
    stage_max_regret: list = field(default_factory=list)
    stage_max_bf: list = field(default_factory=list)
    policy_change: list = field(default_factory=list)
    global_optimum: bool = False
    max_reg_original: Optional[float] = None
    td_converged: Optional[list] = None

    @property
    def converged_at(self) -> int:
        """First iteration after which the policy never changed again (1-based)."""
        last = 0
        for t, d in enumerate(self.policy_change):
            if d > 1e-9:
                last = t
        return last + 1


def evaluate_policy_exact(game: MarkovGame, policy: np.ndarray) -> np.ndarray:
    """Q^pi for every agent by a direct linear solve on expected rewards."""
    S, J, N = game.num_states, game.num_joint, game.num_agents
    policy = np.asarray(policy, dtype=float)
    # M[(s,a), (s2,a2)] = P(s2 | s, a) * pi(s2, a2)
    M = (game.transition[:, :, :, None] * policy[None, None, :, :]).reshape(S * J, S * J)
    rhs = game.rewards.reshape(N, S * J).T
    q = np.linalg.solve(np.eye(S * J) - game.discount * M, rhs)
    return q.T.reshape(N, S, J)


def evaluate_policy_td(game: MarkovGame, policy: np.ndarray, q_init: np.ndarray,
                       cfg: DbcpiConfig, seed: int = 0):
    """Sampled TD(0) evaluation with cyclic exploring starts.

    Every step starts from the next (state, joint action) pair in a fixed
    cycle, samples the reward and next state, and applies
    Q <- (1 - alpha) Q + alpha (r + gamma V(s')).  Stops once max |dQ| stays
    below the epsilon for a full window, or at ``cfg.inner_max_steps``.

    Returns ``(q, converged)``.
    """
    rng = np.random.default_rng(seed)
    S, J, N = game.num_states, game.num_joint, game.num_agents
    n_pairs = S * J
    gamma = game.discount
    pi = np.asarray(policy, dtype=float)
    q = np.array(q_init, dtype=float).reshape(N, n_pairs)
    v = np.einsum("sa,isa->is", pi, q.reshape(N, S, J))
    pi_flat = pi.reshape(n_pairs).tolist()
    pair_state = np.repeat(np.arange(S), J)
    pair_action = np.tile(np.arange(J), S)
    cdf = np.cumsum(game.transition.reshape(n_pairs, S), axis=1)
    cdf[:, -1] = 1.0
    sampler = game.reward_sampler
    mean_r = game.rewards.reshape(N, n_pairs)

    qs = [q[i].tolist() for i in range(N)]
    vs = [v[i].tolist() for i in range(N)]
    alpha, decay, alpha_end = cfg.alpha_start, cfg.decay, cfg.alpha_end
    eps, window = cfg.inner_convergence_epsilon, cfg.inner_window
    quiet = 0
    converged = False
    step = 0
    chunk = max(n_pairs, 4096 // n_pairs * n_pairs)
    while step < cfg.inner_max_steps and not converged:
        size = min(chunk, cfg.inner_max_steps - step)
        pairs = (np.arange(step, step + size) % n_pairs)
        u = rng.random(size)
        nxt = (cdf[pairs] < u[:, None]).sum(axis=1)
        if sampler is not None:
            outcome = rng.choice(len(sampler.probs), size=size, p=sampler.probs)
            rew = sampler.tables[outcome, :, pair_state[pairs], pair_action[pairs]]
        else:
            rew = mean_r[:, pairs].T
        rew = rew.tolist()
        pairs_l, nxt_l, ps_l = pairs.tolist(), nxt.tolist(), pair_state[pairs].tolist()
        for k in range(size):
            p, s2, s = pairs_l[k], nxt_l[k], ps_l[k]
            r = rew[k]
            biggest = 0.0
            for i in range(N):
                qi = qs[i]
                delta = alpha * (r[i] + gamma * vs[i][s2] - qi[p])
                qi[p] += delta
                vs[i][s] += pi_flat[p] * delta
                if abs(delta) > biggest:
                    biggest = abs(delta)
            alpha = max(alpha_end, alpha * decay)
            quiet = quiet + 1 if biggest < eps else 0
            if quiet >= window:
                converged = True
                break
        step += size
    return np.array(qs).reshape(N, S, J), converged


def check_global_optimum(game: MarkovGame, policy: np.ndarray, q: np.ndarray, tol: float = 1e-7):
    """Whether E_{a~pi(s)} Q_i(s, a) attains max_a Q_i(s, a) for every agent and state.

    Returns ``(holds, slack)`` with ``slack[i, s] = E_pi Q_i(s, .) - max_a Q_i(s, a)``.
    """
    expected = np.einsum("sa,isa->is", np.asarray(policy, dtype=float), q)
    slack = expected - q.max(axis=2)
    return bool(np.all(slack >= -tol)), slack


def policy_iteration(game: MarkovGame, opts: StageSolveOptions, error_objective: DensityObjective,
                     cfg: DbcpiConfig, eval_game: MarkovGame | None = None) -> RunResult:
    """Shared outer loop for DBCPI and the CE-Q baselines.

    ``eval_game`` (default ``game``) supplies rewards for evaluation; stage
    LPs always use ``game``'s dynamics.
    """
    eval_game = game if eval_game is None else eval_game
    t0 = time.perf_counter()
    S, J, N = game.num_states, game.num_joint, game.num_agents
    q = np.zeros((N, S, J))
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.iterations)
    trace, stage_reg, stage_bf, changes, td_flags = [], [], [], [], []
    prev_pi = None
    f = pi = None
    for it in range(cfg.iterations):
        try:
            f, pi, diag = solve_stage_game(game, q, opts)
        except InfeasibleStage as exc:
            raise InfeasibleStage(str(exc), iteration=it + 1) from exc
        stage_reg.append(diag.max_regret)
        stage_bf.append(diag.max_bf_error)
        changes.append(np.inf if prev_pi is None else float(np.max(np.abs(pi - prev_pi))))
        prev_pi = pi
        if cfg.eval_mode == EXACT:
            q = evaluate_policy_exact(eval_game, pi)
        else:
            q, ok = evaluate_policy_td(eval_game, pi, q, cfg, seed=int(seeds[it].generate_state(1)[0]))
            td_flags.append(ok)
        trace.append(density_error(f, error_objective, game.discount))

    max_reg, _ = stage_regret(game, f, q)
    max_bf = float(np.max(np.abs(bellman_flow_error(game, f))))
    holds, _ = check_global_optimum(game, pi, q)
    return RunResult(
        policy=pi,
        occupancy=f,
        q=q,
        max_reg=max_reg,
        max_bf=max_bf,
        error=density_error(f, error_objective, game.discount),
        trace=trace,
        runtime_s=time.perf_counter() - t0,
        config=asdict(cfg),
        stage_max_regret=stage_reg,
        stage_max_bf=stage_bf,
        policy_change=changes,
        global_optimum=holds,
        td_converged=td_flags or None,
    )


def dbcpi_run(game: MarkovGame, objective: DensityObjective, cfg: DbcpiConfig | None = None) -> RunResult:
    """Run DBCPI: every stage solve selects the CE minimising ``objective``."""
    cfg = cfg or DbcpiConfig()
    return policy_iteration(game, StageSolveOptions(objective=objective), objective, cfg)


def recompute_metrics(game: MarkovGame, result: RunResult, objective: DensityObjective):
    """(max_reg, max_bf, error) from the stored occupancy and final Q."""
    f = result.occupancy
    return (
        stage_regret(game, f, result.q)[0],
        float(np.max(np.abs(bellman_flow_error(game, f)))),
        density_error(f, objective, game.discount),
    )
