"""Tabular N-player Markov games, occupancy measures and trajectory scoring.

Joint actions are flattened with ``np.ravel_multi_index`` over the per-agent
action counts (agent 0 varies slowest).  Policies and occupancy measures are
plain ``(S, J)`` arrays; Q tables are ``(N, S, J)`` arrays.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

PROB_TOL = 1e-9
BF_TOL = 1e-8
ZERO_MASS = 1e-9


@dataclass(frozen=True)
class RewardMixture:
    """Stochastic rewards: each step one full reward table is drawn.

    ``tables[k]`` has shape ``(N, S, J)`` and is used with probability
    ``probs[k]``.  The expectation is the probability-weighted sum.
    """

    probs: np.ndarray
    tables: np.ndarray

    def expectation(self) -> np.ndarray:
        return np.tensordot(self.probs, self.tables, axes=1)

    def sample(self, rng: np.random.Generator, s: int, a: int) -> np.ndarray:
        k = rng.choice(len(self.probs), p=self.probs)
        return self.tables[k, :, s, a]

    def to_json(self) -> dict:
        return {
            "type": "mixture",
            "probs": self.probs.tolist(),
            "tables": self.tables.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "RewardMixture":
        if d.get("type", "mixture") != "mixture":
            raise ValueError(f"unknown stochastic reward type {d.get('type')!r}")
        return cls(np.asarray(d["probs"], dtype=float), np.asarray(d["tables"], dtype=float))


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MarkovGame:
    """An N-agent Markov game with a finite state and joint-action space.

    ``transition[s, a, s2]`` is P(s2 | s, a) and ``rewards[i, s, a]`` the
    expected reward of agent ``i``.  When ``reward_sampler`` is given, sampled
    evaluation draws from it and ``rewards`` must equal its expectation.
    """

    states: tuple
    action_counts: tuple
    transition: np.ndarray
    rewards: np.ndarray
    initial_dist: np.ndarray
    discount: float = 0.99
    reward_sampler: Optional[RewardMixture] = None
    action_names: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "action_counts", tuple(int(k) for k in self.action_counts))
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "rewards", _frozen(self.rewards))
        object.__setattr__(self, "initial_dist", _frozen(self.initial_dist))
        object.__setattr__(self, "discount", float(self.discount))
        if self.action_names is not None:
            object.__setattr__(self, "action_names", tuple(tuple(a) for a in self.action_names))

    @property
    def num_agents(self) -> int:
        return len(self.action_counts)

    @property
    def num_states(self) -> int:
        return len(self.states)

    @property
    def num_joint(self) -> int:
        return int(np.prod(self.action_counts))

    @property
    def joint_actions(self) -> np.ndarray:
        """``(J, N)`` array of per-agent actions for each joint index."""
        return np.array(np.unravel_index(np.arange(self.num_joint), self.action_counts)).T

    def joint_index(self, actions: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(actions), self.action_counts))

    def state_index(self, state) -> int:
        return self.states.index(state)

    def weights(self, states) -> np.ndarray:
        """0/1 weight vector of a state subset."""
        w = np.zeros(self.num_states)
        for s in states:
            w[self.state_index(s)] = 1.0
        return w

    def with_rewards(self, rewards: np.ndarray, reward_sampler=None) -> "MarkovGame":
        return MarkovGame(
            self.states, self.action_counts, self.transition, rewards,
            self.initial_dist, self.discount, reward_sampler, self.action_names,
        )


@dataclass
class ValidationReport:
    problems: list = field(default_factory=list)

    def __bool__(self):
        return not self.problems

    @property
    def ok(self) -> bool:
        return not self.problems

    def add(self, where: str, message: str):
        self.problems.append({"where": where, "message": message})


def validate_game(game: MarkovGame) -> ValidationReport:
    """Check every structural invariant; an empty report means the game is valid."""
    report = ValidationReport()
    S, J, N = game.num_states, game.num_joint, game.num_agents
    if N < 1:
        report.add("agents", "need at least one agent")
    if any(k < 1 for k in game.action_counts):
        report.add("actions", f"action counts must be positive, got {game.action_counts}")
    if game.transition.shape != (S, J, S):
        report.add("transition", f"shape {game.transition.shape} != {(S, J, S)}")
        return report
    if game.rewards.shape != (N, S, J):
        report.add("rewards", f"shape {game.rewards.shape} != {(N, S, J)}")
    elif not np.all(np.isfinite(game.rewards)):
        report.add("rewards", "non-finite expected reward")
    if game.initial_dist.shape != (S,):
        report.add("eta", f"shape {game.initial_dist.shape} != {(S,)}")
    else:
        if np.any(game.initial_dist < 0):
            report.add("eta", "negative probability")
        deficit = 1.0 - game.initial_dist.sum()
        if abs(deficit) > PROB_TOL:
            report.add("eta", f"sums to {game.initial_dist.sum():.12g} (deficit {deficit:.12g})")
    if not 0.0 < game.discount < 1.0:
        report.add("gamma", f"discount {game.discount} not in (0, 1)")

    neg = np.argwhere(game.transition < 0)
    for s, a, s2 in neg:
        report.add(f"P[s={game.states[s]}, a={a}, s'={game.states[s2]}]", "negative probability")
    sums = game.transition.sum(axis=2)
    for s, a in np.argwhere(np.abs(sums - 1.0) > PROB_TOL):
        report.add(
            f"P[s={game.states[s]}, a={a}]",
            f"row sums to {sums[s, a]:.12g} (deficit {1.0 - sums[s, a]:.12g})",
        )

    if game.reward_sampler is not None:
        rs = game.reward_sampler
        if rs.tables.shape[1:] != (N, S, J):
            report.add("stochastic_rewards", f"table shape {rs.tables.shape[1:]} != {(N, S, J)}")
        elif abs(rs.probs.sum() - 1.0) > PROB_TOL or np.any(rs.probs < 0):
            report.add("stochastic_rewards", "outcome probabilities are not a distribution")
        elif game.rewards.shape == (N, S, J) and not np.allclose(rs.expectation(), game.rewards, atol=1e-12):
            report.add("stochastic_rewards", "declared expectation does not match sampler")
    return report


# --------------------------------------------------------------------------
# occupancy / density machinery


def state_transition_matrix(game: MarkovGame, policy: np.ndarray) -> np.ndarray:
    """P_pi[s, s2] = sum_a pi(s, a) P(s2 | s, a)."""
    return np.einsum("sa,sat->st", policy, game.transition)


def state_density(f: np.ndarray) -> np.ndarray:
    return f.sum(axis=1)


def exact_occupancy(game: MarkovGame, policy: np.ndarray) -> np.ndarray:
    """Discounted state/joint-action visitation mass of ``policy``.

    Solves rho = eta + gamma * P_pi^T rho for the state density and spreads it
    over joint actions with the policy.
    """
    policy = np.asarray(policy, dtype=float)
    S = game.num_states
    p_pi = state_transition_matrix(game, policy)
    rho = np.linalg.solve(np.eye(S) - game.discount * p_pi.T, game.initial_dist)
    f = policy * rho[:, None]
    f[f < 0] = 0.0
    residual = np.max(np.abs(bellman_flow_error(game, f)))
    if residual > 1e-6:
        raise RuntimeError(f"occupancy solve residual {residual:.3g} too large")
    return f


def bellman_flow_error(game: MarkovGame, f: np.ndarray) -> np.ndarray:
    """Per-state Bellman flow residual of a candidate occupancy ``f``."""
    f = np.asarray(f, dtype=float)
    if f.shape != (game.num_states, game.num_joint):
        raise ValueError(f"occupancy shape {f.shape} does not match game")
    inflow = np.einsum("sa,sat->t", f, game.transition)
    return f.sum(axis=1) - game.initial_dist - game.discount * inflow


def policy_from_occupancy(f: np.ndarray) -> np.ndarray:
    """Normalise each state's occupancy row; zero-mass states get a uniform row."""
    f = np.asarray(f, dtype=float)
    if np.any(f < -ZERO_MASS):
        raise ValueError(f"occupancy has negative entry {f.min():.3g}")
    f = np.clip(f, 0.0, None)
    mass = f.sum(axis=1, keepdims=True)
    uniform = np.full_like(f, 1.0 / f.shape[1])
    with np.errstate(invalid="ignore", divide="ignore"):
        pi = np.where(mass > ZERO_MASS, f / np.where(mass > ZERO_MASS, mass, 1.0), uniform)
    return pi


class DensityKind(str, Enum):
    MIN_DENSITY = "min_density"
    FREQUENCY_MATCH = "frequency_match"
    DENSITY_GAP = "density_gap"


@dataclass(frozen=True)
class DensityObjective:
    """A density error over weighted state sets.

    MinDensity: w1 . rho.  FrequencyMatch: |w1 . rho - c_frac / (1 - gamma)|.
    DensityGap: |w1 . rho - w2 . rho|.
    """

    kind: DensityKind
    weights_1: np.ndarray
    weights_2: Optional[np.ndarray] = None
    target_fraction: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", DensityKind(self.kind))
        w1 = _frozen(self.weights_1)
        w2 = _frozen(np.zeros_like(w1) if self.weights_2 is None else self.weights_2)
        if np.any(w1 < 0) or np.any(w2 < 0):
            raise ValueError("density weights must be nonnegative")
        if w1.shape != w2.shape:
            raise ValueError("weight vectors differ in length")
        if self.kind is not DensityKind.DENSITY_GAP and np.any(w2 != 0):
            raise ValueError(f"{self.kind.value} does not use weights_2")
        if self.kind is DensityKind.FREQUENCY_MATCH:
            if not 0.0 <= self.target_fraction <= 1.0:
                raise ValueError("target_fraction must lie in [0, 1]")
        elif self.target_fraction != 0.0:
            raise ValueError(f"{self.kind.value} does not use target_fraction")
        object.__setattr__(self, "weights_1", w1)
        object.__setattr__(self, "weights_2", w2)
        object.__setattr__(self, "target_fraction", float(self.target_fraction))

    @property
    def is_absolute(self) -> bool:
        return self.kind is not DensityKind.MIN_DENSITY

    def linear_part(self, gamma: float) -> tuple[np.ndarray, float]:
        """(w, c) such that the error is w.rho - c, or |w.rho - c| when absolute."""
        if self.kind is DensityKind.MIN_DENSITY:
            return np.array(self.weights_1), 0.0
        if self.kind is DensityKind.FREQUENCY_MATCH:
            return np.array(self.weights_1), self.target_fraction / (1.0 - gamma)
        return self.weights_1 - self.weights_2, 0.0

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "weights_1": self.weights_1.tolist(),
            "weights_2": self.weights_2.tolist(),
            "target_fraction": self.target_fraction,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DensityObjective":
        return cls(d["kind"], d["weights_1"], d.get("weights_2"), d.get("target_fraction", 0.0))


def density_error(f: np.ndarray, obj: DensityObjective, gamma: float, game: MarkovGame | None = None) -> float:
    """Density error of occupancy ``f``.  Passing ``game`` enables a BF-feasibility warning."""
    f = np.asarray(f, dtype=float)
    if f.ndim != 2 or f.shape[0] != obj.weights_1.shape[0]:
        raise ValueError(f"occupancy shape {f.shape} does not match objective over {obj.weights_1.shape[0]} states")
    if game is not None:
        bf = np.max(np.abs(bellman_flow_error(game, f)))
        if bf > 1e-4:
            warnings.warn(f"occupancy violates Bellman flow by {bf:.3g}; density error is unreliable")
    w, c = obj.linear_part(gamma)
    value = float(w @ state_density(f) - c)
    return abs(value) if obj.is_absolute else value


# --------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    seed: int

    def __len__(self):
        return len(self.states)

    def to_csv(self, path, game: MarkovGame | None = None):
        import csv

        n_agents = self.rewards.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "state", "joint_action"] + [f"reward_{i + 1}" for i in range(n_agents)])
            for t, (s, a, r) in enumerate(zip(self.states, self.actions, self.rewards)):
                state = game.states[s] if game is not None else int(s)
                if game is not None:
                    joint = "-".join(str(x) for x in np.unravel_index(int(a), game.action_counts))
                else:
                    joint = int(a)
                w.writerow([t, state, joint] + [repr(float(x)) for x in r])


def rollout(game: MarkovGame, policy: np.ndarray, steps: int = 250, seed: int = 0) -> Trajectory:
    """Sample ``steps`` (state, joint action, rewards) triples starting from eta."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rng = np.random.default_rng(seed)
    S, J = game.num_states, game.num_joint
    policy = np.asarray(policy, dtype=float)
    states = np.empty(steps, dtype=int)
    actions = np.empty(steps, dtype=int)
    rewards = np.empty((steps, game.num_agents))
    pi_cdf = np.cumsum(policy, axis=1)
    p_cdf = np.cumsum(game.transition, axis=2)
    s = min(int(np.searchsorted(np.cumsum(game.initial_dist), rng.random(), side="right")), S - 1)
    for t in range(steps):
        a = min(int(np.searchsorted(pi_cdf[s], rng.random(), side="right")), J - 1)
        if game.reward_sampler is not None:
            r = game.reward_sampler.sample(rng, s, a)
        else:
            r = game.rewards[:, s, a]
        states[t], actions[t], rewards[t] = s, a, r
        s = min(int(np.searchsorted(p_cdf[s, a], rng.random(), side="right")), S - 1)
    return Trajectory(states, actions, rewards, seed)


class RequirementKind(str, Enum):
    SAFETY = "safety"
    FREQUENCY = "frequency"
    FAIRNESS = "fairness"


@dataclass(frozen=True)
class RequirementSpec:
    """Trajectory-level requirement.  Sets are stored as per-state weights."""

    kind: RequirementKind
    weights_1: np.ndarray
    weights_2: Optional[np.ndarray] = None
    proportion: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", RequirementKind(self.kind))
        object.__setattr__(self, "weights_1", _frozen(self.weights_1))
        if self.weights_2 is not None:
            object.__setattr__(self, "weights_2", _frozen(self.weights_2))
        if not 0.0 <= self.proportion <= 1.0:
            raise ValueError("proportion must lie in [0, 1]")
        if self.kind is RequirementKind.FAIRNESS and self.weights_2 is None:
            raise ValueError("fairness needs a second state set")

    @classmethod
    def from_sets(cls, game: MarkovGame, kind, set_1, set_2=None, proportion=0.0):
        w2 = None if set_2 is None else game.weights(set_2)
        return cls(kind, game.weights(set_1), w2, proportion)


def requirement_score(traj: Trajectory, req: RequirementSpec, upto: int | None = None) -> float:
    """Signed requirement score of a trajectory prefix; 0 is the desired value."""
    states = traj.states if upto is None else traj.states[:upto]
    count_1 = float(req.weights_1[states].sum())
    if req.kind is RequirementKind.SAFETY:
        return count_1
    if req.kind is RequirementKind.FREQUENCY:
        return count_1 / len(states) - req.proportion
    return count_1 - float(req.weights_2[states].sum())


# --------------------------------------------------------------------------
# game-spec JSON


def game_to_json(game: MarkovGame) -> dict:
    if game.action_names is not None:
        actions = [list(a) for a in game.action_names]
    else:
        actions = [list(range(k)) for k in game.action_counts]
    d = {
        "agents": game.num_agents,
        "states": list(game.states),
        "actions": actions,
        "transitions": game.transition.tolist(),
        "rewards": game.rewards.tolist(),
        "eta": game.initial_dist.tolist(),
        "gamma": game.discount,
    }
    if game.reward_sampler is not None:
        d["stochastic_rewards"] = game.reward_sampler.to_json()
    return d


def game_from_json(d: dict) -> MarkovGame:
    actions = d["actions"]
    if len(actions) != d["agents"]:
        raise ValueError(f"{d['agents']} agents but {len(actions)} action lists")
    sampler = None
    if d.get("stochastic_rewards") is not None:
        sampler = RewardMixture.from_json(d["stochastic_rewards"])
    states = [tuple(s) if isinstance(s, list) else s for s in d["states"]]
    return MarkovGame(
        states=states,
        action_counts=[len(a) for a in actions],
        transition=np.asarray(d["transitions"], dtype=float),
        rewards=np.asarray(d["rewards"], dtype=float),
        initial_dist=np.asarray(d["eta"], dtype=float),
        discount=d.get("gamma", 0.99),
        reward_sampler=sampler,
        action_names=actions,
    )


def save_game(game: MarkovGame, path) -> None:
    Path(path).write_text(json.dumps(game_to_json(game)))


def load_game(path) -> MarkovGame:
    return game_from_json(json.loads(Path(path).read_text()))


def random_game(rng: np.random.Generator, num_states: int, action_counts, gamma: float = 0.99,
                full_support_eta: bool = True) -> MarkovGame:
    """Dense random game (Dirichlet rows, uniform rewards in [0, 1])."""
    J = int(np.prod(action_counts))
    P = rng.dirichlet(np.ones(num_states), size=(num_states, J))
    R = rng.uniform(0, 1, size=(len(action_counts), num_states, J))
    eta = rng.dirichlet(np.ones(num_states)) if full_support_eta else np.eye(num_states)[0]
    return MarkovGame(list(range(num_states)), action_counts, P, R, eta, gamma)


def random_policy(rng: np.random.Generator, num_states: int, num_joint: int) -> np.ndarray:
    return rng.dirichlet(np.ones(num_joint), size=num_states)
