"""FairGamble, Hunters and Collect-and-Explore, plus the nine requirement presets."""
from __future__ import annotations

import itertools

import numpy as np

from .game import (
    DensityKind,
    DensityObjective,
    MarkovGame,
    RequirementKind,
    RequirementSpec,
    RewardMixture,
)

GAMMA = 0.99
GAMES = ("fairgamble", "hunters", "cae")
TASKS = ("safety", "freq-10", "fairness")
_TASK_ALIASES = {"mdce": "safety", "fmce": "freq-10", "mdgce": "fairness", "freq": "freq-10"}


def build_fair_gamble(gamma: float = GAMMA) -> MarkovGame:
    """Two gamblers pick 0/1/2; |a1 - a2| selects which of three zero-mean games is played next."""
    states = ["G1", "G2", "G3"]
    counts = (3, 3)
    J = 9
    P = np.zeros((3, J, 3))
    for a1, a2 in itertools.product(range(3), repeat=2):
        P[:, a1 * 3 + a2, abs(a1 - a2)] = 1.0
    stake = np.array([0.0, 0.5, 1.0])
    win = np.zeros((2, 3, J))
    win[0] = stake[:, None]
    win[1] = -stake[:, None]
    sampler = RewardMixture(np.array([0.5, 0.5]), np.stack([win, -win]) + 0.0)
    return MarkovGame(
        states, counts, P, sampler.expectation(), np.full(3, 1 / 3), gamma, sampler,
        action_names=(("0", "1", "2"), ("0", "1", "2")),
    )


HUNT, GUARD = 0, 1


def hunters_reward(locations, actions) -> np.ndarray:
    """Per-hunter reward for current locations (True = in village) and actions."""
    n = len(actions)
    r = np.zeros(n)
    for j, (inside, act) in enumerate(zip(locations, actions)):
        if act == GUARD:
            r += 0.5
        elif inside:
            r += 0.1
            r[j] += 0.9
        else:
            r -= 0.5
            r[j] += 1.0
    if sum(a == GUARD for a in actions) <= 1:
        r -= 3.0
    return r


def build_hunters(gamma: float = GAMMA) -> MarkovGame:
    """Three hunters; state is who is in the village, hunting moves a hunter out, guarding in."""
    locs = list(itertools.product((True, False), repeat=3))
    states = [tuple("in" if x else "out" for x in loc) for loc in locs]
    counts = (2, 2, 2)
    joint = list(itertools.product(range(2), repeat=3))
    P = np.zeros((8, 8, 8))
    R = np.zeros((3, 8, 8))
    for s, loc in enumerate(locs):
        for a, acts in enumerate(joint):
            nxt = tuple(act == GUARD for act in acts)
            P[s, a, locs.index(nxt)] = 1.0
            R[:, s, a] = hunters_reward(loc, acts)
    eta = np.zeros(8)
    eta[locs.index((True, True, True))] = 1.0
    return MarkovGame(states, counts, P, R, eta, gamma,
                      action_names=(("hunt", "guard"),) * 3)


EXPLORE, COLLECT = 0, 1


def build_collect_explore(gamma: float = GAMMA) -> MarkovGame:
    """Three cooperative agents; state is the last explorer (0 = nobody explored)."""
    states = ["none", "1", "2", "3"]
    counts = (2, 2, 2)
    joint = list(itertools.product(range(2), repeat=3))
    P = np.zeros((4, 8, 4))
    R = np.zeros((3, 4, 8))
    for a, acts in enumerate(joint):
        explorers = [j for j, act in enumerate(acts) if act == EXPLORE]
        collectors = len(acts) - len(explorers)
        if explorers:
            P[:, a, [j + 1 for j in explorers]] = 1.0 / len(explorers)
        else:
            P[:, a, 0] = 1.0
        R[:, :, a] = (1.0 if explorers else 0.0) + 0.3 * collectors
    eta = np.eye(4)[0]
    return MarkovGame(states, counts, P, R, eta, gamma,
                      action_names=(("explore", "collect"),) * 3)


BUILDERS = {
    "fairgamble": build_fair_gamble,
    "hunters": build_hunters,
    "cae": build_collect_explore,
}


def build_game(game_id: str, gamma: float = GAMMA) -> MarkovGame:
    try:
        return BUILDERS[game_id.lower()](gamma)
    except KeyError:
        raise ValueError(f"unknown game {game_id!r}; choose from {GAMES}") from None


def normalize_task(task_id: str) -> str:
    t = task_id.lower()
    t = _TASK_ALIASES.get(t, t)
    if t not in TASKS:
        raise ValueError(f"unknown task {task_id!r}; choose from {TASKS}")
    return t


def _task_weights(game_id: str, game: MarkovGame):
    """(w_star, w_1, w_2): the target set for safety/frequency and the two fairness sides."""
    if game_id == "fairgamble":
        return game.weights(["G3"]), game.weights(["G1"]), game.weights(["G2"])
    if game_id == "hunters":
        n_in = np.array([sum(x == "in" for x in s) for s in game.states])
        out = np.array([[x == "out" for x in s] for s in game.states], dtype=float)
        return (n_in <= 1).astype(float), out[:, 0], out[:, 1] + out[:, 2]
    if game_id == "cae":
        return game.weights(["1"]), game.weights(["1"]), game.weights(["2", "3"])
    raise ValueError(f"unknown game {game_id!r}")


def requirement_preset(game_id: str, task_id: str, game: MarkovGame | None = None):
    """Density objective and trajectory requirement for one of the nine preset tasks."""
    game_id = game_id.lower()
    task = normalize_task(task_id)
    if game is None:
        game = build_game(game_id)
    w_star, w1, w2 = _task_weights(game_id, game)
    if task == "safety":
        return (DensityObjective(DensityKind.MIN_DENSITY, w_star),
                RequirementSpec(RequirementKind.SAFETY, w_star))
    if task == "freq-10":
        return (DensityObjective(DensityKind.FREQUENCY_MATCH, w_star, target_fraction=0.1),
                RequirementSpec(RequirementKind.FREQUENCY, w_star, proportion=0.1))
    return (DensityObjective(DensityKind.DENSITY_GAP, w1, w2),
            RequirementSpec(RequirementKind.FAIRNESS, w1, w2))
