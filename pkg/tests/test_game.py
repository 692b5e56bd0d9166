import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import one_state_game, two_state_swap
from dbce.game import (
    DensityKind,
    DensityObjective,
    MarkovGame,
    RequirementKind,
    RequirementSpec,
    RewardMixture,
    Trajectory,
    bellman_flow_error,
    density_error,
    exact_occupancy,
    game_from_json,
    game_to_json,
    load_game,
    policy_from_occupancy,
    random_game,
    random_policy,
    requirement_score,
    rollout,
    save_game,
    state_density,
    validate_game,
)


@st.composite
def game_and_policy(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    n_states = draw(st.integers(1, 5))
    counts = tuple(draw(st.lists(st.integers(1, 3), min_size=1, max_size=2)))
    gamma = draw(st.sampled_from([0.5, 0.9, 0.99]))
    game = random_game(rng, n_states, counts, gamma)
    return game, random_policy(rng, n_states, game.num_joint)


# -- construction and validation -------------------------------------------


def test_joint_index_agent_zero_slowest():
    game = one_state_game(np.zeros((2, 2, 3)))
    assert game.joint_index((0, 2)) == 2
    assert game.joint_index((1, 0)) == 3
    assert game.joint_actions.tolist()[4] == [1, 1]


def test_arrays_are_read_only():
    game = two_state_swap()
    with pytest.raises(ValueError):
        game.rewards[0, 0, 0] = 5.0


def test_validator_accepts_well_formed_game():
    assert validate_game(two_state_swap()).ok


def test_validator_reports_row_deficit_and_eta():
    P = np.ones((1, 2, 1))
    P[0, 1, 0] = 0.75
    game = MarkovGame(["s"], (2,), P, np.zeros((1, 1, 2)), [0.5], 0.9)
    report = validate_game(game)
    wheres = [p["where"] for p in report.problems]
    assert "P[s=s, a=1]" in wheres
    assert "eta" in wheres
    row = next(p for p in report.problems if p["where"] == "P[s=s, a=1]")
    assert "deficit 0.25" in row["message"]


def test_validator_rejects_discount_of_one():
    game = MarkovGame(["s"], (1,), np.ones((1, 1, 1)), np.zeros((1, 1, 1)), [1.0], 1.0)
    assert [p["where"] for p in validate_game(game).problems] == ["gamma"]


def test_validator_flags_sampler_mismatch():
    tables = np.stack([np.ones((1, 1, 1)), -np.ones((1, 1, 1))])
    sampler = RewardMixture(np.array([0.5, 0.5]), tables)
    game = MarkovGame(["s"], (1,), np.ones((1, 1, 1)), np.ones((1, 1, 1)), [1.0], 0.9, sampler)
    assert "declared expectation" in validate_game(game).problems[0]["message"]


# -- occupancy measures -------------------------------------------------------


def test_occupancy_of_alternating_policy_matches_geometric_series():
    game = two_state_swap(gamma=0.9)
    switch = np.array([[0.0, 1.0], [0.0, 1.0]])
    f = exact_occupancy(game, switch)
    # rho(a) = sum_t gamma^(2t), rho(b) = gamma * rho(a)
    np.testing.assert_allclose(state_density(f), [5.263157894736842, 4.736842105263158], rtol=1e-13)


def test_single_state_occupancy_is_total_mass():
    game = one_state_game(np.zeros((1, 2)), gamma=0.95)
    f = exact_occupancy(game, np.array([[0.25, 0.75]]))
    np.testing.assert_allclose(f, [[5.0, 15.0]])


@given(game_and_policy())
def test_occupancy_satisfies_flow_and_mass(gp):
    game, pi = gp
    f = exact_occupancy(game, pi)
    assert np.max(np.abs(bellman_flow_error(game, f))) <= 1e-8 * max(1.0, 1 / (1 - game.discount))
    assert abs(f.sum() - 1 / (1 - game.discount)) <= 1e-6
    assert np.max(np.abs(policy_from_occupancy(f) - pi)) <= 1e-8


def test_policy_from_occupancy_uniform_on_unreached_state():
    f = np.array([[2.0, 6.0], [0.0, 0.0]])
    np.testing.assert_allclose(policy_from_occupancy(f), [[0.25, 0.75], [0.5, 0.5]])


def test_policy_from_occupancy_rejects_negative_mass():
    with pytest.raises(ValueError):
        policy_from_occupancy(np.array([[1.0, -0.1]]))


def test_bellman_flow_error_detects_wrong_mass():
    game = two_state_swap(gamma=0.9)
    f = exact_occupancy(game, np.full((2, 2), 0.5))
    f[0, 0] += 0.5
    # the extra mass stays in state a, so it is partly credited back as inflow
    np.testing.assert_allclose(bellman_flow_error(game, f), [0.05, 0.0], atol=1e-12)


# -- density objectives ----------------------------------------------------------


def test_density_error_three_kinds():
    f = np.array([[1.0, 2.0], [3.0, 4.0], [0.0, 10.0]])  # rho = 3, 7, 10
    gamma = 0.9
    md = DensityObjective(DensityKind.MIN_DENSITY, [0, 1, 1])
    fm = DensityObjective(DensityKind.FREQUENCY_MATCH, [1, 0, 0], target_fraction=0.5)
    dg = DensityObjective(DensityKind.DENSITY_GAP, [1, 0, 0], [0, 0.5, 0.5])
    assert density_error(f, md, gamma) == pytest.approx(17.0)
    assert density_error(f, fm, gamma) == pytest.approx(2.0)  # |3 - 0.5 / 0.1|
    assert density_error(f, dg, gamma) == pytest.approx(5.5)


def test_density_objective_rejects_misused_fields():
    with pytest.raises(ValueError):
        DensityObjective(DensityKind.MIN_DENSITY, [1.0], target_fraction=0.2)
    with pytest.raises(ValueError):
        DensityObjective(DensityKind.FREQUENCY_MATCH, [1.0], target_fraction=1.5)
    with pytest.raises(ValueError):
        DensityObjective(DensityKind.DENSITY_GAP, [-1.0], [1.0])


def test_density_error_warns_on_infeasible_occupancy():
    game = two_state_swap()
    obj = DensityObjective(DensityKind.MIN_DENSITY, [1.0, 0.0])
    with pytest.warns(UserWarning):
        density_error(np.ones((2, 2)), obj, game.discount, game)


def test_density_objective_json_round_trip():
    obj = DensityObjective(DensityKind.DENSITY_GAP, [1.0, 0.0], [0.0, 2.0])
    again = DensityObjective.from_json(json.loads(json.dumps(obj.to_json())))
    assert again.kind is obj.kind
    np.testing.assert_array_equal(again.weights_2, obj.weights_2)


# -- trajectories -------------------------------------------------------------------


def test_requirement_scores_on_hand_trajectory():
    traj = Trajectory(np.array([0, 1, 1, 2, 0]), np.zeros(5, int), np.zeros((5, 1)), 0)
    w0, w1 = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    assert requirement_score(traj, RequirementSpec(RequirementKind.SAFETY, w1)) == 2.0
    freq = RequirementSpec(RequirementKind.FREQUENCY, w0, proportion=0.1)
    assert requirement_score(traj, freq) == pytest.approx(0.3)
    fair = RequirementSpec(RequirementKind.FAIRNESS, w0, w1)
    assert requirement_score(traj, fair) == 0.0
    assert requirement_score(traj, fair, upto=3) == -1.0


def test_rollout_is_seeded_and_follows_deterministic_dynamics():
    game = two_state_swap()
    switch = np.array([[0.0, 1.0], [0.0, 1.0]])
    traj = rollout(game, switch, steps=6, seed=3)
    assert traj.states.tolist() == [0, 1, 0, 1, 0, 1]
    assert traj.rewards[:, 0].tolist() == [1, 0, 1, 0, 1, 0]
    rng_pi = np.full((2, 2), 0.5)
    a, b = rollout(game, rng_pi, 50, seed=9), rollout(game, rng_pi, 50, seed=9)
    np.testing.assert_array_equal(a.states, b.states)


def test_rollout_samples_stochastic_rewards():
    tables = np.stack([np.ones((1, 1, 1)), -np.ones((1, 1, 1))])
    sampler = RewardMixture(np.array([0.5, 0.5]), tables)
    game = MarkovGame(["s"], (1,), np.ones((1, 1, 1)), np.zeros((1, 1, 1)), [1.0], 0.9, sampler)
    r = rollout(game, np.ones((1, 1)), steps=400, seed=0).rewards[:, 0]
    assert set(r.tolist()) == {-1.0, 1.0}
    assert abs(r.mean()) < 0.2


def test_trajectory_csv_columns(tmp_path):
    game = two_state_swap()
    traj = rollout(game, np.full((2, 2), 0.5), 4, seed=1)
    path = tmp_path / "t.csv"
    traj.to_csv(path, game)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,state,joint_action,reward_1"
    assert len(lines) == 5


# -- json ------------------------------------------------------------------------------


@given(game_and_policy())
def test_game_json_round_trip_is_exact(gp):
    game, _ = gp
    again = game_from_json(json.loads(json.dumps(game_to_json(game))))
    np.testing.assert_array_equal(again.transition, game.transition)
    np.testing.assert_array_equal(again.rewards, game.rewards)
    assert json.dumps(game_to_json(again)) == json.dumps(game_to_json(game))


def test_save_and_load(tmp_path, fair_gamble):
    path = tmp_path / "g.json"
    save_game(fair_gamble, path)
    again = load_game(path)
    assert again.states == fair_gamble.states
    np.testing.assert_array_equal(again.reward_sampler.tables, fair_gamble.reward_sampler.tables)
