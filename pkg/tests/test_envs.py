from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msol.envs import TaskSpec, enumerate_tasks, env_dims, make_vec_env, reset
from msol.envs import bandits as B
from msol.envs import taxi as T
from msol.envs.layout import BUILTIN_LAYOUTS, GridLayout, layout_from_dict, load_layout, shifted_layout
from msol.errors import ConfigError

ALL_LAYOUTS = [*BUILTIN_LAYOUTS, "taxi10x10-shifted", "taxi8x8-shifted", "taxi30-shifted"]


@pytest.fixture(scope="module")
def taxi30():
    return load_layout("taxi30")


def test_taxi30_has_30_locations(taxi30):
    assert taxi30.n_locations == 30
    assert len(taxi30.special) == 4


def test_twelve_tasks_per_layout():
    tasks = enumerate_tasks("taxi", "taxi30")
    assert len(tasks) == 12 == len(set(tasks))
    assert all(t.pickup != t.dropoff for t in tasks)
    assert [t.goal for t in enumerate_tasks("bandits")] == [0, 1]


def test_task_needs_distinct_cells():
    with pytest.raises(ConfigError):
        TaskSpec("taxi", "taxi30", 1, 1)


@pytest.mark.parametrize("name", ["taxi10x10", "taxi8x8"])
def test_shifted_special_cells_move_one_cell(name):
    base = load_layout(name)
    moved = shifted_layout(base)
    for a, b in zip(base.special, moved.special):
        assert abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1


def test_shift_into_blocked_cell_is_config_error():
    d = load_layout("taxi8x8").to_dict()
    d["shift"] = [[-1, 0], [1, 0], [0, 1], [0, -1]]  # corner cells pushed off the grid
    with pytest.raises(ConfigError):
        shifted_layout(layout_from_dict(d))


def test_layout_roundtrip_and_version():
    lay = load_layout("taxi30")
    again = layout_from_dict(lay.to_dict())
    assert again.cells == lay.cells and again.walls == lay.walls
    bad = lay.to_dict()
    bad["format_version"] = 7
    with pytest.raises(ConfigError):
        layout_from_dict(bad)


def test_advertised_location_count_is_checked():
    with pytest.raises(ConfigError):
        GridLayout("x", 2, 2, [], [(0, 0), (1, 0), (0, 1), (1, 1)], locations=5)


def test_test_mode_reset_has_no_passenger():
    rng = np.random.default_rng(0)
    task = TaskSpec("taxi", "taxi30", 0, 1)
    for _ in range(200):
        state, obs = reset(task, "test", rng)
        assert state.passenger == 0


def test_train_mode_reset_is_seeded():
    task = TaskSpec("taxi", "taxi30", 0, 1)
    a = [reset(task, "train", np.random.default_rng(5))[0] for _ in range(2)]
    assert a[0] == a[1]
    flags = {reset(task, "train", np.random.default_rng(s))[0].passenger for s in range(50)}
    assert flags == {0, 1}


def test_bandit_reset_goals_differ():
    for s in range(50):
        state, _ = B.reset_bandits(np.random.default_rng(s))
        assert state.goals[0] != state.goals[1]


def test_taxi_observation_is_one_hot(taxi30):
    for loc in range(taxi30.n_locations):
        for p in (0, 1):
            obs = T.observe(taxi30, T.TaxiState(loc, p))
            assert obs.sum() == 1.0 and obs.max() == 1.0
            assert np.flatnonzero(obs)[0] == loc + 30 * p
    assert env_dims("taxi", "taxi30") == (60, 6)
    assert env_dims("dir-taxi", "taxi30") == (240, 5)


def test_delivery_pays_1_9(taxi30):
    task = TaskSpec("taxi", "taxi30", 0, 1)
    goal = int(taxi30.special_idx[1])
    state, r, done = T.step_taxi(taxi30, task, T.TaxiState(goal, 1), T.PICKUP_DROPOFF)
    assert r == pytest.approx(1.9) and done and state.passenger == 0


def test_pickup_only_at_pickup_cell(taxi30):
    task = TaskSpec("taxi", "taxi30", 0, 1)
    pick = int(taxi30.special_idx[0])
    s, r, done = T.step_taxi(taxi30, task, T.TaxiState(pick, 0), T.PICKUP_DROPOFF)
    assert s.passenger == 1 and r == pytest.approx(-0.1) and not done
    other = int(taxi30.special_idx[2])
    s, r, done = T.step_taxi(taxi30, task, T.TaxiState(other, 0), T.PICKUP_DROPOFF)
    assert s.passenger == 0 and r == pytest.approx(-0.1) and not done


def _wall_move(layout):
    for i, c in enumerate(layout.cells):
        for d in range(4):
            if layout.move(c, d) == c:
                return i, d
    raise AssertionError("layout without any blocked move")


def test_move_into_wall(taxi30):
    task = TaskSpec("taxi", "taxi30", 0, 1)
    loc, d = _wall_move(taxi30)
    s, r, done = T.step_taxi(taxi30, task, T.TaxiState(loc, 0), d)
    assert s.loc == loc and r == pytest.approx(-0.1) and not done


def test_internal_walls_block(taxi30):
    # at least one wall separates two in-bounds cells
    assert any(all(taxi30.in_bounds(c) for c in e) for e in taxi30.walls)


def test_episode_ends_at_50(taxi30):
    task = TaskSpec("taxi", "taxi30", 0, 1)
    s = T.TaxiState(0, 0, 0, 49)
    _, r, done = T.step_taxi(taxi30, task, s, 4)
    assert done and r == pytest.approx(-0.1)


def test_directional_rotation_and_forward(taxi30):
    task = TaskSpec("dir-taxi", "taxi30", 0, 1)
    s, r, done = T.step_directional_taxi(taxi30, task, T.TaxiState(5, 0, facing=0), 1)
    assert s.facing == 1 and s.loc == 5 and r == pytest.approx(-0.1) and not done
    s, _, _ = T.step_directional_taxi(taxi30, task, T.TaxiState(5, 0, facing=1), 2)
    assert s.facing == 0
    loc, d = _wall_move(taxi30)
    s, _, _ = T.step_directional_taxi(taxi30, task, T.TaxiState(loc, 0, facing=d), 0)
    assert s.loc == loc and s.facing == d
    goal = int(taxi30.special_idx[1])
    s, r, done = T.step_directional_taxi(taxi30, task, T.TaxiState(goal, 1, facing=2), T.PICKUP_DROPOFF_DIRECTIONAL)
    assert r == pytest.approx(1.9) and done


def test_bandit_rewards():
    task = B.BanditState((5.0, 5.0), ((5.0, 5.5), (2.0, 2.0)))
    # moving south lands exactly on goal 0
    _, r, _ = B.step_moving_bandits(B.BanditState((5.0, 6.0), ((5.0, 5.5), (2.0, 2.0))), TaskSpec("bandits", goal=0), 2)
    assert r == 1.0
    assert B.bandit_reward((0.0, 0.0), (9.0, 9.0)) == 0.0
    # within range of the wrong goal only
    _, r, _ = B.step_moving_bandits(task, TaskSpec("bandits", goal=1), 0)
    assert r == 0.0
    _, r, done = B.step_moving_bandits(B.BanditState((5.0, 5.0), task.goals, 49), TaskSpec("bandits", goal=1), 0)
    assert done


def test_bandit_moves_are_clipped():
    s, _, _ = B.step_moving_bandits(B.BanditState((10.0, 10.0), ((1.0, 1.0), (2.0, 2.0))), TaskSpec("bandits", goal=0), 0)
    assert s.pos == (10.0, 10.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["taxi", "dir-taxi"]))
def test_vec_env_matches_pure_step(seed, family):
    """Replaying the batched env's actions through the pure step reproduces it."""
    rng = np.random.default_rng(seed)
    layout = load_layout("taxi30")
    task = enumerate_tasks(family, "taxi30")[seed % 12]
    env = make_vec_env([task], "train", [seed])
    env.reset()
    state = env.state(0)
    step = T.step_directional_taxi if family == "dir-taxi" else T.step_taxi
    for _ in range(60):
        a = int(rng.integers(env.n_actions))
        expected, r_ref, done_ref = step(layout, task, state, a)
        _, r, done, _ = env.step([a])
        assert r[0] == pytest.approx(r_ref) and done[0] == done_ref
        state = env.state(0) if done_ref else expected
        if not done_ref:
            assert env.state(0) == expected


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_bandit_vec_env_matches_pure_step(seed):
    rng = np.random.default_rng(seed)
    task = TaskSpec("bandits", goal=seed % 2)
    env = make_vec_env([task], "train", [seed])
    env.reset()
    state = env.state(0)
    for _ in range(60):
        a = int(rng.integers(4))
        expected, r_ref, done_ref = B.step_moving_bandits(state, task, a)
        _, r, done, _ = env.step([a])
        assert r[0] == r_ref and done[0] == done_ref
        if done_ref:
            state = env.state(0)
        else:
            np.testing.assert_allclose(env.state(0).pos, expected.pos, atol=1e-12)
            state = expected


def test_replay_is_deterministic():
    tasks = enumerate_tasks("taxi", "taxi30")[:3]
    actions = np.random.default_rng(0).integers(0, 6, size=(100, 3))

    def run():
        env = make_vec_env(tasks, "train", [1, 2, 3])
        out = [env.reset()]
        for a in actions:
            out.append(env.step(a)[0])
        return np.stack(out)

    assert run().tobytes() == run().tobytes()


def forward_bfs(layout, task, directional, start):
    """Per-start BFS over (loc, facing, passenger), independent of the reverse search."""
    step = T.step_directional_taxi if directional else T.step_taxi
    n_actions = T.N_ACTIONS_DIRECTIONAL if directional else T.N_ACTIONS
    seen = {start: 0}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for a in range(n_actions):
            nxt, r, _ = step(layout, task, T.TaxiState(node[0], node[2], node[1], 0), a)
            if r > 0:
                return seen[node] + 1
            key = (nxt.loc, nxt.facing, nxt.passenger)
            if key not in seen:
                seen[key] = seen[node] + 1
                queue.append(key)
    return None


@pytest.mark.parametrize("directional", [False, True])
def test_reverse_bfs_matches_forward_bfs(directional):
    layout = load_layout("taxi30")
    for task in enumerate_tasks("taxi", "taxi30")[::3]:
        dist = T.shortest_delivery(layout, task, directional)
        for loc in range(0, layout.n_locations, 4):
            for f in (range(4) if directional else (0,)):
                for p in (0, 1):
                    assert dist.get((loc, f, p)) == forward_bfs(layout, task, directional, (loc, f, p))


@pytest.mark.parametrize("name", ALL_LAYOUTS)
@pytest.mark.parametrize("directional", [False, True])
def test_every_layout_certified(name, directional):
    layout = load_layout(name)
    report = T.certify_layout(layout, enumerate_tasks("taxi", name), directional)
    assert len(report) == 12
    assert all(r["max_steps"] <= T.MAX_STEPS for r in report.values())


def test_optimal_return_composition():
    assert T.optimal_return(1) == pytest.approx(1.9)
    assert T.optimal_return(7) == pytest.approx(1.3)

