from pathlib import Path

import numpy as np
import pytest

from drop_bottleneck.core.exceptions import InvalidActionError, InvalidMapError, RolloutError
from drop_bottleneck.models.domain import NoiseMode, SpawnPolicy
from drop_bottleneck.models.experiment import EnvSection
from drop_bottleneck.services.environments import (
    DOWN, LEFT, N_ACTIONS, RIGHT, TV_TOGGLE, UP, GridMap, GridWorld, generate_maze, load_map, parse_map,
)

MAZE = Path(__file__).resolve().parent.parent / "configs" / "maps" / "maze15.txt"

CORRIDOR = """
#######
#.....#
#.###.#
#....G#
#######
"""


def open_room(size: int = 8, goal=(7, 7)) -> GridMap:
    return GridMap(walls=np.zeros((size, size), dtype=bool), goals=[goal])


def make_env(mode=NoiseMode.ORIGINAL, policy=SpawnPolicy.DENSE, grid=None, **kwargs) -> GridWorld:
    return GridWorld(grid_map=grid or open_room(), noise_mode=mode, spawn_policy=policy, **kwargs)


def tv(observation: np.ndarray, env: GridWorld) -> np.ndarray:
    return observation[env.state_dim:]


class TestMaps:
    def test_parse(self):
        grid = parse_map(CORRIDOR)
        assert (grid.height, grid.width) == (5, 7)
        assert grid.goals == [(3, 5)]
        assert grid.walls[0].all() and not grid.walls[1, 1]
        assert parse_map(grid.render()).goals == grid.goals

    def test_goal_distances(self):
        distances = parse_map(CORRIDOR).goal_distances()
        assert distances[3, 5] == 0
        assert distances[3, 1] == 4
        assert distances[1, 1] == 6
        assert distances[0, 0] == -1

    @pytest.mark.parametrize("text", ["", "##\n#", "#.#\n#x#\n#G#", "#..\n#..\n..."])
    def test_invalid(self, text):
        with pytest.raises(InvalidMapError):
            parse_map(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InvalidMapError):
            load_map(tmp_path / "none.txt")

    def test_shipped_maze(self):
        grid = load_map(MAZE)
        assert (grid.height, grid.width) == (15, 15)
        distances = grid.goal_distances()
        free = ~grid.walls
        assert np.all(distances[free] >= 0)

    def test_generated_maze_connected(self, np_rng):
        grid = generate_maze(15, 15, np_rng)
        distances = grid.goal_distances()
        assert np.all(distances[~grid.walls] >= 0)
        assert grid.walls[0].all() and grid.walls[:, 0].all()

    def test_maze_size_checked(self, np_rng):
        with pytest.raises(InvalidMapError):
            generate_maze(8, 9, np_rng)


class TestDynamics:
    def test_wall_blocks_movement(self, np_rng):
        grid = parse_map(CORRIDOR)
        env = make_env(grid=grid, policy=SpawnPolicy.SPARSE, d_near=3, d_far=100)
        env.reset(np_rng)
        env.position = (1, 1)
        env.step(UP, np_rng)
        assert env.position == (1, 1)
        env.step(LEFT, np_rng)
        assert env.position == (1, 1)
        env.step(RIGHT, np_rng)
        assert env.position == (1, 2)

    def test_movement_deterministic(self, np_rng):
        env = make_env(mode=NoiseMode.NOISE)
        env.reset(np_rng)
        env.position = (3, 3)
        env.step(DOWN, np_rng)
        assert env.position == (4, 3)

    def test_goal_reward(self, np_rng):
        env = make_env(d_near=1)
        env.reset(np_rng)
        env.position = (7, 6)
        result = env.step(RIGHT, np_rng)
        assert result.reward == 1.0 and result.done and result.success
        with pytest.raises(RolloutError):
            env.step(UP, np_rng)

    def test_step_cap(self, np_rng):
        env = make_env(policy=SpawnPolicy.VERY_SPARSE, d_far=10, max_steps=5)
        env.reset(np_rng)
        results = [env.step(TV_TOGGLE, np_rng) for _ in range(5)]
        assert [r.done for r in results] == [False] * 4 + [True]
        assert not results[-1].success and results[-1].reward == 0.0

    @pytest.mark.parametrize("action", [-1, N_ACTIONS, 1.5])
    def test_invalid_action(self, np_rng, action):
        env = make_env()
        env.reset(np_rng)
        with pytest.raises(InvalidActionError):
            env.step(action, np_rng)


class TestNoiseModes:
    def test_original_is_zero(self, np_rng):
        env = make_env(NoiseMode.ORIGINAL)
        observation = env.reset(np_rng)
        assert np.all(tv(observation, env) == 0)
        assert np.all(tv(env.step(TV_TOGGLE, np_rng).observation, env) == 0)

    def test_noise_changes_every_step(self, np_rng):
        env = make_env(NoiseMode.NOISE, max_steps=50)
        previous = tv(env.reset(np_rng), env)
        for action in (UP, LEFT, TV_TOGGLE, DOWN):
            current = tv(env.step(action, np_rng).observation, env)
            assert not np.array_equal(previous, current)
            previous = current

    @pytest.mark.parametrize("mode", [NoiseMode.NOISE_ACTION, NoiseMode.IMAGE_ACTION])
    def test_action_modes_only_change_on_toggle(self, np_rng, mode):
        env = make_env(mode, max_steps=200)
        previous = tv(env.reset(np_rng), env)
        changed = 0
        for t in range(100):
            action = TV_TOGGLE if t % 5 == 0 else (UP, DOWN, LEFT, RIGHT)[t % 4]
            result = env.step(action, np_rng)
            current = tv(result.observation, env)
            if action != TV_TOGGLE:
                assert np.array_equal(previous, current)
            elif not np.array_equal(previous, current):
                changed += 1
            previous = current
            if result.done:
                previous = tv(env.reset(np_rng), env)
        assert changed > 0

    def test_image_patterns_are_frozen(self, np_rng):
        env = make_env(NoiseMode.IMAGE_ACTION, max_steps=500, pattern_seed=3)
        env.reset(np_rng)
        for _ in range(200):
            channel = tv(env.step(TV_TOGGLE, np_rng).observation, env)
            assert any(np.array_equal(channel, pattern) for pattern in env.patterns)
        same_seed = make_env(NoiseMode.IMAGE_ACTION, pattern_seed=3)
        assert np.array_equal(env.patterns, same_seed.patterns)
        assert env.patterns.shape == (30, 16)


class TestSpawn:
    @pytest.mark.parametrize("policy", list(SpawnPolicy))
    def test_constraints_hold(self, policy, np_rng):
        grid = load_map(MAZE)
        env = make_env(policy=policy, grid=grid, d_near=3, d_far=20)
        distances = grid.goal_distances()
        for _ in range(10_000):
            env.reset(np_rng)
            cell = env.position
            assert cell not in grid.goals and not grid.walls[cell]
            if policy == SpawnPolicy.DENSE:
                assert grid.manhattan_to_goal(cell) <= 3
            elif policy == SpawnPolicy.SPARSE:
                assert 3 < distances[cell] < 20
            else:
                assert distances[cell] >= 20

    def test_no_candidate(self, np_rng):
        env = make_env(policy=SpawnPolicy.VERY_SPARSE, d_far=100)
        with pytest.raises(InvalidMapError):
            env.reset(np_rng)

    def test_procedural_changes_map(self, np_rng):
        env = make_env(grid=generate_maze(11, 11, np_rng), procedural=True, policy=SpawnPolicy.SPARSE,
                       d_near=1, d_far=100)
        layouts = set()
        for _ in range(5):
            env.reset(np_rng)
            layouts.add(env.grid_map.render())
        assert len(layouts) > 1


class TestRelevance:
    def test_eight_by_eight(self):
        partition = make_env().ground_truth_relevance()
        assert partition.state_dims == list(range(64))
        assert partition.tv_dims == list(range(64, 80))

    @pytest.mark.parametrize("mode", list(NoiseMode))
    def test_sizes_match_observation(self, mode, np_rng):
        env = make_env(mode)
        partition = env.ground_truth_relevance()
        assert partition.size == env.observation_dim == env.reset(np_rng).shape[0]
        assert partition.relevance_mask().sum() == env.state_dim

    def test_one_hot_state(self, np_rng):
        env = make_env()
        observation = env.reset(np_rng)
        state = observation[:env.state_dim]
        assert state.sum() == 1.0
        assert int(np.argmax(state)) == env.position[0] * 8 + env.position[1]


def test_from_config(np_rng):
    cfg = EnvSection(map_path=str(MAZE), noise_mode=NoiseMode.NOISE, spawn_policy=SpawnPolicy.SPARSE,
                     max_episode_steps=50, tv_dim=8)
    env = GridWorld.from_config(cfg, np_rng, pattern_seed=1)
    assert env.observation_dim == 15 * 15 + 8
    assert env.max_steps == 50
    generated = GridWorld.from_config(EnvSection(width=9, height=9), np_rng)
    assert generated.grid_map.walls.shape == (9, 9)
