import pytest

from critsel.envs.maze import (
    ACTIONS,
    HELD_IN_PARAMS,
    MazeEnv,
    MazeFamilyParams,
    MazeSpec,
    bfs_distances,
    env_step,
    expert_trajectory,
    make_split,
    pivotal_steps,
    random_maze,
    reset,
    shortest_path_actions,
    spec_from_obj,
    spec_id,
    spec_to_obj,
)
from critsel.errors import GenerationError


def open_maze(width=3, height=3, start=(0, 0), goal=(2, 2), max_rounds=15):
    return MazeSpec(
        width=width,
        height=height,
        walls=frozenset(),
        start=start,
        goal=goal,
        max_rounds=max_rounds,
    )


class TestStepSemantics:
    def test_adjacent_goal_reached_in_one_move(self):
        spec = open_maze(goal=(0, 1))
        state, _ = reset(spec)
        state, _, reward, done = env_step(spec, state, "right")
        assert state.position == (0, 1)
        assert done and state.reached_goal
        assert reward == 0.0
        assert state.success == 1.0

    def test_boundary_move_is_noop_with_penalty(self):
        spec = open_maze()
        state, _ = reset(spec)
        state, _, reward, done = env_step(spec, state, "up")
        assert state.position == (0, 0)
        assert reward == -1.0
        assert not done

    def test_wall_move_is_noop(self):
        spec = MazeSpec(
            width=3,
            height=3,
            walls=frozenset({((0, 0), (0, 1))}),
            start=(0, 0),
            goal=(2, 2),
        )
        state, _ = reset(spec)
        state, _, _, _ = env_step(spec, state, "right")
        assert state.position == (0, 0)

    def test_round_cap_ends_episode_without_success(self):
        spec = open_maze(max_rounds=15)
        state, _ = reset(spec)
        for _ in range(15):
            state, _, _, done = env_step(spec, state, "up")
        assert done and not state.reached_goal
        assert state.success == 0.0

    def test_observation_is_deterministic_function_of_state(self):
        spec = open_maze()
        _, obs_a = reset(spec)
        _, obs_b = reset(spec)
        assert obs_a == obs_b
        assert "You are at (0, 0)" in obs_a
        assert "The goal is at (2, 2)" in obs_a
        assert "Blocked directions: up, left." in obs_a


class TestExpertTrajectory:
    def test_open_maze_length_is_manhattan_distance(self):
        t = expert_trajectory(open_maze())
        assert len(t.steps) == 4
        assert t.final_reward == 1.0

    def test_adjacent_goal_single_step(self):
        t = expert_trajectory(open_maze(goal=(0, 1)))
        assert len(t.steps) == 1

    def test_bfs_tie_broken_by_direction_order(self):
        # Open 2x2 grid: up/down/left/right order prefers "down" first.
        spec = open_maze(width=2, height=2, start=(0, 0), goal=(1, 1))
        assert shortest_path_actions(spec) == ["down", "right"]

    def test_replay_soundness(self):
        spec = random_maze(7, "held_in", 0, HELD_IN_PARAMS)
        t = expert_trajectory(spec)
        env = MazeEnv(spec)
        env.reset()
        for step in t.steps:
            observation, _, _ = env.step(step.action)
            assert observation == step.observation
        assert env.success == 1.0

    def test_expert_length_within_round_cap(self):
        for index in range(20):
            spec = random_maze(3, "held_in", index, HELD_IN_PARAMS)
            t = expert_trajectory(spec)
            assert 1 <= len(t.steps) <= spec.max_rounds

    def test_unreachable_goal_raises(self):
        walls = frozenset(
            {((0, 0), (0, 1)), ((0, 0), (1, 0))}
        )
        spec = MazeSpec(width=2, height=2, walls=walls, start=(0, 0), goal=(1, 1))
        with pytest.raises(GenerationError):
            shortest_path_actions(spec)

    def test_determinism_across_runs(self):
        spec = random_maze(11, "held_in", 2, HELD_IN_PARAMS)
        assert expert_trajectory(spec) == expert_trajectory(spec)


class TestSpecSerialization:
    def test_round_trip(self):
        spec = random_maze(5, "held_out", 1, MazeFamilyParams(width=6, height=6))
        assert spec_from_obj(spec_to_obj(spec)) == spec

    def test_spec_id_stable(self):
        spec = open_maze()
        assert spec_id(spec) == spec_id(spec_from_obj(spec_to_obj(spec)))


class TestMakeSplit:
    def test_same_seed_identical_splits(self):
        a = make_split(42, 5, 3)
        b = make_split(42, 5, 3)
        assert a == b

    def test_splits_disjoint(self):
        held_in, held_out = make_split(7, 10, 6)
        keys_in = {(tuple(sorted(s.walls)), s.start, s.goal) for s in held_in}
        keys_out = {(tuple(sorted(s.walls)), s.start, s.goal) for s in held_out}
        assert not keys_in & keys_out

    def test_split_sizes_and_dimensions(self):
        held_in, held_out = make_split(1, 4, 2)
        assert len(held_in) == 4 and len(held_out) == 2
        assert all(s.width == 5 for s in held_in)
        assert all(s.width == 6 for s in held_out)

    def test_generated_mazes_all_solvable(self):
        # Reachability oracle over a large generated population.
        count = 0
        for index in range(500):
            spec = random_maze(99, "held_in", index, HELD_IN_PARAMS)
            dist = bfs_distances(spec, spec.start)
            assert spec.goal in dist
            assert dist[spec.goal] <= spec.max_rounds
            count += 1
        for index in range(500):
            spec = random_maze(99, "held_out", index, MazeFamilyParams(width=6, height=6, wall_density=0.3, min_distance=5))
            assert spec.goal in bfs_distances(spec, spec.start)
            count += 1
        assert count == 1000


class TestPivotalSteps:
    def test_junction_detection_in_open_maze(self):
        # From (0,0) to (2,2) in an open 3x3 grid: every on-path cell except
        # the corners has two useful exits.
        steps = pivotal_steps(open_maze())
        assert steps
        assert all(0 <= s < 4 for s in steps)

    def test_corridor_has_no_junctions(self):
        # 1x4 corridor: a single forward exit everywhere.
        spec = MazeSpec(
            width=4, height=1, walls=frozenset(), start=(0, 0), goal=(0, 3)
        )
        assert pivotal_steps(spec) == []
