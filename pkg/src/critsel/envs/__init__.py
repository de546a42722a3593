from .maze import (
    ACTIONS,
    MazeEnv,
    MazeFamilyParams,
    MazeSpec,
    bfs_distances,
    env_step,
    expert_trajectory,
    make_split,
    move,
    pivotal_steps,
    random_maze,
    render_observation,
    reset,
    shortest_path_actions,
    spec_from_obj,
    spec_id,
    spec_to_obj,
)

__all__ = [
    "ACTIONS",
    "MazeEnv",
    "MazeFamilyParams",
    "MazeSpec",
    "bfs_distances",
    "env_step",
    "expert_trajectory",
    "make_split",
    "move",
    "pivotal_steps",
    "random_maze",
    "render_observation",
    "reset",
    "shortest_path_actions",
    "spec_from_obj",
    "spec_id",
    "spec_to_obj",
]
