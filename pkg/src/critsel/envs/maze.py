"""Deterministic textual gridworld mazes.

The agent sees its own position, the goal position, and which of the four
directions are blocked at the current cell.  Moves into a wall or the
boundary are no-ops.  Every step costs -1 until the goal is reached; the
goal-reaching transition has reward 0.  Episode success is the binary
reached-goal indicator, which doubles as the normalized final reward.

Everything here is a pure function of the spec and the action sequence, so
replaying a recorded action sequence reproduces observations exactly.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field, replace

from ..errors import GenerationError, UnsupportedEnvironmentError
from ..seeding import mix64, rng_from
from ..trajectory import Step, Trajectory

Cell = tuple[int, int]
Wall = tuple[Cell, Cell]

ACTIONS = ("up", "down", "left", "right")
_DELTAS = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}

INSTRUCTION_TEMPLATE = (
    "You are navigating a {height}x{width} grid maze. Reach the goal cell "
    "using the actions up, down, left or right. Moving into a wall leaves "
    "you in place. You have at most {max_rounds} moves. {observation}"
)
THOUGHT_TEMPLATE = "I am at ({r}, {c}); the goal is at ({gr}, {gc}); I will move {action}."


def _normalize_wall(a: Cell, b: Cell) -> Wall:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class MazeSpec:
    """Static description of one maze task.

    ``walls`` holds blocked edges between adjacent cells as normalized
    (cell, cell) pairs; the outer boundary is always blocked.
    """

    width: int
    height: int
    walls: frozenset[Wall]
    start: Cell
    goal: Cell
    max_rounds: int = 15
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self,
            "walls",
            frozenset(_normalize_wall(tuple(a), tuple(b)) for a, b in self.walls),
        )
        object.__setattr__(self, "start", tuple(self.start))
        object.__setattr__(self, "goal", tuple(self.goal))
        if self.start == self.goal:
            raise GenerationError("start equals goal")
        for name, cell in (("start", self.start), ("goal", self.goal)):
            if not self.in_bounds(cell):
                raise GenerationError(f"{name} {cell} out of bounds")
        if self.max_rounds < 1:
            raise GenerationError("max_rounds must be >= 1")

    def in_bounds(self, cell: Cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def cells(self) -> list[Cell]:
        return [(r, c) for r in range(self.height) for c in range(self.width)]


def spec_id(spec: MazeSpec) -> str:
    """Stable content-derived identifier, shared by spec files and trajectories."""
    payload = json.dumps(spec_to_obj(spec), sort_keys=True)
    digest = hashlib.blake2b(payload.encode(), digest_size=6).hexdigest()
    return f"maze-{digest}"


def spec_to_obj(spec: MazeSpec) -> dict:
    return {
        "width": spec.width,
        "height": spec.height,
        "walls": [[list(a), list(b)] for a, b in sorted(spec.walls)],
        "start": list(spec.start),
        "goal": list(spec.goal),
        "max_rounds": spec.max_rounds,
        "seed": spec.seed,
    }


def spec_from_obj(obj: dict) -> MazeSpec:
    return MazeSpec(
        width=int(obj["width"]),
        height=int(obj["height"]),
        walls=frozenset(
            _normalize_wall(tuple(a), tuple(b)) for a, b in obj["walls"]
        ),
        start=tuple(obj["start"]),
        goal=tuple(obj["goal"]),
        max_rounds=int(obj.get("max_rounds", 15)),
        seed=int(obj.get("seed", 0)),
    )


def neighbor(cell: Cell, action: str) -> Cell:
    dr, dc = _DELTAS[action]
    return (cell[0] + dr, cell[1] + dc)


def is_blocked(spec: MazeSpec, cell: Cell, action: str) -> bool:
    nxt = neighbor(cell, action)
    if not spec.in_bounds(nxt):
        return True
    return _normalize_wall(cell, nxt) in spec.walls


def move(spec: MazeSpec, cell: Cell, action: str) -> Cell:
    """Apply one action; blocked moves leave the position unchanged."""
    if action not in _DELTAS:
        raise UnsupportedEnvironmentError(f"unknown action {action!r}")
    return cell if is_blocked(spec, cell, action) else neighbor(cell, action)


def render_observation(spec: MazeSpec, cell: Cell) -> str:
    blocked = [a for a in ACTIONS if is_blocked(spec, cell, a)]
    blocked_text = ", ".join(blocked) if blocked else "none"
    return (
        f"You are at ({cell[0]}, {cell[1]}). "
        f"The goal is at ({spec.goal[0]}, {spec.goal[1]}). "
        f"Blocked directions: {blocked_text}."
    )


@dataclass(frozen=True)
class EnvState:
    position: Cell
    rounds_used: int = 0
    done: bool = False
    reached_goal: bool = False

    @property
    def success(self) -> float:
        return 1.0 if self.reached_goal else 0.0


def reset(spec: MazeSpec, position: Cell | None = None) -> tuple[EnvState, str]:
    """Start an episode, optionally from a non-start cell (used by rollouts)."""
    pos = tuple(position) if position is not None else spec.start
    if not spec.in_bounds(pos):
        raise UnsupportedEnvironmentError(f"reset position {pos} out of bounds")
    state = EnvState(position=pos)
    return state, render_observation(spec, pos)


def env_step(
    spec: MazeSpec, state: EnvState, action: str
) -> tuple[EnvState, str, float, bool]:
    """One transition: (state, observation, reward, done)."""
    if state.done:
        raise UnsupportedEnvironmentError("episode already finished")
    pos = move(spec, state.position, action)
    rounds = state.rounds_used + 1
    reached = pos == spec.goal
    done = reached or rounds >= spec.max_rounds
    new_state = EnvState(
        position=pos, rounds_used=rounds, done=done, reached_goal=reached
    )
    reward = 0.0 if reached else -1.0
    return new_state, render_observation(spec, pos), reward, done


class MazeEnv:
    """Stateful wrapper over the pure transition core.

    Instances are single-owner mutable objects; create one per rollout.
    """

    def __init__(self, spec: MazeSpec):
        self.spec = spec
        self.state: EnvState | None = None

    def reset(self, position: Cell | None = None) -> str:
        self.state, observation = reset(self.spec, position)
        return observation

    def step(self, action: str) -> tuple[str, float, bool]:
        if self.state is None:
            raise UnsupportedEnvironmentError("step before reset")
        self.state, observation, reward, done = env_step(
            self.spec, self.state, action
        )
        return observation, reward, done

    @property
    def success(self) -> float:
        return self.state.success if self.state is not None else 0.0


def bfs_distances(spec: MazeSpec, source: Cell) -> dict[Cell, int]:
    """Shortest step counts from ``source`` to every reachable cell."""
    dist = {tuple(source): 0}
    queue = deque([tuple(source)])
    while queue:
        cell = queue.popleft()
        for action in ACTIONS:
            if is_blocked(spec, cell, action):
                continue
            nxt = neighbor(cell, action)
            if nxt not in dist:
                dist[nxt] = dist[cell] + 1
                queue.append(nxt)
    return dist


def shortest_path_actions(spec: MazeSpec) -> list[str]:
    """The canonical expert action sequence from start to goal.

    BFS with neighbors expanded in the fixed order up, down, left, right;
    ties between equally short routes are therefore broken by that order.
    """
    parents: dict[Cell, tuple[Cell, str]] = {}
    seen = {spec.start}
    queue = deque([spec.start])
    while queue:
        cell = queue.popleft()
        if cell == spec.goal:
            break
        for action in ACTIONS:
            if is_blocked(spec, cell, action):
                continue
            nxt = neighbor(cell, action)
            if nxt not in seen:
                seen.add(nxt)
                parents[nxt] = (cell, action)
                queue.append(nxt)
    if spec.goal not in seen:
        raise GenerationError(f"goal {spec.goal} unreachable from {spec.start}")
    actions: list[str] = []
    cell = spec.goal
    while cell != spec.start:
        cell, action = parents[cell]
        actions.append(action)
    actions.reverse()
    return actions


def expert_trajectory(spec: MazeSpec) -> Trajectory:
    """Render the BFS shortest path as a recorded episode with reward 1."""
    actions = shortest_path_actions(spec)
    state, observation = reset(spec)
    instruction = INSTRUCTION_TEMPLATE.format(
        height=spec.height,
        width=spec.width,
        max_rounds=spec.max_rounds,
        observation=observation,
    )
    steps: list[Step] = []
    for k, action in enumerate(actions):
        r, c = state.position
        thought = THOUGHT_TEMPLATE.format(
            r=r, c=c, gr=spec.goal[0], gc=spec.goal[1], action=action
        )
        state, observation, _, _ = env_step(spec, state, action)
        steps.append(Step(k, thought, action, observation))
    return Trajectory(
        id=spec_id(spec),
        environment="maze",
        instruction=instruction,
        steps=tuple(steps),
        final_reward=1.0,
    )


def pivotal_steps(spec: MazeSpec) -> list[int]:
    """Expert-path steps taken from junction cells (diagnostics only).

    A junction is a path cell with at least two open, non-backtrack exits.
    """
    actions = shortest_path_actions(spec)
    out: list[int] = []
    cell = spec.start
    came_from: str | None = None
    reverse = {"up": "down", "down": "up", "left": "right", "right": "left"}
    for k, action in enumerate(actions):
        exits = [
            a
            for a in ACTIONS
            if not is_blocked(spec, cell, a)
            and (came_from is None or a != reverse[came_from])
        ]
        if len(exits) >= 2:
            out.append(k)
        cell = neighbor(cell, action)
        came_from = action
    return out


@dataclass(frozen=True)
class MazeFamilyParams:
    """Generator knobs for one split of random mazes."""

    width: int = 5
    height: int = 5
    wall_density: float = 0.25
    min_distance: int = 4
    max_rounds: int = 15
    max_attempts: int = 2000


HELD_IN_PARAMS = MazeFamilyParams(width=5, height=5, wall_density=0.25, min_distance=4)
HELD_OUT_PARAMS = MazeFamilyParams(width=6, height=6, wall_density=0.30, min_distance=5)


def _maze_key(spec: MazeSpec) -> tuple:
    return (tuple(sorted(spec.walls)), spec.start, spec.goal)


def random_maze(
    family_seed: int, tag: str, index: int, params: MazeFamilyParams
) -> MazeSpec:
    """One solvable random maze, deterministic in (family_seed, tag, index)."""
    rng = rng_from(family_seed, tag, index)
    edges: list[Wall] = []
    for r in range(params.height):
        for c in range(params.width):
            if r + 1 < params.height:
                edges.append(_normalize_wall((r, c), (r + 1, c)))
            if c + 1 < params.width:
                edges.append(_normalize_wall((r, c), (r, c + 1)))
    cells = [(r, c) for r in range(params.height) for c in range(params.width)]
    for _ in range(params.max_attempts):
        mask = rng.random(len(edges)) < params.wall_density
        walls = frozenset(e for e, m in zip(edges, mask) if m)
        start = cells[int(rng.integers(len(cells)))]
        goal = cells[int(rng.integers(len(cells)))]
        if start == goal:
            continue
        spec = MazeSpec(
            width=params.width,
            height=params.height,
            walls=walls,
            start=start,
            goal=goal,
            max_rounds=params.max_rounds,
            seed=mix64(family_seed, tag, index) % (2**31),
        )
        dist = bfs_distances(spec, start).get(goal)
        if dist is None or not params.min_distance <= dist <= params.max_rounds:
            continue
        return spec
    raise GenerationError(
        f"no solvable maze found for ({family_seed}, {tag}, {index}) "
        f"after {params.max_attempts} attempts"
    )


def make_split(
    family_seed: int,
    n_held_in: int,
    n_held_out: int,
    held_in_params: MazeFamilyParams = HELD_IN_PARAMS,
    held_out_params: MazeFamilyParams = HELD_OUT_PARAMS,
) -> tuple[list[MazeSpec], list[MazeSpec]]:
    """Deterministic held-in/held-out maze splits.

    The two splits use different sizes and wall densities and never share a
    (walls, start, goal) triple; duplicates within a split are skipped too.
    """
    if n_held_in < 1 or n_held_out < 1:
        raise GenerationError("split sizes must be >= 1")
    held_in: list[MazeSpec] = []
    held_out: list[MazeSpec] = []
    keys: set[tuple] = set()
    for tag, count, params, bucket in (
        ("held_in", n_held_in, held_in_params, held_in),
        ("held_out", n_held_out, held_out_params, held_out),
    ):
        index = 0
        while len(bucket) < count:
            spec = random_maze(family_seed, tag, index, params)
            index += 1
            key = _maze_key(spec)
            if key in keys:
                continue
            keys.add(key)
            bucket.append(spec)
    return held_in, held_out
