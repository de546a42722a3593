"""Monte-Carlo value estimation and value-gap critical flagging.

For each step of an expert trajectory the environment is replayed to the
post-action state and N fresh rollouts are run from there under a rollout
policy; the mean of their final rewards estimates the step's outcome value.
A backward discounted pass turns the per-step estimates into values, and
steps whose consecutive value difference exceeds a threshold are flagged
critical.  The terminal step uses the recorded final reward directly, with
no rollouts.

An exact value-iteration oracle over the maze's finite (cell, rounds-left)
state space validates the Monte-Carlo estimates.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from ..envs.maze import (
    ACTIONS,
    Cell,
    MazeEnv,
    MazeSpec,
    bfs_distances,
    move,
)
from ..errors import (
    AlignmentError,
    DuplicateIdError,
    FileFormatError,
    InvalidRatioError,
    InvalidRolloutCountError,
    ReplayError,
    UnsupportedEnvironmentError,
)
from ..io import _iter_jsonl, atomic_write_text
from ..seeding import rng_from
from ..trajectory import CriticalSelection, Trajectory, history_prefix
from .base import BaseSelector

GAP_MODES = ("absolute", "signed")

_POSITION_RE = re.compile(r"You are at \((\d+), (\d+)\)")


class RolloutPolicy(Protocol):
    """Abstract action chooser used for Monte-Carlo rollouts."""

    def choose(
        self,
        instruction: str,
        history: Sequence[tuple[str, str, str]],
        observation: str,
        rng: np.random.Generator,
    ) -> str:
        ...


def _parse_position(observation: str) -> Cell:
    m = _POSITION_RE.search(observation)
    if m is None:
        raise UnsupportedEnvironmentError(
            f"cannot read a maze position from observation {observation!r}"
        )
    return (int(m.group(1)), int(m.group(2)))


class NoisyShortestPathPolicy:
    """Moves along a shortest path to the goal, with epsilon-uniform noise.

    With probability ``epsilon`` the action is uniform over all four
    directions; otherwise it is the first direction (in fixed order) that
    strictly reduces the BFS distance to the goal.  ``epsilon=0`` gives a
    deterministic always-succeeding policy on solvable mazes.
    """

    def __init__(self, spec: MazeSpec, epsilon: float = 0.0):
        if not 0.0 <= epsilon <= 1.0:
            raise InvalidRatioError(f"epsilon {epsilon} outside [0, 1]")
        self.spec = spec
        self.epsilon = epsilon
        self._dist = bfs_distances(spec, spec.goal)

    def greedy_action(self, position: Cell) -> str:
        best, best_dist = ACTIONS[0], float("inf")
        for action in ACTIONS:
            nxt = move(self.spec, position, action)
            d = self._dist.get(nxt, float("inf"))
            if d < best_dist:
                best, best_dist = action, d
        return best

    def action_distribution(self, position: Cell) -> dict[str, float]:
        probs = {a: self.epsilon / len(ACTIONS) for a in ACTIONS}
        probs[self.greedy_action(position)] += 1.0 - self.epsilon
        return probs

    def choose(self, instruction, history, observation, rng) -> str:
        if self.epsilon > 0.0 and rng.random() < self.epsilon:
            return ACTIONS[int(rng.integers(len(ACTIONS)))]
        return self.greedy_action(_parse_position(observation))


class UniformRandomPolicy:
    """Uniform over the four directions; position-independent."""

    def action_distribution(self, position: Cell) -> dict[str, float]:
        return {a: 1.0 / len(ACTIONS) for a in ACTIONS}

    def choose(self, instruction, history, observation, rng) -> str:
        return ACTIONS[int(rng.integers(len(ACTIONS)))]


@dataclass(frozen=True)
class ValueProfile:
    """Per-step reward estimates, discounted values, and gap flags."""

    trajectory_id: str
    r_hat: tuple[float, ...]
    values: tuple[float, ...]
    gaps: tuple[float, ...]
    flagged: tuple[int, ...]
    n_rollouts: int
    gamma: float
    threshold: float


def _normalize_ws(text: str) -> str:
    return " ".join(text.split())


def replay_to_step(env: MazeEnv, t: Trajectory, step: int) -> Cell:
    """Re-execute expert actions 0..step from reset, verifying observations.

    Any mismatch beyond whitespace between the environment's observation and
    the recorded one is a replay error: the spec and the trajectory disagree.
    """
    env.reset()
    for k in range(step + 1):
        observation, _, done = env.step(t.steps[k].action)
        if _normalize_ws(observation) != _normalize_ws(t.steps[k].observation):
            raise ReplayError(
                f"observation mismatch at step {k} of {t.id!r}: "
                f"environment said {observation!r}"
            )
        if done and k < step:
            raise ReplayError(
                f"episode of {t.id!r} ended at step {k} before requested step {step}"
            )
    return env.state.position


def _rollout_success(
    spec: MazeSpec,
    start: Cell,
    instruction: str,
    history: list[tuple[str, str, str]],
    policy: RolloutPolicy,
    rng: np.random.Generator,
) -> float:
    env = MazeEnv(spec)
    observation = env.reset(position=start)
    rollout_history = list(history)
    for _ in range(spec.max_rounds):
        action = policy.choose(instruction, rollout_history, observation, rng)
        observation, _, done = env.step(action)
        rollout_history.append(("", action, observation))
        if done:
            break
    return env.success


def _mc_step_reward(
    spec: MazeSpec,
    t: Trajectory,
    step: int,
    start: Cell,
    policy: RolloutPolicy,
    n_rollouts: int,
    seed: int,
) -> float:
    history = history_prefix(t, step + 1)
    total = 0.0
    for i in range(n_rollouts):
        rng = rng_from(seed, t.id, step, i)
        total += _rollout_success(spec, start, t.instruction, history, policy, rng)
    return total / n_rollouts


def estimate_step_reward(
    env: MazeEnv,
    t: Trajectory,
    step: int,
    policy: RolloutPolicy,
    n_rollouts: int,
    seed: int,
) -> float:
    """Monte-Carlo outcome estimate for one step of an expert trajectory.

    Terminal step: the recorded final reward, with zero rollouts.  Other
    steps: mean final reward of ``n_rollouts`` fresh rollouts from the
    post-action state, each capped at the environment's max-round limit.
    """
    if n_rollouts < 1:
        raise InvalidRolloutCountError(f"n_rollouts must be >= 1, got {n_rollouts}")
    if not 0 <= step < len(t.steps):
        raise ReplayError(f"step {step} out of range for {t.id!r}")
    if step == len(t.steps) - 1:
        if t.final_reward is None:
            raise ReplayError(
                f"trajectory {t.id!r} has no final reward for its terminal step"
            )
        return t.final_reward
    start = replay_to_step(env, t, step)
    return _mc_step_reward(env.spec, t, step, start, policy, n_rollouts, seed)


def discounted_values(r_hat: Sequence[float], gamma: float) -> list[float]:
    """values[t] = sum_{k>=t} gamma^(k-t) * r_hat[k], via a backward pass."""
    if not 0.0 < gamma <= 1.0:
        raise InvalidRatioError(f"gamma {gamma} outside (0, 1]")
    values = [0.0] * len(r_hat)
    acc = 0.0
    for k in range(len(r_hat) - 1, -1, -1):
        acc = r_hat[k] + gamma * acc
        values[k] = acc
    return values


def flag_by_value_gap(
    values: Sequence[float], threshold: float, mode: str = "absolute"
) -> list[int]:
    """Indices t >= 1 whose value moved by more than ``threshold``.

    The later step of the differing pair is flagged; its expert action is
    the one marked trainable downstream.  ``signed`` mode flags increases
    only (ablation aid); the default compares absolute differences.
    """
    if threshold <= 0:
        raise InvalidRatioError(f"threshold must be > 0, got {threshold}")
    if mode not in GAP_MODES:
        raise InvalidRatioError(f"unknown gap mode {mode!r}; expected {GAP_MODES}")
    out = []
    for k in range(1, len(values)):
        diff = values[k] - values[k - 1]
        gap = abs(diff) if mode == "absolute" else diff
        if gap > threshold:
            out.append(k)
    return out


def compute_value_profile(
    spec: MazeSpec,
    t: Trajectory,
    policy: RolloutPolicy,
    n_rollouts: int = 5,
    gamma: float = 0.99,
    threshold: float = 0.1,
    seed: int = 0,
    gap_mode: str = "absolute",
) -> ValueProfile:
    """Full per-trajectory profile: MC estimates, values, gaps, flags."""
    if n_rollouts < 1:
        raise InvalidRolloutCountError(f"n_rollouts must be >= 1, got {n_rollouts}")
    env = MazeEnv(spec)
    r_hat: list[float] = []
    last = len(t.steps) - 1
    for step in range(len(t.steps)):
        if step == last:
            if t.final_reward is None:
                raise ReplayError(
                    f"trajectory {t.id!r} has no final reward for its terminal step"
                )
            r_hat.append(t.final_reward)
        else:
            start = replay_to_step(env, t, step)
            r_hat.append(
                _mc_step_reward(spec, t, step, start, policy, n_rollouts, seed)
            )
    values = discounted_values(r_hat, gamma)
    gaps = [0.0] + [abs(values[k] - values[k - 1]) for k in range(1, len(values))]
    flagged = flag_by_value_gap(values, threshold, gap_mode)
    return ValueProfile(
        trajectory_id=t.id,
        r_hat=tuple(r_hat),
        values=tuple(values),
        gaps=tuple(gaps),
        flagged=tuple(flagged),
        n_rollouts=n_rollouts,
        gamma=gamma,
        threshold=threshold,
    )


def build_value_selection(
    t: Trajectory, profile: ValueProfile, seed: int | None = None
) -> CriticalSelection:
    """Selection from a value profile; no cap is applied to the flagged set.

    An empty flagged set falls back to the single largest-gap step so every
    trajectory contributes at least one trainable step.
    """
    if profile.trajectory_id != t.id:
        raise AlignmentError(
            f"profile is for {profile.trajectory_id!r}, trajectory is {t.id!r}"
        )
    if len(profile.values) != len(t.steps):
        raise AlignmentError(
            f"profile length {len(profile.values)} != T={len(t.steps)} for {t.id!r}"
        )
    indices = tuple(profile.flagged)
    plan_summary = None
    if not indices:
        if len(t.steps) == 1:
            indices = (0,)
        else:
            best = max(range(1, len(t.steps)), key=lambda k: profile.gaps[k])
            indices = (best,)
        plan_summary = (
            "value-gap fallback: no consecutive gap exceeded threshold "
            f"{profile.threshold}; selected the largest-gap step"
        )
    return CriticalSelection(
        trajectory_id=t.id,
        indices=indices,
        strategy="value",
        ratio=1.0,
        cap=len(t.steps),
        seed=seed,
        plan_summary=plan_summary,
    )


def exact_state_values(
    spec: MazeSpec,
    gamma: float = 1.0,
    policy=None,
    horizon: int | None = None,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> dict[tuple[Cell, int], float]:
    """Exact values over the finite (cell, rounds-left) state space.

    Value iteration to a fixed point (sup-norm residual < ``tol``), under a
    tabular policy exposing ``action_distribution(cell)``, or under the
    optimal policy when ``policy`` is None.  The goal-reaching transition
    pays reward 1 (discounted per elapsed step); with ``gamma=1`` the value
    of (cell, k) is exactly the probability of reaching the goal within k
    steps, matching the Monte-Carlo rollout semantics.
    """
    if policy is not None and not hasattr(policy, "action_distribution"):
        raise UnsupportedEnvironmentError(
            "exact values need a tabular policy with action_distribution()"
        )
    horizon = spec.max_rounds if horizon is None else horizon
    cells = spec.cells()
    values: dict[tuple[Cell, int], float] = {
        (cell, k): 0.0 for cell in cells for k in range(horizon + 1)
    }

    def backup(cell: Cell, k: int) -> float:
        if cell == spec.goal or k == 0:
            return 0.0
        if policy is None:
            best = 0.0
            for action in ACTIONS:
                nxt = move(spec, cell, action)
                q = 1.0 if nxt == spec.goal else gamma * values[(nxt, k - 1)]
                best = max(best, q)
            return best
        total = 0.0
        for action, prob in policy.action_distribution(cell).items():
            if prob == 0.0:
                continue
            nxt = move(spec, cell, action)
            total += prob * (1.0 if nxt == spec.goal else gamma * values[(nxt, k - 1)])
        return total

    for _ in range(max_iter):
        residual = 0.0
        for k in range(horizon + 1):
            for cell in cells:
                new = backup(cell, k)
                residual = max(residual, abs(new - values[(cell, k)]))
                values[(cell, k)] = new
        if residual < tol:
            return values
    raise UnsupportedEnvironmentError(
        f"value iteration did not converge within {max_iter} sweeps"
    )


def exact_step_outcomes(
    spec: MazeSpec, t: Trajectory, policy, gamma: float = 1.0
) -> list[float]:
    """Oracle counterpart of the per-step Monte-Carlo estimates."""
    table = exact_state_values(spec, gamma=gamma, policy=policy)
    env = MazeEnv(spec)
    out: list[float] = []
    last = len(t.steps) - 1
    for step in range(len(t.steps)):
        if step == last:
            if t.final_reward is None:
                raise ReplayError(f"trajectory {t.id!r} has no final reward")
            out.append(t.final_reward)
        else:
            position = replay_to_step(env, t, step)
            out.append(table[(position, spec.max_rounds)])
    return out


def profile_to_obj(p: ValueProfile) -> dict:
    return {
        "trajectory_id": p.trajectory_id,
        "r_hat": list(p.r_hat),
        "values": list(p.values),
        "gaps": list(p.gaps),
        "flagged": list(p.flagged),
        "N": p.n_rollouts,
        "gamma": p.gamma,
        "threshold": p.threshold,
    }


def profile_from_obj(obj: dict) -> ValueProfile:
    return ValueProfile(
        trajectory_id=str(obj["trajectory_id"]),
        r_hat=tuple(float(x) for x in obj["r_hat"]),
        values=tuple(float(x) for x in obj["values"]),
        gaps=tuple(float(x) for x in obj["gaps"]),
        flagged=tuple(int(i) for i in obj["flagged"]),
        n_rollouts=int(obj["N"]),
        gamma=float(obj["gamma"]),
        threshold=float(obj["threshold"]),
    )


def write_profiles(profiles: Iterable[ValueProfile], path: str | Path) -> None:
    lines = [json.dumps(profile_to_obj(p), ensure_ascii=False) for p in profiles]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def load_profiles(path: str | Path) -> dict[str, ValueProfile]:
    out: dict[str, ValueProfile] = {}
    for lineno, obj in _iter_jsonl(path):
        try:
            profile = profile_from_obj(obj)
        except (KeyError, TypeError, ValueError) as exc:
            raise FileFormatError(f"malformed line {lineno}: {exc!r}") from exc
        if profile.trajectory_id in out:
            raise DuplicateIdError(
                f"duplicate trajectory_id {profile.trajectory_id!r} on line {lineno}"
            )
        out[profile.trajectory_id] = profile
    return out


class ValueGapSelector(BaseSelector):
    """Value-gap selection over maze trajectories.

    ``specs`` maps trajectory id to its maze spec; rollouts use the noisy
    shortest-path policy with the configured epsilon.
    """

    def __init__(
        self,
        specs=None,
        n_rollouts: int = 5,
        gamma: float = 0.99,
        threshold: float = 0.1,
        epsilon: float = 0.35,
        seed: int = 0,
        gap_mode: str = "absolute",
    ):
        self.specs = specs
        self.n_rollouts = n_rollouts
        self.gamma = gamma
        self.threshold = threshold
        self.epsilon = epsilon
        self.seed = seed
        self.gap_mode = gap_mode

    def profile(self, trajectory: Trajectory) -> ValueProfile:
        if self.specs is None or trajectory.id not in self.specs:
            raise UnsupportedEnvironmentError(
                f"no maze spec provided for {trajectory.id!r}"
            )
        spec = self.specs[trajectory.id]
        policy = NoisyShortestPathPolicy(spec, self.epsilon)
        return compute_value_profile(
            spec,
            trajectory,
            policy,
            n_rollouts=self.n_rollouts,
            gamma=self.gamma,
            threshold=self.threshold,
            seed=self.seed,
            gap_mode=self.gap_mode,
        )

    def select(self, trajectory: Trajectory) -> CriticalSelection:
        return build_value_selection(
            trajectory, self.profile(trajectory), seed=self.seed
        )
