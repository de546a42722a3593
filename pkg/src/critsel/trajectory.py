"""Canonical in-memory trajectory model and selection-cap arithmetic.

A trajectory is an instruction plus an ordered list of steps, each step
being a (thought, action, observation) triple recorded from one episode.
Selections mark a subset of step indices as critical; the cap rule bounds
how many steps any strategy may mark.

All types are immutable after construction and all operations are pure,
so they are safe to share across concurrent workers.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

from .errors import (
    EmptyTrajectoryError,
    InvalidRatioError,
    OutOfRangeError,
    SelectionMismatchError,
)

STRATEGIES = ("llm", "perplexity", "random", "value", "noncritical")


class StepCategory(enum.Enum):
    """The four kinds of critical step a selector may assign."""

    PLAN_CREATION = "PlanCreation"
    CRITICAL_OBSERVATION = "CriticalObservation"
    CRITICAL_ACTION = "CriticalAction"
    SELF_CORRECTION = "SelfCorrection"


@dataclass(frozen=True)
class Step:
    """One environment interaction: reasoning, command, and the reply.

    ``observation`` is what the environment returned after ``action``; it is
    empty only for a terminal step whose episode ended without a reply.
    """

    index: int
    thought: str
    action: str
    observation: str


@dataclass(frozen=True)
class Trajectory:
    """A recorded episode: instruction plus ordered steps.

    ``final_reward`` is the episode outcome in [0, 1] when known.
    """

    id: str
    environment: str
    instruction: str
    steps: tuple[Step, ...]
    final_reward: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class CriticalSelection:
    """A per-trajectory set of selected step indices with provenance.

    ``indices`` are strictly ascending step ordinals; ``cap`` is the maximum
    number of steps the producing strategy was allowed to mark.  Categories
    are optional metadata (typically present only for the LLM strategy).
    """

    trajectory_id: str
    indices: tuple[int, ...]
    strategy: str
    ratio: float
    cap: int
    categories: dict[int, StepCategory] = field(default_factory=dict)
    seed: int | None = None
    plan_summary: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        if self.strategy not in STRATEGIES:
            raise SelectionMismatchError(f"unknown strategy {self.strategy!r}")
        if not 0.0 < self.ratio <= 1.0:
            raise InvalidRatioError(f"ratio {self.ratio} outside (0, 1]")
        if self.cap < 1:
            raise SelectionMismatchError(f"cap must be >= 1, got {self.cap}")
        if len(self.indices) > self.cap:
            raise SelectionMismatchError(
                f"{len(self.indices)} indices exceed cap {self.cap}"
            )
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise SelectionMismatchError("indices must be strictly ascending")
        if self.indices and self.indices[0] < 0:
            raise SelectionMismatchError("negative step index")
        if any(k not in self.indices for k in self.categories):
            raise SelectionMismatchError("category key outside selected indices")


@dataclass
class Dataset:
    """Trajectories plus (optionally) their selections, keyed by id."""

    trajectories: list[Trajectory]
    selections: dict[str, CriticalSelection] = field(default_factory=dict)

    def __post_init__(self):
        ids = {t.id for t in self.trajectories}
        for key in self.selections:
            if key not in ids:
                raise SelectionMismatchError(
                    f"selection for unknown trajectory id {key!r}"
                )

    def __len__(self) -> int:
        return len(self.trajectories)

    def by_id(self, trajectory_id: str) -> Trajectory:
        for t in self.trajectories:
            if t.id == trajectory_id:
                return t
        raise KeyError(trajectory_id)


def validate_trajectory(t: Trajectory) -> list[str]:
    """Check every trajectory/step invariant and report violations.

    Returns an empty list iff the trajectory is valid.  Entries name the
    offending field and position so callers can point at the source record.
    """
    report: list[str] = []
    if not t.id:
        report.append("id is empty")
    if not t.steps:
        report.append("steps is empty")
    for pos, step in enumerate(t.steps):
        if step.index != pos:
            report.append(f"index gap at position {pos}")
        if not step.action:
            report.append(f"empty action at position {pos}")
    if t.final_reward is not None and not 0.0 <= t.final_reward <= 1.0:
        report.append("final_reward out of [0,1]")
    return report


def selection_cap(ratio: float, length: int) -> int:
    """Maximum number of selectable steps for a trajectory of ``length``.

    floor(ratio * length) honors the "at most" reading of the ratio; the
    minimum of 1 guarantees every trajectory contributes training signal.
    """
    if not 0.0 < ratio <= 1.0:
        raise InvalidRatioError(f"ratio {ratio} outside (0, 1]")
    if length < 1:
        raise EmptyTrajectoryError("trajectory has no steps")
    return max(1, math.floor(ratio * length))


def history_prefix(t: Trajectory, upto: int) -> list[tuple[str, str, str]]:
    """The first ``upto`` steps as (thought, action, observation) triples."""
    if upto < 0 or upto > len(t.steps):
        raise OutOfRangeError(
            f"prefix length {upto} outside [0, {len(t.steps)}] for {t.id!r}"
        )
    return [(s.thought, s.action, s.observation) for s in t.steps[:upto]]


def apply_selection(t: Trajectory, s: CriticalSelection) -> list[bool]:
    """Per-step train flags: True exactly at the selected indices.

    Flags govern thought+action only; observations are environment output
    and are never trainable regardless of flags.
    """
    if s.trajectory_id != t.id:
        raise SelectionMismatchError(
            f"selection is for {s.trajectory_id!r}, trajectory is {t.id!r}"
        )
    if any(i >= len(t.steps) for i in s.indices):
        raise SelectionMismatchError(
            f"selection index out of range for trajectory {t.id!r} "
            f"(T={len(t.steps)})"
        )
    if not s.indices:
        warnings.warn(f"empty selection applied to trajectory {t.id!r}")
    chosen = set(s.indices)
    return [i in chosen for i in range(len(t.steps))]
