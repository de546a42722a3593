"""Perplexity-ranked, random, and non-critical-complement selection.

Perplexity of a step is the exponentiated average negative log-likelihood
of its tokens under a scoring model; the logprobs arrive via a sidecar
file so this module stays offline-testable.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

from ..errors import (
    AlignmentError,
    EmptyStepError,
    InvalidLogprobError,
    NoComplementError,
    SelectionMismatchError,
)
from ..io import StepLogprobs
from ..seeding import rng_from
from ..trajectory import CriticalSelection, Trajectory, selection_cap
from .base import BaseSelector

PPL_SPANS = ("joint", "thought", "action")


def perplexity(step_logprobs: Sequence[float]) -> float:
    """exp(-mean(logprobs)); always >= 1 for valid (<= 0) natural-log inputs."""
    if len(step_logprobs) == 0:
        raise EmptyStepError("step has no token logprobs")
    for lp in step_logprobs:
        if lp > 0:
            raise InvalidLogprobError(f"positive logprob {lp}")
    return math.exp(-sum(step_logprobs) / len(step_logprobs))


def _span_logprobs(lp: StepLogprobs, span: str) -> list[list[float]]:
    if span == "joint":
        return lp.per_step
    if span == "thought":
        if lp.thought_only is None:
            raise AlignmentError(
                f"logprobs for {lp.trajectory_id!r} carry no thought-only spans"
            )
        return lp.thought_only
    if span == "action":
        if lp.action_only is None:
            raise AlignmentError(
                f"logprobs for {lp.trajectory_id!r} carry no action-only spans"
            )
        return lp.action_only
    raise AlignmentError(f"unknown span {span!r}; expected one of {PPL_SPANS}")


def select_top_perplexity(
    t: Trajectory, lp: StepLogprobs, ratio: float, span: str = "joint"
) -> CriticalSelection:
    """Select the highest-perplexity steps, ties broken by lower index."""
    if lp.trajectory_id != t.id:
        raise AlignmentError(
            f"logprobs are for {lp.trajectory_id!r}, trajectory is {t.id!r}"
        )
    per_step = _span_logprobs(lp, span)
    if len(per_step) != len(t.steps):
        raise AlignmentError(
            f"{len(per_step)} logprob rows for {len(t.steps)} steps in {t.id!r}"
        )
    cap = selection_cap(ratio, len(t.steps))
    ppls = [perplexity(row) for row in per_step]
    ranked = sorted(range(len(ppls)), key=lambda i: (-ppls[i], i))
    return CriticalSelection(
        trajectory_id=t.id,
        indices=tuple(sorted(ranked[:cap])),
        strategy="perplexity",
        ratio=ratio,
        cap=cap,
    )


def select_random(t: Trajectory, ratio: float, seed: int) -> CriticalSelection:
    """Uniform sample of exactly ``cap`` step indices, without replacement.

    The draw is seeded by mix(seed, trajectory_id), so it is independent of
    dataset ordering and parallel scheduling.
    """
    cap = selection_cap(ratio, len(t.steps))
    rng = rng_from(seed, t.id)
    picked = rng.choice(len(t.steps), size=cap, replace=False)
    return CriticalSelection(
        trajectory_id=t.id,
        indices=tuple(sorted(int(i) for i in picked)),
        strategy="random",
        ratio=ratio,
        cap=cap,
        seed=seed,
    )


def full_selection(t: Trajectory) -> CriticalSelection:
    """Every step selected: the complete-trajectory baseline."""
    return CriticalSelection(
        trajectory_id=t.id,
        indices=tuple(range(len(t.steps))),
        strategy="random",
        ratio=1.0,
        cap=len(t.steps),
    )


def select_noncritical(
    t: Trajectory, critical: CriticalSelection, seed: int
) -> CriticalSelection:
    """Sample from the complement of a critical selection, count-matched.

    Draws min(|critical|, T - |critical|) indices so the training-step count
    stays comparable to the critical dataset.
    """
    if critical.trajectory_id != t.id:
        raise SelectionMismatchError(
            f"selection is for {critical.trajectory_id!r}, trajectory is {t.id!r}"
        )
    if any(i >= len(t.steps) for i in critical.indices):
        raise SelectionMismatchError(
            f"critical selection index out of range for {t.id!r}"
        )
    complement = sorted(set(range(len(t.steps))) - set(critical.indices))
    if not complement:
        raise NoComplementError(
            f"no non-critical steps left in trajectory {t.id!r}"
        )
    count = min(len(critical.indices), len(complement))
    rng = rng_from(seed, t.id, "noncritical")
    picked = rng.choice(len(complement), size=count, replace=False)
    return CriticalSelection(
        trajectory_id=t.id,
        indices=tuple(sorted(complement[int(i)] for i in picked)),
        strategy="noncritical",
        ratio=critical.ratio,
        cap=max(1, count),
        seed=seed,
    )


class PerplexitySelector(BaseSelector):
    """Top-perplexity selection backed by a logprob sidecar mapping."""

    def __init__(
        self,
        ratio: float = 0.3,
        logprobs: Mapping[str, StepLogprobs] | None = None,
        span: str = "joint",
    ):
        self.ratio = ratio
        self.logprobs = logprobs
        self.span = span

    def select(self, trajectory: Trajectory) -> CriticalSelection:
        if self.logprobs is None or trajectory.id not in self.logprobs:
            raise AlignmentError(f"no logprobs provided for {trajectory.id!r}")
        return select_top_perplexity(
            trajectory, self.logprobs[trajectory.id], self.ratio, self.span
        )


class RandomSelector(BaseSelector):
    def __init__(self, ratio: float = 0.3, seed: int = 0):
        self.ratio = ratio
        self.seed = seed

    def select(self, trajectory: Trajectory) -> CriticalSelection:
        return select_random(trajectory, self.ratio, self.seed)


class NonCriticalSelector(BaseSelector):
    """Complement sampler; ``critical`` maps trajectory id to its selection."""

    def __init__(
        self,
        critical: Mapping[str, CriticalSelection] | None = None,
        seed: int = 0,
    ):
        self.critical = critical
        self.seed = seed

    def select(self, trajectory: Trajectory) -> CriticalSelection:
        if self.critical is None or trajectory.id not in self.critical:
            raise SelectionMismatchError(
                f"no critical selection provided for {trajectory.id!r}"
            )
        return select_noncritical(
            trajectory, self.critical[trajectory.id], self.seed
        )
