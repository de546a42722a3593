"""Loss-masked training dataset emission.

The whole trajectory is preserved as conditioning context; only the steps a
selection marked critical carry a train flag.  Downstream trainers turn a
train=true turn into trainable tokens for that turn's thought and action
(always both together); observations are environment output and are never
trainable.  Masking granularity in the emitted file is per turn — token
level masks are trainer-specific and out of scope.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import FileFormatError, MissingSelectionError
from .io import _iter_jsonl, atomic_write_text
from .trajectory import (
    CriticalSelection,
    Dataset,
    StepCategory,
    Trajectory,
    apply_selection,
)

SYSTEM_CONTEXT_TEMPLATE = (
    "You are an agent interacting with the {environment} environment. At "
    "each turn, first state your reasoning on a line starting with "
    "'Thought:' and then issue your command on a line starting with "
    "'Action:'. The environment replies with an observation."
)

# Conventional LLM fine-tuning settings, recorded in emitted metadata as
# documentation for downstream trainers.  This toolkit never trains an LLM.
INFORMATIONAL_TRAINING_DEFAULTS = {
    "learning_rate": 2e-5,
    "epochs": 3,
    "batch_size": 128,
    "max_length": 8192,
}


@dataclass(frozen=True)
class MaskedTurn:
    thought: str
    action: str
    observation: str
    train: bool


@dataclass(frozen=True)
class MaskedSample:
    """One serialized training record: full context, per-turn train flags."""

    trajectory_id: str
    system_context: str
    instruction: str
    turns: tuple[MaskedTurn, ...]
    metadata: dict = field(default_factory=dict)


def build_masked_sample(
    t: Trajectory,
    selection: CriticalSelection,
    selector_model: str | None = None,
) -> MaskedSample:
    flags = apply_selection(t, selection)
    metadata: dict = {
        "strategy": selection.strategy,
        "ratio": selection.ratio,
        "cap": selection.cap,
        "seed": selection.seed,
        "informational_training_defaults": dict(INFORMATIONAL_TRAINING_DEFAULTS),
    }
    if selector_model is not None:
        metadata["selector_model"] = selector_model
    if not any(flags):
        metadata["degenerate"] = True
    turns = tuple(
        MaskedTurn(s.thought, s.action, s.observation, flags[s.index])
        for s in t.steps
    )
    return MaskedSample(
        trajectory_id=t.id,
        system_context=SYSTEM_CONTEXT_TEMPLATE.format(environment=t.environment),
        instruction=t.instruction,
        turns=turns,
        metadata=metadata,
    )


def sample_to_obj(sample: MaskedSample) -> dict:
    return {
        "trajectory_id": sample.trajectory_id,
        "system_context": sample.system_context,
        "instruction": sample.instruction,
        "turns": [
            {
                "thought": turn.thought,
                "action": turn.action,
                "observation": turn.observation,
                "train": turn.train,
            }
            for turn in sample.turns
        ],
        "metadata": sample.metadata,
    }


def sample_from_obj(obj: dict) -> MaskedSample:
    return MaskedSample(
        trajectory_id=str(obj["trajectory_id"]),
        system_context=str(obj.get("system_context", "")),
        instruction=str(obj["instruction"]),
        turns=tuple(
            MaskedTurn(
                thought=str(turn.get("thought", "")),
                action=str(turn["action"]),
                observation=str(turn.get("observation", "")),
                train=bool(turn["train"]),
            )
            for turn in obj["turns"]
        ),
        metadata=dict(obj.get("metadata", {})),
    )


def load_masked_samples(path: str | Path) -> list[MaskedSample]:
    samples = []
    for lineno, obj in _iter_jsonl(path):
        try:
            samples.append(sample_from_obj(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise FileFormatError(f"malformed line {lineno}: {exc!r}") from exc
    return samples


@dataclass
class EmissionReport:
    samples: int = 0
    total_steps: int = 0
    trained_steps: int = 0
    category_counts: dict[str, int] = field(default_factory=dict)

    @property
    def realized_ratio(self) -> float:
        return self.trained_steps / self.total_steps if self.total_steps else 0.0

    def to_obj(self) -> dict:
        return {
            "samples": self.samples,
            "total_steps": self.total_steps,
            "trained_steps": self.trained_steps,
            "realized_ratio": self.realized_ratio,
            "category_counts": dict(sorted(self.category_counts.items())),
        }


def emit_masked_dataset(
    dataset: Dataset,
    selections: Mapping[str, CriticalSelection],
    out_path: str | Path,
    selector_model: str | None = None,
) -> EmissionReport:
    """Write one masked sample per trajectory; every trajectory needs a selection."""
    report = EmissionReport()
    lines = []
    for t in dataset.trajectories:
        selection = selections.get(t.id)
        if selection is None:
            raise MissingSelectionError(f"no selection for trajectory {t.id!r}")
        sample = build_masked_sample(t, selection, selector_model=selector_model)
        lines.append(json.dumps(sample_to_obj(sample), ensure_ascii=False))
        report.samples += 1
        report.total_steps += len(sample.turns)
        report.trained_steps += sum(turn.train for turn in sample.turns)
        for category in selection.categories.values():
            report.category_counts[category.value] = (
                report.category_counts.get(category.value, 0) + 1
            )
    atomic_write_text(out_path, "".join(line + "\n" for line in lines))
    return report


@dataclass
class StatsReport:
    """Selection accounting: realized ratios, categories, provenance."""

    n_selections: int = 0
    n_selected_steps: int = 0
    strategy_counts: dict[str, int] = field(default_factory=dict)
    category_counts: dict[str, int] = field(default_factory=dict)
    per_trajectory_ratio: dict[str, float] = field(default_factory=dict)

    @property
    def mean_realized_ratio(self) -> float | None:
        if not self.per_trajectory_ratio:
            return None
        return sum(self.per_trajectory_ratio.values()) / len(
            self.per_trajectory_ratio
        )

    def to_obj(self) -> dict:
        obj = {
            "n_selections": self.n_selections,
            "n_selected_steps": self.n_selected_steps,
            "strategy_counts": dict(sorted(self.strategy_counts.items())),
            "category_counts": dict(sorted(self.category_counts.items())),
        }
        if self.per_trajectory_ratio:
            obj["per_trajectory_ratio"] = dict(
                sorted(self.per_trajectory_ratio.items())
            )
            obj["mean_realized_ratio"] = self.mean_realized_ratio
        return obj

    def to_text(self) -> str:
        lines = [
            f"selections: {self.n_selections}",
            f"selected steps: {self.n_selected_steps}",
        ]
        for strategy, count in sorted(self.strategy_counts.items()):
            lines.append(f"strategy {strategy}: {count}")
        for category, count in sorted(self.category_counts.items()):
            lines.append(f"category {category}: {count}")
        if self.per_trajectory_ratio:
            lines.append(f"mean realized ratio: {self.mean_realized_ratio:.4f}")
        return "\n".join(lines) + "\n"


def dataset_stats(
    selections: Mapping[str, CriticalSelection],
    dataset: Dataset | None = None,
) -> StatsReport:
    report = StatsReport()
    lengths = (
        {t.id: len(t.steps) for t in dataset.trajectories} if dataset else {}
    )
    for trajectory_id, selection in selections.items():
        report.n_selections += 1
        report.n_selected_steps += len(selection.indices)
        report.strategy_counts[selection.strategy] = (
            report.strategy_counts.get(selection.strategy, 0) + 1
        )
        for category in selection.categories.values():
            report.category_counts[category.value] = (
                report.category_counts.get(category.value, 0) + 1
            )
        if trajectory_id in lengths:
            report.per_trajectory_ratio[trajectory_id] = len(
                selection.indices
            ) / lengths[trajectory_id]
    return report


def concatenated_text(sample: MaskedSample) -> str:
    """All turn text in order, used to check emission preserves context."""
    parts = []
    for turn in sample.turns:
        parts.extend([turn.thought, turn.action, turn.observation])
    return "\n".join(parts)


def concatenated_trajectory_text(t: Trajectory) -> str:
    parts = []
    for step in t.steps:
        parts.extend([step.thought, step.action, step.observation])
    return "\n".join(parts)
