"""Parsing and serialization between chat-format files and the canonical model.

File formats (all JSON Lines, UTF-8, one record per line):

* trajectory file:
  ``{"id": str, "environment": str, "conversations": [{"role": "human"|"assistant",
  "content": str}, ...], "reward": number?}``
* selection file:
  ``{"trajectory_id": str, "strategy": str, "ratio": number, "cap": int,
  "seed": int?, "indices": [int, ...], "categories": {"<idx>": str}?,
  "plan_summary": str?}``
* logprob sidecar:
  ``{"trajectory_id": str, "steps": [[float, ...], ...]}`` with optional
  ``thought_steps`` / ``action_steps`` arrays of the same shape.

Assistant messages use the two-label grammar ``Thought:\\n<text>\\nAction:\\n<text>``
(labels case-insensitive, a single space after the colon tolerated).  A message
with only an ``Action:`` label has an empty thought; a message with neither
label is treated as a bare action.  The grammar cannot round-trip a thought
that itself contains an ``Action:`` label line.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import (
    DuplicateIdError,
    FileFormatError,
    MalformedRecordError,
    MalformedStepError,
)
from .trajectory import (
    CriticalSelection,
    Dataset,
    Step,
    StepCategory,
    Trajectory,
)

_ACTION_LABEL = re.compile(r"(?im)^[ \t]*action[ \t]*: ?[ \t]*\n?")
_THOUGHT_LABEL = re.compile(r"(?im)^[ \t]*thought[ \t]*: ?[ \t]*\n?")


@dataclass
class ChatRecord:
    """One raw dataset line: alternating human/assistant messages.

    The first human message is the task instruction; later human messages
    are environment observations.
    """

    id: str
    environment: str
    conversations: list[tuple[str, str]]
    reward: float | None = None


def parse_react_message(content: str) -> tuple[str, str]:
    """Split an assistant message into (thought, action).

    Total on non-empty text; raises only when the action comes out empty.
    """
    if not content:
        raise MalformedStepError("empty assistant message")
    m_action = _ACTION_LABEL.search(content)
    if m_action is None:
        action = content.strip()
        if not action:
            raise MalformedStepError("assistant message has no action text")
        return "", action
    action = content[m_action.end():].strip()
    head = content[: m_action.start()]
    m_thought = _THOUGHT_LABEL.search(head)
    thought = head[m_thought.end():].strip() if m_thought else head.strip()
    if not action:
        raise MalformedStepError("empty action after parsing")
    return thought, action


def render_react_message(thought: str, action: str) -> str:
    """Inverse of :func:`parse_react_message` for canonical serialization."""
    if thought:
        return f"Thought:\n{thought}\nAction:\n{action}"
    return f"Action:\n{action}"


def chat_to_trajectory(record: ChatRecord) -> Trajectory:
    """Convert a chat record into the canonical trajectory model."""
    conv = record.conversations
    if not conv:
        raise MalformedRecordError(f"record {record.id!r} has no messages")
    for pos, (role, _) in enumerate(conv):
        expected = "human" if pos % 2 == 0 else "assistant"
        if role != expected:
            raise MalformedRecordError(
                f"record {record.id!r}: expected {expected} at message {pos}, "
                f"got {role}"
            )
    instruction = conv[0][1]
    steps: list[Step] = []
    # Each (assistant, human) pair is one step; a trailing assistant message
    # becomes a terminal step with an empty observation.
    for pos in range(1, len(conv), 2):
        try:
            thought, action = parse_react_message(conv[pos][1])
        except MalformedStepError as exc:
            raise MalformedRecordError(
                f"record {record.id!r}, message {pos}: {exc.message}"
            ) from exc
        observation = conv[pos + 1][1] if pos + 1 < len(conv) else ""
        steps.append(Step(len(steps), thought, action, observation))
    if not steps:
        raise MalformedRecordError(f"record {record.id!r} has no steps")
    return Trajectory(
        id=record.id,
        environment=record.environment,
        instruction=instruction,
        steps=tuple(steps),
        final_reward=record.reward,
    )


def trajectory_to_chat(t: Trajectory) -> ChatRecord:
    """Render a trajectory back into chat format.

    A terminal step with an empty observation is written without a trailing
    human message, so chat_to_trajectory(trajectory_to_chat(t)) == t.
    """
    conv: list[tuple[str, str]] = [("human", t.instruction)]
    for pos, step in enumerate(t.steps):
        conv.append(("assistant", render_react_message(step.thought, step.action)))
        if step.observation or pos + 1 < len(t.steps):
            conv.append(("human", step.observation))
    return ChatRecord(
        id=t.id,
        environment=t.environment,
        conversations=conv,
        reward=t.final_reward,
    )


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file plus rename so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _iter_jsonl(path: str | Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FileFormatError(f"malformed line {lineno}: {exc}") from exc
            if not isinstance(obj, dict):
                raise FileFormatError(f"malformed line {lineno}: not an object")
            yield lineno, obj


def load_dataset(path: str | Path) -> Dataset:
    """Load a trajectory file; duplicate ids and malformed lines are errors."""
    trajectories: list[Trajectory] = []
    seen: dict[str, int] = {}
    for lineno, obj in _iter_jsonl(path):
        try:
            record = ChatRecord(
                id=str(obj["id"]),
                environment=str(obj.get("environment", "")),
                conversations=[
                    (str(m["role"]), str(m["content"]))
                    for m in obj["conversations"]
                ],
                reward=None if obj.get("reward") is None else float(obj["reward"]),
            )
        except (KeyError, TypeError) as exc:
            raise FileFormatError(f"malformed line {lineno}: {exc!r}") from exc
        if record.id in seen:
            raise DuplicateIdError(
                f"duplicate id {record.id!r} on line {lineno} "
                f"(first seen on line {seen[record.id]})"
            )
        seen[record.id] = lineno
        try:
            trajectories.append(chat_to_trajectory(record))
        except MalformedRecordError as exc:
            raise MalformedRecordError(f"line {lineno}: {exc.message}") from exc
    return Dataset(trajectories=trajectories)


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    lines = []
    for t in dataset.trajectories:
        record = trajectory_to_chat(t)
        obj: dict = {
            "id": record.id,
            "environment": record.environment,
            "conversations": [
                {"role": role, "content": content}
                for role, content in record.conversations
            ],
        }
        if record.reward is not None:
            obj["reward"] = record.reward
        lines.append(json.dumps(obj, ensure_ascii=False))
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def selection_to_obj(s: CriticalSelection) -> dict:
    obj: dict = {
        "trajectory_id": s.trajectory_id,
        "strategy": s.strategy,
        "ratio": s.ratio,
        "cap": s.cap,
        "indices": list(s.indices),
    }
    if s.seed is not None:
        obj["seed"] = s.seed
    if s.categories:
        obj["categories"] = {
            str(k): v.value for k, v in sorted(s.categories.items())
        }
    if s.plan_summary is not None:
        obj["plan_summary"] = s.plan_summary
    return obj


def selection_from_obj(obj: dict) -> CriticalSelection:
    categories = {
        int(k): StepCategory(v) for k, v in (obj.get("categories") or {}).items()
    }
    return CriticalSelection(
        trajectory_id=str(obj["trajectory_id"]),
        indices=tuple(int(i) for i in obj["indices"]),
        strategy=str(obj["strategy"]),
        ratio=float(obj["ratio"]),
        cap=int(obj["cap"]),
        categories=categories,
        seed=None if obj.get("seed") is None else int(obj["seed"]),
        plan_summary=obj.get("plan_summary"),
    )


def write_selections(selections: Iterable[CriticalSelection], path: str | Path) -> None:
    lines = [json.dumps(selection_to_obj(s), ensure_ascii=False) for s in selections]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def load_selections(path: str | Path) -> dict[str, CriticalSelection]:
    out: dict[str, CriticalSelection] = {}
    for lineno, obj in _iter_jsonl(path):
        try:
            sel = selection_from_obj(obj)
        except (KeyError, ValueError, TypeError) as exc:
            raise FileFormatError(f"malformed line {lineno}: {exc!r}") from exc
        if sel.trajectory_id in out:
            raise DuplicateIdError(
                f"duplicate trajectory_id {sel.trajectory_id!r} on line {lineno}"
            )
        out[sel.trajectory_id] = sel
    return out


@dataclass
class StepLogprobs:
    """Per-step token log-probabilities (natural log, each <= 0).

    ``per_step`` is aligned with the trajectory's step indices and covers
    the thought+action tokens of each step.  ``thought_only`` and
    ``action_only`` optionally carry the per-span decompositions.
    """

    trajectory_id: str
    per_step: list[list[float]]
    thought_only: list[list[float]] | None = None
    action_only: list[list[float]] | None = None


def load_logprobs(path: str | Path) -> dict[str, StepLogprobs]:
    out: dict[str, StepLogprobs] = {}
    for lineno, obj in _iter_jsonl(path):
        try:
            lp = StepLogprobs(
                trajectory_id=str(obj["trajectory_id"]),
                per_step=[[float(x) for x in step] for step in obj["steps"]],
                thought_only=(
                    [[float(x) for x in step] for step in obj["thought_steps"]]
                    if "thought_steps" in obj
                    else None
                ),
                action_only=(
                    [[float(x) for x in step] for step in obj["action_steps"]]
                    if "action_steps" in obj
                    else None
                ),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FileFormatError(f"malformed line {lineno}: {exc!r}") from exc
        if lp.trajectory_id in out:
            raise DuplicateIdError(
                f"duplicate trajectory_id {lp.trajectory_id!r} on line {lineno}"
            )
        out[lp.trajectory_id] = lp
    return out


def write_logprobs(logprobs: Iterable[StepLogprobs], path: str | Path) -> None:
    lines = []
    for lp in logprobs:
        obj: dict = {"trajectory_id": lp.trajectory_id, "steps": lp.per_step}
        if lp.thought_only is not None:
            obj["thought_steps"] = lp.thought_only
        if lp.action_only is not None:
            obj["action_steps"] = lp.action_only
        lines.append(json.dumps(obj, ensure_ascii=False))
    atomic_write_text(path, "".join(line + "\n" for line in lines))
