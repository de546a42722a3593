"""Oracle-LLM critical-step selection over a chat-completions endpoint.

The prompt defines the four critical-step categories, asks for a high-level
plan, a bounded list of critical steps, and a categorized justification,
and renders the trajectory as a 1-based numbered conversation.  Responses
are parsed back into 0-based step indices; the conversion between bases is
localized to this module.

Requests are cached on disk keyed by a content hash of (model, prompt), so
prompt edits invalidate correctly and warm-cache runs are deterministic and
network-free.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import requests

from ..errors import (
    ConfigurationError,
    SelectorUnavailableError,
    TransportError,
    UnparseableResponseError,
)
from ..io import atomic_write_text, selection_from_obj, selection_to_obj
from ..trajectory import (
    CriticalSelection,
    StepCategory,
    Trajectory,
    selection_cap,
)
from .base import BaseSelector

PLAN_MARKER = "The high-level plan is:"
STEPS_MARKER = "The critical steps are:"
REASON_MARKER = "Reason:"

CATEGORY_DEFINITIONS = (
    (
        "Plan Creation: Steps where the LLM agent formulates sub-goals by "
        "analyzing previous observations and considering the final objective, "
        "breaking down the larger goal into manageable tasks that guide the "
        "agent's actions towards the overall outcome."
    ),
    (
        "Critical Observation: Steps where the LLM agent identifies and "
        "analyzes key information from the environment, which help agent "
        "understand the objective or state and refine its strategy and "
        "decision-making towards more effective outcomes."
    ),
    (
        "Critical Action: Steps where the LLM agent takes decisive and "
        "impactful actions based on prior observations, significantly "
        "advancing the process toward the final objectives. These actions are "
        "crucial in shaping the direction of the agent's strategy and are "
        "often pivotal moments that determine progress or failure, ensuring "
        "that the agent remains on track to achieve the desired outcome."
    ),
    (
        "Self Correction: Steps where the LLM agent carefully recalls and "
        "assesses its previous actions or decisions, especially after "
        "encountering failure or suboptimal outcomes. During this process, "
        "the agent reflects on what went wrong, identifies areas for "
        "improvement, and adjusts its approach to enhance future performance, "
        "which helps the agent refine its decision-making and better align "
        "with the overall objective."
    ),
)

DEFAULT_TEMPLATE = (
    "A critical step is defined as a key action or decision that, if "
    "performed correctly, significantly increases the likelihood of "
    "successfully completing the task. It represents a turning point in the "
    "process that influences the outcome of subsequent actions. More "
    "specifically, critical steps include:\n"
    "{category_definitions}\n"
    "\n"
    "Task Description: Your task is:\n"
    "1. Induce a high-level plan or strategy based on the expert "
    "conversation, summarizing the key steps needed to successfully complete "
    "the task.\n"
    "2. Based on this high-level plan, identify the most critical action "
    "steps in the expert conversation, ensuring the number of selected steps "
    "does not exceed {max_steps}.\n"
    "3. Provide a detailed explanation for choosing these critical steps, "
    "specifying which category (e.g., key observation, planning, recall, "
    "pivotal action) they belong to and why mastering these steps ensures "
    "the success of the task.\n"
    "\n"
    "Answer Format:\n"
    "1. The high-level plan is: [Summarize the strategy and key steps for "
    "task completion]\n"
    "2. The critical steps are: conversation[...]\n"
    "3. Reason: [Explain why these steps are critical, including which "
    "category they fall into (key observation, planning, recall, pivotal "
    "action) and how they enable the player to avoid mistakes in subsequent "
    "steps]\n"
    "\n"
    "Expert conversation:\n"
    "Task instruction: {instruction}\n"
    "\n"
    "{conversation}"
)

# Canonical category names first, then the aliases the answer-format hints at.
_CATEGORY_KEYWORDS: tuple[tuple[str, StepCategory], ...] = (
    ("plan creation", StepCategory.PLAN_CREATION),
    ("critical observation", StepCategory.CRITICAL_OBSERVATION),
    ("critical action", StepCategory.CRITICAL_ACTION),
    ("self correction", StepCategory.SELF_CORRECTION),
    ("self-correction", StepCategory.SELF_CORRECTION),
    ("key observation", StepCategory.CRITICAL_OBSERVATION),
    ("pivotal action", StepCategory.CRITICAL_ACTION),
    ("planning", StepCategory.PLAN_CREATION),
    ("recall", StepCategory.SELF_CORRECTION),
)
_CATEGORY_RE = re.compile(
    "|".join(re.escape(k) for k, _ in _CATEGORY_KEYWORDS), re.IGNORECASE
)
_CATEGORY_BY_KEYWORD = {k: v for k, v in _CATEGORY_KEYWORDS}

_CONV_BLOCK_RE = re.compile(r"conversation\s*\[([^\]]*)\]", re.IGNORECASE)
_INDEX_TOKEN_RE = re.compile(r"(\d+)\s*-\s*(\d+)|(\d+)")


@dataclass(frozen=True)
class SelectorPromptConfig:
    """Prompt construction settings for the LLM selector."""

    ratio: float = 0.3
    category_definitions: tuple[str, ...] = CATEGORY_DEFINITIONS
    template: str = DEFAULT_TEMPLATE
    observation_limit: int = 2000

    def __post_init__(self):
        for marker in (PLAN_MARKER, STEPS_MARKER, REASON_MARKER):
            if marker not in self.template:
                raise ConfigurationError(
                    f"prompt template lacks required marker {marker!r}"
                )


@dataclass(frozen=True)
class EndpointConfig:
    """Where and how to reach the chat-completions endpoint."""

    base_url: str = ""
    model_name: str = "gpt-4o"
    api_key_env_var: str = "CRITSEL_API_KEY"
    max_retries: int = 2
    timeout_s: float = 60.0
    temperature: float = 0.0
    backoff_s: float = 0.5

    def __post_init__(self):
        if self.max_retries < 0:
            raise ConfigurationError("max_retries must be >= 0")
        if self.timeout_s <= 0:
            raise ConfigurationError("timeout_s must be > 0")


@dataclass(frozen=True)
class SelectorResponse:
    """Parsed selector answer.

    ``indices`` are 0-based and ascending; ``listed`` preserves the model's
    listing order (the only importance signal available when the cap forces
    truncation).  ``notes`` records parse anomalies such as dropped
    out-of-range indices.
    """

    raw: str
    plan_summary: str
    indices: tuple[int, ...]
    categories: dict[int, StepCategory] = field(default_factory=dict)
    truncated: bool = False
    listed: tuple[int, ...] = ()
    notes: tuple[str, ...] = ()


def _truncate(text: str, limit: int) -> str:
    if limit <= 0 or len(text) <= limit:
        return text
    return text[:limit] + " ...[truncated]"


def render_conversation(t: Trajectory, observation_limit: int = 2000) -> str:
    """Number the trajectory as conversation[1..T] blocks for the prompt."""
    parts = []
    for step in t.steps:
        parts.append(
            f"conversation[{step.index + 1}]:\n"
            f"Thought: {step.thought}\n"
            f"Action: {step.action}\n"
            f"Observation: {_truncate(step.observation, observation_limit)}"
        )
    return "\n\n".join(parts)


def build_prompt(t: Trajectory, cfg: SelectorPromptConfig) -> str:
    cap = selection_cap(cfg.ratio, len(t.steps))
    definitions = "\n".join(f"- {d}" for d in cfg.category_definitions)
    return cfg.template.format(
        category_definitions=definitions,
        max_steps=cap,
        instruction=t.instruction,
        conversation=render_conversation(t, cfg.observation_limit),
    )


def _harvest_indices(segment: str) -> tuple[list[int], list[str]]:
    """1-based indices in listing order from the critical-steps segment."""
    notes: list[str] = []
    blocks = _CONV_BLOCK_RE.findall(segment)
    scan_targets = blocks if blocks else [segment]
    listed: list[int] = []
    for target in scan_targets:
        for m in _INDEX_TOKEN_RE.finditer(target):
            if m.group(3) is not None:
                listed.append(int(m.group(3)))
            else:
                lo, hi = int(m.group(1)), int(m.group(2))
                if hi < lo:
                    notes.append(f"ignored inverted range {lo}-{hi}")
                    continue
                listed.extend(range(lo, hi + 1))
    return listed, notes


def parse_response(raw: str, T: int) -> SelectorResponse:
    """Extract the plan, the 0-based step indices, and per-index categories.

    Raises unparseable-response when the critical-steps marker is missing or
    no valid index survives range checking; such responses are retried.
    """
    if not raw or not raw.strip():
        raise UnparseableResponseError("empty selector response")
    lowered = raw.lower()
    steps_at = lowered.find(STEPS_MARKER.lower())
    if steps_at < 0:
        raise UnparseableResponseError(
            f"response lacks the {STEPS_MARKER!r} marker"
        )
    seg_start = steps_at + len(STEPS_MARKER)
    reason_at = lowered.find(REASON_MARKER.lower(), seg_start)
    segment = raw[seg_start : reason_at if reason_at >= 0 else len(raw)]

    listed_1based, notes = _harvest_indices(segment)
    listed: list[int] = []
    for k in listed_1based:
        idx = k - 1
        if idx < 0 or idx >= T:
            notes.append(f"dropped out-of-range index conversation[{k}]")
        elif idx not in listed:
            listed.append(idx)
    if not listed:
        raise UnparseableResponseError(
            "no valid step indices in the critical-steps segment"
        )

    plan = ""
    plan_at = lowered.find(PLAN_MARKER.lower())
    if 0 <= plan_at < steps_at:
        plan = raw[plan_at + len(PLAN_MARKER) : steps_at]
        plan = re.sub(r"[\s*]*\d+[.)][\s*]*$", "", plan).strip().strip("*").strip()
        plan = plan.strip("[]").strip()

    categories: dict[int, StepCategory] = {}
    if reason_at >= 0:
        reason_segment = raw[reason_at:]
        keyword_hits = [
            (m.start(), _CATEGORY_BY_KEYWORD[m.group(0).lower()])
            for m in _CATEGORY_RE.finditer(reason_segment)
        ]
        if keyword_hits:
            for idx in listed:
                mention = re.search(
                    rf"conversation\s*\[\s*{idx + 1}\s*\]",
                    reason_segment,
                    re.IGNORECASE,
                )
                if mention is None:
                    continue
                center = (mention.start() + mention.end()) // 2
                _, category = min(
                    keyword_hits, key=lambda hit: abs(hit[0] - center)
                )
                categories[idx] = category

    return SelectorResponse(
        raw=raw,
        plan_summary=plan,
        indices=tuple(sorted(listed)),
        categories=categories,
        truncated=False,
        listed=tuple(listed),
        notes=tuple(notes),
    )


def enforce_cap(resp: SelectorResponse, cap: int) -> SelectorResponse:
    """Drop over-cap indices, keeping the model's listing order."""
    if cap < 1:
        raise ConfigurationError(f"cap must be >= 1, got {cap}")
    if len(resp.listed) <= cap:
        return resp
    kept = resp.listed[:cap]
    return replace(
        resp,
        indices=tuple(sorted(kept)),
        listed=tuple(kept),
        categories={k: v for k, v in resp.categories.items() if k in kept},
        truncated=True,
    )


Transport = Callable[[dict], dict]


def http_transport(cfg: EndpointConfig) -> Transport:
    """POST the payload to the configured endpoint with a bearer token."""

    def call(payload: dict) -> dict:
        if not cfg.base_url:
            raise ConfigurationError("no endpoint URL configured")
        headers = {}
        api_key = os.environ.get(cfg.api_key_env_var, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            response = requests.post(
                cfg.base_url, json=payload, headers=headers, timeout=cfg.timeout_s
            )
        except requests.RequestException as exc:
            raise TransportError(f"request failed: {exc}") from exc
        if not 200 <= response.status_code < 300:
            raise TransportError(
                f"endpoint returned HTTP {response.status_code}"
            )
        try:
            return response.json()
        except ValueError as exc:
            raise TransportError("endpoint returned non-JSON body") from exc

    return call


def extract_content(response: dict) -> str:
    try:
        return response["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise UnparseableResponseError(
            f"response body lacks choices[0].message.content: {exc!r}"
        ) from exc


class ResponseCache:
    """One JSON file per request, named by the content hash of the key."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    @staticmethod
    def key(model_name: str, prompt: str) -> str:
        h = hashlib.sha256()
        h.update(model_name.encode("utf-8"))
        h.update(b"\x00")
        h.update(prompt.encode("utf-8"))
        return h.hexdigest()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> CriticalSelection | None:
        path = self._path(key)
        if not path.exists():
            return None
        with open(path, encoding="utf-8") as fh:
            return selection_from_obj(json.load(fh))

    def put(self, key: str, selection: CriticalSelection) -> None:
        atomic_write_text(
            self._path(key), json.dumps(selection_to_obj(selection), indent=2)
        )


def select_with_llm(
    t: Trajectory,
    prompt_cfg: SelectorPromptConfig,
    endpoint_cfg: EndpointConfig,
    cache: ResponseCache,
    transport: Transport | None = None,
) -> CriticalSelection:
    """Cached selector call with retries on transport and parse failures."""
    prompt = build_prompt(t, prompt_cfg)
    key = ResponseCache.key(endpoint_cfg.model_name, prompt)
    cached = cache.get(key)
    if cached is not None:
        return cached

    call = transport if transport is not None else http_transport(endpoint_cfg)
    payload = {
        "model": endpoint_cfg.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": endpoint_cfg.temperature,
    }
    attempts = endpoint_cfg.max_retries + 1
    last_error: Exception | None = None
    resp: SelectorResponse | None = None
    for attempt in range(attempts):
        try:
            content = extract_content(call(payload))
            resp = parse_response(content, len(t.steps))
            break
        except (TransportError, UnparseableResponseError) as exc:
            last_error = exc
            if attempt + 1 < attempts and endpoint_cfg.backoff_s > 0:
                time.sleep(endpoint_cfg.backoff_s * (2**attempt))
    if resp is None:
        raise SelectorUnavailableError(
            f"selector failed after {attempts} attempts for {t.id!r}: "
            f"{last_error}",
            last_error=last_error,
        )

    cap = selection_cap(prompt_cfg.ratio, len(t.steps))
    resp = enforce_cap(resp, cap)
    selection = CriticalSelection(
        trajectory_id=t.id,
        indices=resp.indices,
        strategy="llm",
        ratio=prompt_cfg.ratio,
        cap=cap,
        categories=dict(resp.categories),
        plan_summary=resp.plan_summary or None,
    )
    cache.put(key, selection)
    return selection


class LLMSelector(BaseSelector):
    """Estimator-style wrapper around the cached endpoint selector."""

    def __init__(
        self,
        ratio: float = 0.3,
        endpoint: EndpointConfig | None = None,
        cache_dir: str = ".critsel_cache",
        observation_limit: int = 2000,
        transport: Transport | None = None,
    ):
        self.ratio = ratio
        self.endpoint = endpoint
        self.cache_dir = cache_dir
        self.observation_limit = observation_limit
        self.transport = transport

    def select(self, trajectory: Trajectory) -> CriticalSelection:
        endpoint = self.endpoint if self.endpoint is not None else EndpointConfig()
        prompt_cfg = SelectorPromptConfig(
            ratio=self.ratio, observation_limit=self.observation_limit
        )
        return select_with_llm(
            trajectory,
            prompt_cfg,
            endpoint,
            ResponseCache(self.cache_dir),
            transport=self.transport,
        )
