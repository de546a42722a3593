"""Desk-scale log-linear policy trained on the masked objective.

The policy scores the four maze actions with a linear function of weak,
relative features (goal-direction signs, blocked-direction indicators, the
previous action, all crossed with the action identity) and normalizes with
a softmax.  The feature map deliberately excludes absolute positions so
memorizing individual mazes is impossible and held-out generalization is a
meaningful signal.

The training objective sums log-probabilities of the recorded actions over
turns flagged train=true only; unflagged turns still shape the features of
later turns through the recorded history.  Thoughts in generated data are
templated functions of state, so the action term carries the whole
objective at this scale.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .envs.maze import ACTIONS, Cell, MazeSpec, is_blocked, move
from .errors import FileFormatError, VocabularyError
from .masking import MaskedSample
from .seeding import mix64

_POSITION_RE = re.compile(r"You are at \((\d+), (\d+)\)")
_GOAL_RE = re.compile(r"The goal is at \((\d+), (\d+)\)")
_BLOCKED_RE = re.compile(r"Blocked directions: ([a-z, ]+)\.")

_ACTION_INDEX = {a: i for i, a in enumerate(ACTIONS)}
_LAST_VALUES = (None, "up", "down", "left", "right")

# Per-action feature block layout.
_BIAS = 0
_GOAL_UP, _GOAL_DOWN, _GOAL_LEFT, _GOAL_RIGHT = 1, 2, 3, 4
_BLOCKED_BASE = 5  # 4 slots, one per direction
_LAST_BASE = 9  # 5 slots: none, up, down, left, right
BLOCK_SIZE = 14
FEATURE_DIM = BLOCK_SIZE * len(ACTIONS)


@dataclass(frozen=True)
class FeatureContext:
    """The state a policy conditions on before emitting one action."""

    position: Cell
    goal: Cell
    blocked: frozenset[str]
    last_action: str | None = None


def parse_context_text(text: str, last_action: str | None) -> FeatureContext:
    """Recover a feature context from rendered observation (or instruction) text."""
    pos = _POSITION_RE.search(text)
    goal = _GOAL_RE.search(text)
    if pos is None or goal is None:
        raise FileFormatError(
            f"cannot parse a maze state from context text {text[:80]!r}"
        )
    blocked_match = _BLOCKED_RE.search(text)
    blocked: frozenset[str] = frozenset()
    if blocked_match and blocked_match.group(1).strip() != "none":
        blocked = frozenset(
            d.strip() for d in blocked_match.group(1).split(",") if d.strip()
        )
    return FeatureContext(
        position=(int(pos.group(1)), int(pos.group(2))),
        goal=(int(goal.group(1)), int(goal.group(2))),
        blocked=blocked,
        last_action=last_action,
    )


def context_from_spec(
    spec: MazeSpec, position: Cell, last_action: str | None
) -> FeatureContext:
    blocked = frozenset(a for a in ACTIONS if is_blocked(spec, position, a))
    return FeatureContext(
        position=position, goal=spec.goal, blocked=blocked, last_action=last_action
    )


class MazeFeatureMap:
    """Fixed sparse basis over (context, action) pairs; dimension 56."""

    dim = FEATURE_DIM
    actions = ACTIONS

    def vector(self, ctx: FeatureContext, action: str) -> np.ndarray:
        if action not in _ACTION_INDEX:
            raise VocabularyError(f"unknown action token {action!r}")
        phi = np.zeros(FEATURE_DIM)
        base = _ACTION_INDEX[action] * BLOCK_SIZE
        phi[base + _BIAS] = 1.0
        dr = ctx.goal[0] - ctx.position[0]
        dc = ctx.goal[1] - ctx.position[1]
        if dr < 0:
            phi[base + _GOAL_UP] = 1.0
        elif dr > 0:
            phi[base + _GOAL_DOWN] = 1.0
        if dc < 0:
            phi[base + _GOAL_LEFT] = 1.0
        elif dc > 0:
            phi[base + _GOAL_RIGHT] = 1.0
        for d in ctx.blocked:
            if d in _ACTION_INDEX:
                phi[base + _BLOCKED_BASE + _ACTION_INDEX[d]] = 1.0
        if ctx.last_action is None:
            phi[base + _LAST_BASE] = 1.0
        else:
            if ctx.last_action not in _ACTION_INDEX:
                raise VocabularyError(
                    f"unknown last-action token {ctx.last_action!r}"
                )
            phi[base + _LAST_BASE + 1 + _ACTION_INDEX[ctx.last_action]] = 1.0
        return phi

    def matrix(self, ctx: FeatureContext) -> np.ndarray:
        return np.stack([self.vector(ctx, a) for a in ACTIONS])


@dataclass
class LogLinearPolicy:
    """Softmax-over-actions policy with a linear scoring function."""

    theta: np.ndarray
    feature_map: MazeFeatureMap = field(default_factory=MazeFeatureMap)

    @classmethod
    def zeros(cls) -> "LogLinearPolicy":
        return cls(theta=np.zeros(FEATURE_DIM))

    def action_logits(self, ctx: FeatureContext) -> np.ndarray:
        return self.feature_map.matrix(ctx) @ self.theta

    def action_probs(self, ctx: FeatureContext) -> np.ndarray:
        logits = self.action_logits(ctx)
        logits = logits - logits.max()
        expd = np.exp(logits)
        return expd / expd.sum()

    def log_prob(self, ctx: FeatureContext, action: str) -> float:
        if action not in _ACTION_INDEX:
            raise VocabularyError(f"unknown action token {action!r}")
        logits = self.action_logits(ctx)
        shifted = logits - logits.max()
        return float(
            shifted[_ACTION_INDEX[action]] - np.log(np.exp(shifted).sum())
        )

    def greedy_action(self, ctx: FeatureContext) -> str:
        # np.argmax takes the first maximum, so ties break in ACTIONS order.
        return ACTIONS[int(np.argmax(self.action_logits(ctx)))]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 200
    l2: float = 1e-4
    seed: int = 0
    eval_episodes: int = 200


def sample_contexts(sample: MaskedSample) -> list[FeatureContext]:
    """Feature context for every turn of a masked sample.

    Turn 0 conditions on the instruction (which embeds the initial
    observation); turn t conditions on the observation of turn t-1 plus the
    previous action.
    """
    contexts = []
    for k, turn in enumerate(sample.turns):
        if k == 0:
            contexts.append(parse_context_text(sample.instruction, None))
        else:
            previous = sample.turns[k - 1]
            contexts.append(
                parse_context_text(previous.observation, previous.action)
            )
    return contexts


@dataclass
class _Design:
    """Vectorized view of a sample set: features, action ids, train mask."""

    phi: np.ndarray  # (turns, actions, features)
    action_ids: np.ndarray  # (turns,)
    train_mask: np.ndarray  # (turns,) bool


def _build_design(
    samples: Sequence[MaskedSample], feature_map: MazeFeatureMap
) -> _Design:
    rows, action_ids, flags = [], [], []
    for sample in samples:
        for ctx, turn in zip(sample_contexts(sample), sample.turns):
            if turn.action not in _ACTION_INDEX:
                raise VocabularyError(
                    f"unknown action token {turn.action!r} in "
                    f"{sample.trajectory_id!r}"
                )
            rows.append(feature_map.matrix(ctx))
            action_ids.append(_ACTION_INDEX[turn.action])
            flags.append(turn.train)
    if not rows:
        return _Design(
            phi=np.zeros((0, len(ACTIONS), feature_map.dim)),
            action_ids=np.zeros(0, dtype=int),
            train_mask=np.zeros(0, dtype=bool),
        )
    return _Design(
        phi=np.stack(rows),
        action_ids=np.asarray(action_ids, dtype=int),
        train_mask=np.asarray(flags, dtype=bool),
    )


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _masked_ll_design(design: _Design, theta: np.ndarray) -> float:
    if not design.train_mask.any():
        return 0.0
    logits = design.phi @ theta
    logp = _log_softmax(logits)
    picked = logp[np.arange(len(design.action_ids)), design.action_ids]
    return float(picked[design.train_mask].sum())


def _gradient_design(design: _Design, theta: np.ndarray) -> np.ndarray:
    if not design.train_mask.any():
        return np.zeros_like(theta)
    phi = design.phi[design.train_mask]
    actions = design.action_ids[design.train_mask]
    logits = phi @ theta
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    chosen = phi[np.arange(len(actions)), actions]
    expected = np.einsum("ta,taf->tf", probs, phi)
    return (chosen - expected).sum(axis=0)


def masked_log_likelihood(
    policy: LogLinearPolicy, samples: Sequence[MaskedSample]
) -> float:
    """Sum of log pi(action | context) over turns flagged train=true."""
    design = _build_design(samples, policy.feature_map)
    if not design.train_mask.any():
        warnings.warn("no trained turns in the sample set; objective is 0")
        return 0.0
    return _masked_ll_design(design, policy.theta)


def gradient(
    policy: LogLinearPolicy, samples: Sequence[MaskedSample], l2: float = 0.0
) -> np.ndarray:
    """Exact gradient of the masked objective, minus l2 * theta."""
    design = _build_design(samples, policy.feature_map)
    return _gradient_design(design, policy.theta) - l2 * policy.theta


def train(
    samples: Sequence[MaskedSample],
    cfg: TrainConfig = TrainConfig(),
    feature_map: MazeFeatureMap | None = None,
) -> LogLinearPolicy:
    """Full-batch gradient ascent from theta=0; deterministic given the config.

    The gradient is normalized by the trained-turn count so the learning
    rate is independent of dataset size.  The returned policy carries the
    per-epoch mean objective in ``history_``.
    """
    feature_map = feature_map if feature_map is not None else MazeFeatureMap()
    design = _build_design(samples, feature_map)
    n_trained = max(1, int(design.train_mask.sum()))
    theta = np.zeros(feature_map.dim)
    history = []
    for _ in range(cfg.epochs):
        grad = _gradient_design(design, theta) / n_trained - cfg.l2 * theta
        theta = theta + cfg.learning_rate * grad
        history.append(_masked_ll_design(design, theta) / n_trained)
    policy = LogLinearPolicy(theta=theta, feature_map=feature_map)
    policy.history_ = history
    return policy


def run_episode(
    spec: MazeSpec,
    policy: LogLinearPolicy,
    memo: dict | None = None,
) -> tuple[float, float]:
    """(success, undiscounted return) of one greedy episode."""
    memo = memo if memo is not None else {}
    position = spec.start
    last: str | None = None
    total = 0.0
    for _ in range(spec.max_rounds):
        key = (position, last)
        action = memo.get(key)
        if action is None:
            action = policy.greedy_action(context_from_spec(spec, position, last))
            memo[key] = action
        position2 = move(spec, position, action)
        if position2 == spec.goal:
            return 1.0, total
        total -= 1.0
        position, last = position2, action
    return 0.0, total


def evaluate(
    policy: LogLinearPolicy,
    specs: Sequence[MazeSpec],
    episodes: int = 200,
    seed: int = 0,
) -> dict[str, float]:
    """Greedy-policy success rate and mean return over episodes x specs.

    Greedy action choice is deterministic, so per-episode seeds exist only
    for interface stability; repeated episodes of one maze are identical.
    """
    successes, returns = [], []
    for spec in specs:
        memo: dict = {}
        for episode in range(episodes):
            _ = mix64(seed, spec.seed, episode)  # reserved per-episode stream
            success, ret = run_episode(spec, policy, memo)
            successes.append(success)
            returns.append(ret)
    return {
        "success_rate": float(np.mean(successes)) if successes else 0.0,
        "mean_return": float(np.mean(returns)) if returns else 0.0,
    }


class BehaviorCloner(BaseEstimator):
    """sklearn-style estimator facade over :func:`train`.

    ``fit`` consumes masked samples and stores the trained policy in
    ``policy_``; ``predict`` maps feature contexts to greedy actions.
    """

    def __init__(
        self,
        learning_rate: float = 0.05,
        epochs: int = 200,
        l2: float = 1e-4,
        seed: int = 0,
        eval_episodes: int = 200,
    ):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.l2 = l2
        self.seed = seed
        self.eval_episodes = eval_episodes

    def _config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            l2=self.l2,
            seed=self.seed,
            eval_episodes=self.eval_episodes,
        )

    def fit(self, X: Sequence[MaskedSample], y=None) -> "BehaviorCloner":
        self.policy_ = train(X, self._config())
        self.theta_ = self.policy_.theta
        self.history_ = self.policy_.history_
        return self

    def predict(self, X: Sequence[FeatureContext]) -> list[str]:
        return [self.policy_.greedy_action(ctx) for ctx in X]

    def score(self, X: Sequence[MazeSpec], y=None) -> float:
        return evaluate(
            self.policy_, X, episodes=self.eval_episodes, seed=self.seed
        )["success_rate"]
