"""Strategy x ratio x seed experiment grid over the toy maze splits.

One policy is trained per (strategy, ratio, seed) cell and evaluated on the
held-in and held-out splits.  The emitted table mirrors the usual ablation
layout: per-run rows plus mean +/- stddev aggregates over seeds, with the
published large-scale reference numbers attached for context only (they are
never a pass condition at desk scale).
"""

from __future__ import annotations

import csv
import io as _io
import json
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .envs.maze import MazeSpec, expert_trajectory
from .errors import ConfigurationError
from .masking import MaskedSample, build_masked_sample
from .selectors.baselines import full_selection, select_noncritical, select_random
from .selectors.value import (
    NoisyShortestPathPolicy,
    build_value_selection,
    compute_value_profile,
)
from .trainer import TrainConfig, evaluate, train
from .trajectory import CriticalSelection, Trajectory

STRATEGY_CHOICES = ("value", "noncritical", "random", "full")

# Reference results from the original large-scale study, for context only.
REFERENCE_ROWS = [
    {"data": "critical-steps-30%", "held_in_avg": 65.91, "held_out_avg": 38.36},
    {"data": "complete-trajectories-100%", "held_in_avg": 60.52, "held_out_avg": 36.18},
    {"data": "noncritical-steps-30%", "held_in_avg": 56.17, "held_out_avg": 29.88},
    {"data": "random-steps-30%", "held_in_avg": 59.90, "held_out_avg": 38.04},
]

CSV_COLUMNS = (
    "strategy",
    "ratio",
    "seed",
    "held_in_success",
    "held_out_success",
    "mean_return_in",
    "mean_return_out",
)


@dataclass(frozen=True)
class ValueSettings:
    n_rollouts: int = 5
    gamma: float = 0.99
    threshold: float = 0.1
    epsilon: float = 0.35
    gap_mode: str = "absolute"


@dataclass
class AblationResult:
    rows: list[dict] = field(default_factory=list)
    aggregates: list[dict] = field(default_factory=list)
    reference: list[dict] = field(default_factory=lambda: [dict(r) for r in REFERENCE_ROWS])

    def to_obj(self) -> dict:
        return {
            "rows": self.rows,
            "aggregates": self.aggregates,
            "reference_large_scale": self.reference,
        }

    def to_csv(self) -> str:
        buf = _io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: row[k] for k in CSV_COLUMNS})
        return buf.getvalue()

    def to_text(self) -> str:
        lines = ["strategy      ratio  held-in        held-out"]
        for agg in self.aggregates:
            lines.append(
                f"{agg['strategy']:<13} {agg['ratio']:<6} "
                f"{agg['held_in_mean']:.3f}+/-{agg['held_in_std']:.3f}    "
                f"{agg['held_out_mean']:.3f}+/-{agg['held_out_std']:.3f}"
            )
        lines.append("")
        lines.append("reference (large-scale study, context only):")
        for row in self.reference:
            lines.append(
                f"  {row['data']:<28} held-in {row['held_in_avg']:.2f}  "
                f"held-out {row['held_out_avg']:.2f}"
            )
        return "\n".join(lines) + "\n"

    def mean_held_out(self, strategy: str, ratio: float) -> float:
        for agg in self.aggregates:
            if agg["strategy"] == strategy and agg["ratio"] == ratio:
                return agg["held_out_mean"]
        raise KeyError((strategy, ratio))

    def mean_held_in(self, strategy: str, ratio: float) -> float:
        for agg in self.aggregates:
            if agg["strategy"] == strategy and agg["ratio"] == ratio:
                return agg["held_in_mean"]
        raise KeyError((strategy, ratio))


def build_strategy_selections(
    trajectories: Sequence[Trajectory],
    specs_by_id: Mapping[str, MazeSpec],
    strategy: str,
    ratio: float,
    seed: int,
    value_settings: ValueSettings,
    value_cache: dict | None = None,
) -> dict[str, CriticalSelection]:
    """Selections for one strategy cell; value profiles are seed-dependent."""
    if strategy not in STRATEGY_CHOICES:
        raise ConfigurationError(
            f"unknown ablation strategy {strategy!r}; expected {STRATEGY_CHOICES}"
        )
    if strategy in ("value", "noncritical"):
        if value_cache is not None and seed in value_cache:
            value_selections = value_cache[seed]
        else:
            value_selections = {}
            for t in trajectories:
                spec = specs_by_id[t.id]
                policy = NoisyShortestPathPolicy(spec, value_settings.epsilon)
                profile = compute_value_profile(
                    spec,
                    t,
                    policy,
                    n_rollouts=value_settings.n_rollouts,
                    gamma=value_settings.gamma,
                    threshold=value_settings.threshold,
                    seed=seed,
                    gap_mode=value_settings.gap_mode,
                )
                value_selections[t.id] = build_value_selection(t, profile, seed=seed)
            if value_cache is not None:
                value_cache[seed] = value_selections
        if strategy == "value":
            return value_selections
        return {
            t.id: select_noncritical(t, value_selections[t.id], seed)
            for t in trajectories
        }
    if strategy == "random":
        return {t.id: select_random(t, ratio, seed) for t in trajectories}
    return {t.id: full_selection(t) for t in trajectories}


def run_ablation(
    held_in_specs: Sequence[MazeSpec],
    held_out_specs: Sequence[MazeSpec],
    strategies: Sequence[str] = STRATEGY_CHOICES,
    ratios: Sequence[float] = (0.3,),
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    value_settings: ValueSettings = ValueSettings(),
    train_config: TrainConfig = TrainConfig(),
    jobs: int = 1,
) -> AblationResult:
    """Train and evaluate one policy per grid cell; deterministic given seeds."""
    for strategy in strategies:
        if strategy not in STRATEGY_CHOICES:
            raise ConfigurationError(
                f"unknown ablation strategy {strategy!r}; expected {STRATEGY_CHOICES}"
            )
    trajectories = [expert_trajectory(spec) for spec in held_in_specs]
    specs_by_id = {t.id: spec for t, spec in zip(trajectories, held_in_specs)}
    value_cache: dict = {}
    cells = [
        (strategy, ratio, seed)
        for strategy in strategies
        for ratio in ratios
        for seed in seeds
    ]

    def run_cell(cell: tuple[str, float, int]) -> dict:
        strategy, ratio, seed = cell
        effective_ratio = 1.0 if strategy == "full" else ratio
        selections = build_strategy_selections(
            trajectories,
            specs_by_id,
            strategy,
            effective_ratio,
            seed,
            value_settings,
            value_cache,
        )
        samples: list[MaskedSample] = [
            build_masked_sample(t, selections[t.id]) for t in trajectories
        ]
        cfg = TrainConfig(
            learning_rate=train_config.learning_rate,
            epochs=train_config.epochs,
            l2=train_config.l2,
            seed=seed,
            eval_episodes=train_config.eval_episodes,
        )
        policy = train(samples, cfg)
        metrics_in = evaluate(
            policy, held_in_specs, episodes=cfg.eval_episodes, seed=seed
        )
        metrics_out = evaluate(
            policy, held_out_specs, episodes=cfg.eval_episodes, seed=seed
        )
        return {
            "strategy": strategy,
            "ratio": effective_ratio,
            "seed": seed,
            "held_in_success": metrics_in["success_rate"],
            "held_out_success": metrics_out["success_rate"],
            "mean_return_in": metrics_in["mean_return"],
            "mean_return_out": metrics_out["mean_return"],
        }

    # Value selections are shared between the value and noncritical cells, so
    # fill the cache sequentially first; the remaining cells are independent.
    if any(s in ("value", "noncritical") for s in strategies):
        for seed in seeds:
            build_strategy_selections(
                trajectories,
                specs_by_id,
                "value",
                1.0,
                seed,
                value_settings,
                value_cache,
            )
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_cell, cells))
    else:
        rows = [run_cell(cell) for cell in cells]

    result = AblationResult(rows=rows)
    for strategy in strategies:
        for ratio in ratios:
            effective_ratio = 1.0 if strategy == "full" else ratio
            grid = [
                r
                for r in rows
                if r["strategy"] == strategy and r["ratio"] == effective_ratio
            ]
            if not grid:
                continue
            held_in = [r["held_in_success"] for r in grid]
            held_out = [r["held_out_success"] for r in grid]
            result.aggregates.append(
                {
                    "strategy": strategy,
                    "ratio": effective_ratio,
                    "seeds": len(grid),
                    "held_in_mean": statistics.fmean(held_in),
                    "held_in_std": statistics.pstdev(held_in) if len(held_in) > 1 else 0.0,
                    "held_out_mean": statistics.fmean(held_out),
                    "held_out_std": statistics.pstdev(held_out) if len(held_out) > 1 else 0.0,
                }
            )
    return result


def write_ablation_outputs(result: AblationResult, out_dir) -> None:
    from pathlib import Path

    from .io import atomic_write_text

    out = Path(out_dir)
    atomic_write_text(out / "results.csv", result.to_csv())
    atomic_write_text(
        out / "results.json", json.dumps(result.to_obj(), indent=2) + "\n"
    )
    atomic_write_text(out / "report.txt", result.to_text())
