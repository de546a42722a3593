"""Command-line entry point orchestrating the whole pipeline.

Every subcommand is idempotent given identical inputs, config, and seeds;
outputs are written atomically and a resolved-config snapshot lands next to
each primary output.  Failures exit nonzero with a single line of the form
``<error-class>: <message>`` on stderr.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from . import io as cio
from .ablation import ValueSettings, run_ablation, write_ablation_outputs
from .config import RunConfig, load_config, write_snapshot
from .envs.maze import (
    MazeFamilyParams,
    MazeSpec,
    expert_trajectory,
    make_split,
    pivotal_steps,
    spec_from_obj,
    spec_id,
    spec_to_obj,
)
from .errors import ConfigurationError, CritselError
from .masking import dataset_stats, emit_masked_dataset, load_masked_samples
from .selectors.baselines import (
    select_noncritical,
    select_random,
    select_top_perplexity,
)
from .selectors.llm import (
    EndpointConfig,
    LLMSelector,
    ResponseCache,
    SelectorPromptConfig,
    select_with_llm,
)
from .selectors.value import (
    NoisyShortestPathPolicy,
    build_value_selection,
    compute_value_profile,
    load_profiles,
    write_profiles,
)
from .trainer import (
    FEATURE_DIM,
    LogLinearPolicy,
    TrainConfig,
    evaluate,
    train,
)
from .trajectory import Dataset, Trajectory, validate_trajectory

import numpy as np

STRATEGY_NAMES = ("llm", "perplexity", "random", "value", "noncritical")


def _parallel_map(fn, items, jobs: int):
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _load_specs(path: str | Path) -> list[MazeSpec]:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if isinstance(obj, dict):
        obj = [obj]
    return [spec_from_obj(o) for o in obj]


def _write_specs(specs: list[MazeSpec], path: str | Path) -> None:
    cio.atomic_write_text(
        path, json.dumps([spec_to_obj(s) for s in specs], indent=2) + "\n"
    )


def _specs_by_trajectory_id(specs: list[MazeSpec]) -> dict[str, MazeSpec]:
    return {spec_id(s): s for s in specs}


@click.group()
def cli():
    """Critical-step selection and loss-masked dataset curation."""


@cli.command("ingest")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
def ingest_cmd(in_path, out_path, config_path):
    """Validate a chat-format trajectory file and re-serialize it canonically."""
    config = load_config(config_path)
    dataset = cio.load_dataset(in_path)
    problems = []
    for t in dataset.trajectories:
        for violation in validate_trajectory(t):
            problems.append(f"{t.id}: {violation}")
    if problems:
        raise ConfigurationError(
            f"{len(problems)} invariant violation(s); first: {problems[0]}"
        )
    cio.write_dataset(dataset, out_path)
    write_snapshot(config, out_path)
    click.echo(f"ingested {len(dataset)} trajectories -> {out_path}")


@cli.command("select")
@click.option(
    "--strategy", required=True, type=click.Choice(STRATEGY_NAMES)
)
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--ratio", type=float, default=None, help="Selection ratio (default 0.3).")
@click.option("--seed", type=int, default=None, help="Seed for stochastic strategies.")
@click.option("--logprobs", "logprobs_path", type=click.Path(exists=True))
@click.option("--critical", "critical_path", type=click.Path(exists=True))
@click.option("--profiles", "profiles_path", type=click.Path(exists=True))
@click.option("--endpoint", "endpoint_url", type=str, default=None)
@click.option("--model", "model_name", type=str, default=None)
@click.option("--cache-dir", "cache_dir", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--jobs", type=int, default=None)
def select_cmd(
    strategy,
    in_path,
    out_path,
    ratio,
    seed,
    logprobs_path,
    critical_path,
    profiles_path,
    endpoint_url,
    model_name,
    cache_dir,
    config_path,
    jobs,
):
    """Produce a selection file for one strategy."""
    config = load_config(config_path)
    if ratio is not None:
        config.selection.ratio = ratio
    if seed is not None:
        config.selection.seed = seed
    if jobs is not None:
        config.jobs = jobs
    if endpoint_url is not None:
        config.endpoint.base_url = endpoint_url
    if model_name is not None:
        config.endpoint.model_name = model_name
    if cache_dir is not None:
        config.endpoint.cache_dir = cache_dir

    dataset = cio.load_dataset(in_path)
    trajectories = dataset.trajectories

    if strategy == "perplexity":
        if logprobs_path is None:
            raise ConfigurationError(
                "--logprobs is required for --strategy perplexity"
            )
        logprobs = cio.load_logprobs(logprobs_path)

        def one(t: Trajectory):
            if t.id not in logprobs:
                raise ConfigurationError(f"no logprobs for trajectory {t.id!r}")
            return select_top_perplexity(
                t, logprobs[t.id], config.selection.ratio, config.selection.ppl_span
            )

    elif strategy == "random":

        def one(t: Trajectory):
            return select_random(t, config.selection.ratio, config.selection.seed)

    elif strategy == "noncritical":
        if critical_path is None:
            raise ConfigurationError(
                "--critical is required for --strategy noncritical"
            )
        critical = cio.load_selections(critical_path)

        def one(t: Trajectory):
            if t.id not in critical:
                raise ConfigurationError(
                    f"no critical selection for trajectory {t.id!r}"
                )
            return select_noncritical(t, critical[t.id], config.selection.seed)

    elif strategy == "value":
        if profiles_path is None:
            raise ConfigurationError("--profiles is required for --strategy value")
        profiles = load_profiles(profiles_path)

        def one(t: Trajectory):
            if t.id not in profiles:
                raise ConfigurationError(
                    f"no value profile for trajectory {t.id!r}"
                )
            return build_value_selection(
                t, profiles[t.id], seed=config.selection.seed
            )

    else:  # llm
        if not config.endpoint.base_url:
            raise ConfigurationError(
                "--endpoint is required for --strategy llm"
            )
        endpoint = EndpointConfig(
            base_url=config.endpoint.base_url,
            model_name=config.endpoint.model_name,
            api_key_env_var=config.endpoint.api_key_env_var,
            max_retries=config.endpoint.max_retries,
            timeout_s=config.endpoint.timeout_s,
            temperature=config.endpoint.temperature,
            backoff_s=config.endpoint.backoff_s,
        )
        prompt_cfg = SelectorPromptConfig(ratio=config.selection.ratio)
        cache = ResponseCache(config.endpoint.cache_dir)

        def one(t: Trajectory):
            return select_with_llm(t, prompt_cfg, endpoint, cache)

    selections = _parallel_map(one, trajectories, config.jobs)
    cio.write_selections(selections, out_path)
    write_snapshot(config, out_path)
    click.echo(f"selected with {strategy} for {len(selections)} trajectories -> {out_path}")


@cli.command("value-profile")
@click.option("--env", "env_name", type=click.Choice(["maze"]), default="maze")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--specs", "specs_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--N", "n_rollouts", type=int, default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--threshold", type=float, default=None)
@click.option("--epsilon", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--jobs", type=int, default=None)
def value_profile_cmd(
    env_name,
    in_path,
    specs_path,
    out_path,
    n_rollouts,
    gamma,
    threshold,
    epsilon,
    seed,
    config_path,
    jobs,
):
    """Monte-Carlo value profiles for every trajectory in a file."""
    config = load_config(config_path)
    if n_rollouts is not None:
        config.value.n_rollouts = n_rollouts
    if gamma is not None:
        config.value.gamma = gamma
    if threshold is not None:
        config.value.threshold = threshold
    if epsilon is not None:
        config.value.epsilon = epsilon
    if seed is not None:
        config.selection.seed = seed
    if jobs is not None:
        config.jobs = jobs

    dataset = cio.load_dataset(in_path)
    specs = _specs_by_trajectory_id(_load_specs(specs_path))

    def one(t: Trajectory):
        if t.id not in specs:
            raise ConfigurationError(f"no maze spec for trajectory {t.id!r}")
        spec = specs[t.id]
        policy = NoisyShortestPathPolicy(spec, config.value.epsilon)
        return compute_value_profile(
            spec,
            t,
            policy,
            n_rollouts=config.value.n_rollouts,
            gamma=config.value.gamma,
            threshold=config.value.threshold,
            seed=config.selection.seed,
            gap_mode=config.value.gap_mode,
        )

    profiles = _parallel_map(one, dataset.trajectories, config.jobs)
    write_profiles(profiles, out_path)
    write_snapshot(config, out_path)
    click.echo(f"profiled {len(profiles)} trajectories -> {out_path}")


@cli.command("emit")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--selections", "selections_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--selector-model", "selector_model", type=str, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True))
def emit_cmd(in_path, selections_path, out_path, selector_model, config_path):
    """Write the loss-masked dataset for trajectories + selections."""
    config = load_config(config_path)
    dataset = cio.load_dataset(in_path)
    selections = cio.load_selections(selections_path)
    report = emit_masked_dataset(
        dataset, selections, out_path, selector_model=selector_model
    )
    write_snapshot(config, out_path)
    click.echo(
        f"emitted {report.samples} samples, {report.trained_steps}/"
        f"{report.total_steps} trained steps "
        f"(realized ratio {report.realized_ratio:.3f}) -> {out_path}"
    )


@cli.command("gen-toy")
@click.option("--family-seed", type=int, default=None)
@click.option("--held-in", "held_in", type=int, default=None)
@click.option("--held-out", "held_out", type=int, default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
def gen_toy_cmd(family_seed, held_in, held_out, out_dir, config_path):
    """Generate maze splits plus expert trajectories and junction diagnostics."""
    config = load_config(config_path)
    if family_seed is not None:
        config.toy.family_seed = family_seed
    if held_in is not None:
        config.toy.held_in = held_in
    if held_out is not None:
        config.toy.held_out = held_out
    toy = config.toy
    held_in_specs, held_out_specs = make_split(
        toy.family_seed,
        toy.held_in,
        toy.held_out,
        MazeFamilyParams(
            width=toy.held_in_width,
            height=toy.held_in_height,
            wall_density=toy.held_in_wall_density,
            min_distance=toy.held_in_min_distance,
            max_rounds=toy.max_rounds,
        ),
        MazeFamilyParams(
            width=toy.held_out_width,
            height=toy.held_out_height,
            wall_density=toy.held_out_wall_density,
            min_distance=toy.held_out_min_distance,
            max_rounds=toy.max_rounds,
        ),
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_specs(held_in_specs, out / "held_in_specs.json")
    _write_specs(held_out_specs, out / "held_out_specs.json")
    held_in_traj = [expert_trajectory(s) for s in held_in_specs]
    held_out_traj = [expert_trajectory(s) for s in held_out_specs]
    cio.write_dataset(Dataset(held_in_traj), out / "trajectories.jsonl")
    cio.write_dataset(Dataset(held_out_traj), out / "held_out_trajectories.jsonl")
    pivotal = {
        spec_id(s): pivotal_steps(s) for s in held_in_specs + held_out_specs
    }
    cio.atomic_write_text(
        out / "pivotal.json", json.dumps(pivotal, indent=2, sort_keys=True) + "\n"
    )
    write_snapshot(config, out)
    click.echo(
        f"generated {len(held_in_specs)} held-in and {len(held_out_specs)} "
        f"held-out mazes -> {out_dir}"
    )


def _policy_to_obj(policy: LogLinearPolicy, config: TrainConfig) -> dict:
    return {
        "environment": "maze",
        "feature_dim": FEATURE_DIM,
        "theta": [float(x) for x in policy.theta],
        "trainer": dataclasses.asdict(config),
    }


def load_policy(path: str | Path) -> LogLinearPolicy:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    theta = np.asarray(obj["theta"], dtype=float)
    if theta.shape != (FEATURE_DIM,):
        raise ConfigurationError(
            f"policy file has {theta.shape} weights, expected ({FEATURE_DIM},)"
        )
    return LogLinearPolicy(theta=theta)


@cli.command("train-toy")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--learning-rate", type=float, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--l2", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True))
def train_toy_cmd(in_path, out_path, learning_rate, epochs, l2, seed, config_path):
    """Train the log-linear policy on a masked dataset."""
    config = load_config(config_path)
    if learning_rate is not None:
        config.trainer.learning_rate = learning_rate
    if epochs is not None:
        config.trainer.epochs = epochs
    if l2 is not None:
        config.trainer.l2 = l2
    if seed is not None:
        config.trainer.seed = seed
    samples = load_masked_samples(in_path)
    cfg = TrainConfig(
        learning_rate=config.trainer.learning_rate,
        epochs=config.trainer.epochs,
        l2=config.trainer.l2,
        seed=config.trainer.seed,
        eval_episodes=config.trainer.eval_episodes,
    )
    policy = train(samples, cfg)
    cio.atomic_write_text(
        out_path, json.dumps(_policy_to_obj(policy, cfg), indent=2) + "\n"
    )
    write_snapshot(config, out_path)
    trained = sum(sum(t.train for t in s.turns) for s in samples)
    click.echo(
        f"trained on {trained} flagged turns across {len(samples)} samples -> {out_path}"
    )


@cli.command("eval-toy")
@click.option("--policy", "policy_path", required=True, type=click.Path(exists=True))
@click.option("--specs", "specs_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--episodes", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True))
def eval_toy_cmd(policy_path, specs_path, out_path, episodes, seed, config_path):
    """Evaluate a trained policy on a maze spec file."""
    config = load_config(config_path)
    if episodes is not None:
        config.trainer.eval_episodes = episodes
    if seed is not None:
        config.trainer.seed = seed
    policy = load_policy(policy_path)
    specs = _load_specs(specs_path)
    metrics = evaluate(
        policy, specs, episodes=config.trainer.eval_episodes, seed=config.trainer.seed
    )
    cio.atomic_write_text(out_path, json.dumps(metrics, indent=2) + "\n")
    write_snapshot(config, out_path)
    click.echo(
        f"success_rate {metrics['success_rate']:.3f}, "
        f"mean_return {metrics['mean_return']:.3f} -> {out_path}"
    )


@cli.command("ablate")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--jobs", type=int, default=None)
def ablate_cmd(out_dir, config_path, jobs):
    """Run the strategy x ratio x seed grid and write the results table."""
    config = load_config(config_path)
    if jobs is not None:
        config.jobs = jobs
    toy = config.toy
    held_in_specs, held_out_specs = make_split(
        toy.family_seed,
        toy.held_in,
        toy.held_out,
        MazeFamilyParams(
            width=toy.held_in_width,
            height=toy.held_in_height,
            wall_density=toy.held_in_wall_density,
            min_distance=toy.held_in_min_distance,
            max_rounds=toy.max_rounds,
        ),
        MazeFamilyParams(
            width=toy.held_out_width,
            height=toy.held_out_height,
            wall_density=toy.held_out_wall_density,
            min_distance=toy.held_out_min_distance,
            max_rounds=toy.max_rounds,
        ),
    )
    result = run_ablation(
        held_in_specs,
        held_out_specs,
        strategies=tuple(config.ablation.strategies),
        ratios=tuple(config.ablation.ratios),
        seeds=tuple(config.ablation.seeds),
        value_settings=ValueSettings(
            n_rollouts=config.value.n_rollouts,
            gamma=config.value.gamma,
            threshold=config.value.threshold,
            epsilon=config.value.epsilon,
            gap_mode=config.value.gap_mode,
        ),
        train_config=TrainConfig(
            learning_rate=config.trainer.learning_rate,
            epochs=config.trainer.epochs,
            l2=config.trainer.l2,
            seed=config.trainer.seed,
            eval_episodes=config.trainer.eval_episodes,
        ),
        jobs=config.jobs,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_ablation_outputs(result, out)
    write_snapshot(config, out)
    click.echo(result.to_text())


@cli.command("report")
@click.option("--selections", "selections_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
def report_cmd(selections_path, dataset_path, out_path, config_path):
    """Selection accounting: ratios, categories, strategy provenance."""
    config = load_config(config_path)
    selections = cio.load_selections(selections_path)
    dataset = cio.load_dataset(dataset_path) if dataset_path else None
    stats = dataset_stats(selections, dataset)
    cio.atomic_write_text(out_path, json.dumps(stats.to_obj(), indent=2) + "\n")
    write_snapshot(config, out_path)
    click.echo(stats.to_text(), nl=False)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        click.echo(f"usage-error: {exc.format_message()}", err=True)
        return 2
    except CritselError as exc:
        click.echo(f"{exc.code}: {exc.message}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
