"""Run configuration: one JSON document mirroring every module's tunables.

Unknown keys are rejected at every level so typos fail loudly.  Flags given
on the command line override config-file values, and every subcommand writes
a resolved-config snapshot next to its outputs for provenance.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .io import atomic_write_text


@dataclass
class SelectionSettings:
    ratio: float = 0.3
    seed: int = 0
    ppl_span: str = "joint"


@dataclass
class ValueSectionSettings:
    n_rollouts: int = 5
    gamma: float = 0.99
    threshold: float = 0.1
    epsilon: float = 0.35
    gap_mode: str = "absolute"


@dataclass
class EndpointSettings:
    base_url: str = ""
    model_name: str = "gpt-4o"
    api_key_env_var: str = "CRITSEL_API_KEY"
    max_retries: int = 2
    timeout_s: float = 60.0
    temperature: float = 0.0
    backoff_s: float = 0.5
    cache_dir: str = ".critsel_cache"


@dataclass
class ToySettings:
    family_seed: int = 0
    held_in: int = 40
    held_out: int = 20
    max_rounds: int = 15
    held_in_width: int = 5
    held_in_height: int = 5
    held_in_wall_density: float = 0.25
    held_in_min_distance: int = 4
    held_out_width: int = 6
    held_out_height: int = 6
    held_out_wall_density: float = 0.30
    held_out_min_distance: int = 5


@dataclass
class TrainerSettings:
    learning_rate: float = 0.05
    epochs: int = 200
    l2: float = 1e-4
    seed: int = 0
    eval_episodes: int = 200


@dataclass
class AblationSettings:
    strategies: list[str] = field(
        default_factory=lambda: ["value", "noncritical", "random", "full"]
    )
    ratios: list[float] = field(default_factory=lambda: [0.3])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])


@dataclass
class RunConfig:
    jobs: int = 1
    selection: SelectionSettings = field(default_factory=SelectionSettings)
    value: ValueSectionSettings = field(default_factory=ValueSectionSettings)
    endpoint: EndpointSettings = field(default_factory=EndpointSettings)
    toy: ToySettings = field(default_factory=ToySettings)
    trainer: TrainerSettings = field(default_factory=TrainerSettings)
    ablation: AblationSettings = field(default_factory=AblationSettings)

    def to_obj(self) -> dict:
        return dataclasses.asdict(self)


_SECTION_TYPES = {
    "selection": SelectionSettings,
    "value": ValueSectionSettings,
    "endpoint": EndpointSettings,
    "toy": ToySettings,
    "trainer": TrainerSettings,
    "ablation": AblationSettings,
}


def _build_section(cls, obj: dict, section: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(obj) - known
    if unknown:
        raise ConfigurationError(
            f"unknown key(s) {sorted(unknown)} in config section {section!r}"
        )
    return cls(**obj)


def config_from_obj(obj: dict) -> RunConfig:
    known = {"jobs"} | set(_SECTION_TYPES)
    unknown = set(obj) - known
    if unknown:
        raise ConfigurationError(f"unknown top-level config key(s) {sorted(unknown)}")
    kwargs: dict = {}
    if "jobs" in obj:
        kwargs["jobs"] = int(obj["jobs"])
    for section, cls in _SECTION_TYPES.items():
        if section in obj:
            if not isinstance(obj[section], dict):
                raise ConfigurationError(f"config section {section!r} must be an object")
            kwargs[section] = _build_section(cls, obj[section], section)
    return RunConfig(**kwargs)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(obj, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return config_from_obj(obj)


def write_snapshot(config: RunConfig, anchor: str | Path) -> Path:
    """Write the resolved config next to an output file or directory."""
    anchor = Path(anchor)
    if anchor.suffix:
        target = anchor.with_name(anchor.name + ".config.json")
    else:
        target = anchor / "resolved_config.json"
    atomic_write_text(target, json.dumps(config.to_obj(), indent=2) + "\n")
    return target
