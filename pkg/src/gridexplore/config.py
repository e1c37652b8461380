"""Experiment configuration: a single TOML file per experiment.

Configuration is explicit-only. Every key lives in the file, environment
variables override nothing, and unknown keys are rejected so typos fail
loudly instead of silently running defaults. The parsed config serializes
back to a plain dict that is embedded in every output artifact.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .engine import DelayModel, LossSchedule
from .metrics import RewardConfig
from .policy import PolicyConfig
from .sources import PLANNER_NAMES
from .training import TrainHyper
from .worldgen import MapSpec


class ConfigError(ValueError):
    """Unreadable, mistyped, or inconsistent experiment file."""


SOURCE_KINDS = PLANNER_NAMES + ("random", "policy")

MODES = ("sync", "async")


@dataclass(frozen=True)
class TrainSettings:
    """Training-loop controls from the [train] table."""

    step_max: int = 200_000
    batch_episodes: int = 16
    eval_every: int = 10
    eval_episodes: int = 20
    resume: Optional[str] = None
    hyper: TrainHyper = field(default_factory=TrainHyper)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment."""

    map_spec: MapSpec = field(default_factory=MapSpec)
    map_file: Optional[str] = None
    n_agents: int = 2
    mode: str = "async"
    planner: str = "nearest"
    planner_params: dict = field(default_factory=dict)
    checkpoint: Optional[str] = None
    deterministic: bool = True
    episodes: int = 1
    seed: int = 0
    t_max: float = 100.0
    coverage_target: float = 1.0
    out_dir: Optional[str] = None
    delay: DelayModel = field(default_factory=DelayModel)
    loss: Optional[LossSchedule] = None
    reward: RewardConfig = field(default_factory=RewardConfig)
    policy: Optional[PolicyConfig] = None
    train: TrainSettings = field(default_factory=TrainSettings)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.planner not in SOURCE_KINDS:
            raise ConfigError(
                f"planner must be one of {SOURCE_KINDS}, got {self.planner!r}"
            )
        if self.planner == "policy" and not self.checkpoint:
            raise ConfigError("planner 'policy' requires a checkpoint path")
        if self.n_agents < 1:
            raise ConfigError("agents must be >= 1")
        if self.episodes < 0:
            raise ConfigError("episodes must be >= 0")
        if self.t_max <= 0:
            raise ConfigError("t_max must be positive")


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return parse_config(data)


def parse_config(data: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from a parsed TOML tree, rejecting unknown
    tables and keys."""
    data = dict(data)
    map_table = _table(data, "map")
    run_table = _table(data, "run")
    planner_table = _table(data, "planner")
    delay_table = _table(data, "delay")
    loss_table = _table(data, "loss")
    reward_table = _table(data, "reward")
    policy_table = _table(data, "policy")
    train_table = _table(data, "train")
    if data:
        raise ConfigError(f"unknown table(s): {sorted(data)}")

    map_file = map_table.pop("file", None)
    if "rooms" in map_table:
        rooms = map_table["rooms"]
        if (not isinstance(rooms, list) or len(rooms) != 2
                or not all(isinstance(r, int) for r in rooms)):
            raise ConfigError("[map] rooms must be a two-integer array")
        map_table["rooms"] = tuple(rooms)
    map_spec = _build(MapSpec, map_table, "map")

    known_run = {"agents", "mode", "episodes", "seed", "t_max",
                 "coverage_target", "out"}
    _reject_unknown(run_table, known_run, "run")

    params = planner_table.pop("params", {})
    if not isinstance(params, dict):
        raise ConfigError("[planner] params must be a table")
    known_planner = {"kind", "checkpoint", "deterministic"}
    _reject_unknown(planner_table, known_planner, "planner")

    hyper_table = train_table.pop("hyper", {})
    if not isinstance(hyper_table, dict):
        raise ConfigError("[train] hyper must be a table")
    hyper = _build(TrainHyper, hyper_table, "train.hyper")
    train = _build(TrainSettings, train_table, "train", hyper=hyper)

    return ExperimentConfig(
        map_spec=map_spec,
        map_file=map_file,
        n_agents=run_table.get("agents", 2),
        mode=run_table.get("mode", "async"),
        planner=planner_table.get("kind", "nearest"),
        planner_params=dict(params),
        checkpoint=planner_table.get("checkpoint"),
        deterministic=planner_table.get("deterministic", True),
        episodes=run_table.get("episodes", 1),
        seed=run_table.get("seed", 0),
        t_max=float(run_table.get("t_max", 100.0)),
        coverage_target=float(run_table.get("coverage_target", 1.0)),
        out_dir=run_table.get("out"),
        delay=_build(DelayModel, delay_table, "delay"),
        loss=_build(LossSchedule, loss_table, "loss") if loss_table else None,
        reward=_build(RewardConfig, reward_table, "reward"),
        policy=_build(PolicyConfig, policy_table, "policy") if policy_table else None,
        train=train,
    )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Serializable tree in the shape of the TOML file; round-trips through
    parse_config."""
    out: dict[str, Any] = {
        "map": {
            "width": cfg.map_spec.width,
            "height": cfg.map_spec.height,
            "rooms": list(cfg.map_spec.rooms),
            "seed": cfg.map_spec.seed,
        },
        "run": {
            "agents": cfg.n_agents,
            "mode": cfg.mode,
            "episodes": cfg.episodes,
            "seed": cfg.seed,
            "t_max": cfg.t_max,
            "coverage_target": cfg.coverage_target,
        },
        "planner": {"kind": cfg.planner, "deterministic": cfg.deterministic},
        "delay": _asdict_shallow(cfg.delay),
        "reward": _asdict_shallow(cfg.reward),
        "train": {
            "step_max": cfg.train.step_max,
            "batch_episodes": cfg.train.batch_episodes,
            "eval_every": cfg.train.eval_every,
            "eval_episodes": cfg.train.eval_episodes,
            "hyper": _asdict_shallow(cfg.train.hyper),
        },
    }
    if cfg.map_file:
        out["map"]["file"] = cfg.map_file
    if cfg.out_dir:
        out["run"]["out"] = cfg.out_dir
    if cfg.planner_params:
        out["planner"]["params"] = dict(cfg.planner_params)
    if cfg.checkpoint:
        out["planner"]["checkpoint"] = cfg.checkpoint
    if cfg.loss:
        out["loss"] = _asdict_shallow(cfg.loss)
    if cfg.policy:
        out["policy"] = {
            "s": cfg.policy.s, "g": cfg.policy.g,
            "channels_out": cfg.policy.channels_out,
            "hidden": cfg.policy.hidden, "comm_mode": cfg.policy.comm_mode,
        }
    if cfg.train.resume:
        out["train"]["resume"] = cfg.train.resume
    return out


def comparable_dict(cfg: ExperimentConfig) -> dict:
    """The config tree minus the axes a comparison matrix is allowed to vary:
    planner choice, execution mode, and output paths."""
    tree = config_to_dict(cfg)
    tree.pop("planner", None)
    tree["run"].pop("mode", None)
    tree["run"].pop("out", None)
    return tree


def _table(data: dict, name: str) -> dict:
    value = data.pop(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a table")
    return dict(value)


def _reject_unknown(table: dict, known: set, name: str) -> None:
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {sorted(unknown)}")


def _build(cls, table: dict, name: str, **overrides):
    names = {f.name for f in dataclasses.fields(cls)}
    _reject_unknown(table, names, name)
    try:
        return cls(**{**table, **overrides})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def _asdict_shallow(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}
