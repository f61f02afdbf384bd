"""Experiment configuration: an INI file with one section per parameter group.

Example::

    [experiment]
    seed = 3
    n_iterations = 300

    [actuation]
    idealized = false

Every key must name a field of the section's dataclass; unknown sections or
keys are rejected.  Omitted keys keep their defaults.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .actuation import ActuationConfig
from .dynamics import ArmParams, GripperParams, ToolParams
from .env import TaskConfig
from .trpo import TrpoConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    n_iterations: int = 300
    eval_trials: int = 30
    eval_every: int = 10
    output_dir: str = "runs"
    proxy_friction_multiplier: float = 1.3
    sweep_multipliers: tuple = (1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0)

    def __post_init__(self):
        if self.n_iterations < 0 or self.eval_trials < 1 or self.eval_every < 1:
            raise ValueError("n_iterations >= 0, eval_trials >= 1 and eval_every >= 1 required")
        if not self.proxy_friction_multiplier > 0 or any(not m > 0 for m in self.sweep_multipliers):
            raise ValueError("friction multipliers must be positive")


SECTIONS = {
    "experiment": RunSettings,
    "task": TaskConfig,
    "tool": ToolParams,
    "arm": ArmParams,
    "gripper": GripperParams,
    "actuation": ActuationConfig,
    "trpo": TrpoConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: RunSettings = field(default_factory=RunSettings)
    task: TaskConfig = field(default_factory=TaskConfig)
    tool: ToolParams = field(default_factory=ToolParams)
    arm: ArmParams = field(default_factory=ArmParams)
    gripper: GripperParams = field(default_factory=GripperParams)
    actuation: ActuationConfig = field(default_factory=ActuationConfig)
    trpo: TrpoConfig = field(default_factory=TrpoConfig)

    def __post_init__(self):
        g = self.gripper
        if not g.finger_min <= self.task.grasp_distance < g.contact_distance:
            raise ConfigError("task.grasp_distance must lie in [gripper.finger_min, gripper.contact_distance)")

    @property
    def seed(self) -> int:
        return self.experiment.seed

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, experiment=replace(self.experiment, seed=int(seed)))

    def with_idealized(self, idealized: bool) -> "ExperimentConfig":
        return replace(self, actuation=replace(self.actuation, idealized=bool(idealized)))

    def override(self, section: str, **values) -> "ExperimentConfig":
        return replace(self, **{section: replace(getattr(self, section), **values)})

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for name in SECTIONS:
            obj = getattr(self, name)
            cp[name] = {f.name: _format(getattr(obj, f.name)) for f in fields(obj)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()[:12]


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(x) for x in raw.replace(",", " ").split())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from exc


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    parts = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        cls = SECTIONS[section]
        defaults = cls()
        known = {f.name for f in fields(cls)}
        values = {}
        for key, raw in cp[section].items():
            if key not in known:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            values[key] = _parse(raw, getattr(defaults, key), f"{source} [{section}] {key}")
        try:
            parts[section] = replace(defaults, **values)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source} [{section}]: {exc}") from exc
    try:
        return ExperimentConfig(**parts)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))


def as_dict(config: ExperimentConfig) -> dict:
    return dataclasses.asdict(config)
