"""INI run configuration: flat sections mapped onto the library's dataclasses.

Unknown sections and keys are rejected by name so a typo never silently
falls back to a default.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .bench.data import DataConfig
from .bench.teacher import PretrainConfig
from .bench.train import TrainConfig, config_hash
from .encoder import ModelConfig
from .errors import InvalidParameterError

ENV_OUT = "PROMPTLAB_OUT"
DEFAULT_OUT = "runs"

# INI key -> dataclass field where the two differ
ALIASES = {"train": {"lambda": "lam"}}


class ConfigError(InvalidParameterError):
    """Bad configuration; the message names the offending section or key."""


@dataclass(frozen=True)
class RunSettings:
    seeds: tuple[int, ...] = (0, 1, 2)
    out: str = ""
    teacher_cache: str = ""
    workers: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise InvalidParameterError("seeds must not be empty")
        if self.workers < 1:
            raise InvalidParameterError("workers must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    run: RunSettings = field(default_factory=RunSettings)

    @property
    def key(self) -> str:
        """Hash of everything that affects results (the output location excluded)."""
        return config_hash(self.model, self.data, self.train, self.pretrain, list(self.run.seeds))

    def out_dir(self) -> Path:
        if self.run.out:
            return Path(self.run.out)
        return Path(os.environ.get(ENV_OUT, DEFAULT_OUT)) / f"run-{self.key}"

    def cache_dir(self) -> Path:
        if self.run.teacher_cache:
            return Path(self.run.teacher_cache)
        return Path(os.environ.get(ENV_OUT, DEFAULT_OUT)) / "teachers"


SECTIONS = ("model", "data", "train", "pretrain", "run")


def _ini_key(section: str, name: str) -> str:
    for key, target in ALIASES.get(section, {}).items():
        if target == name:
            return key
    return name


def _parse(value: str, default, key: str):
    value = value.strip()
    try:
        if isinstance(default, bool):
            lowered = value.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            cast = type(default[0]) if default else float
            return tuple(cast(v) for v in value.replace(" ", "").split(",") if v)
        return value
    except ValueError:
        raise ConfigError(f"cannot parse {key} = {value!r} as {type(default).__name__}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(f"{v:g}" if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _build(section: str, cls, values: dict):
    try:
        return cls(**values)
    except InvalidParameterError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def from_mapping(sections: dict[str, dict[str, str]], base: RunConfig | None = None) -> RunConfig:
    """Apply string key/values per section on top of ``base`` (defaults when omitted)."""
    base = base or RunConfig()
    parts = {}
    for section in SECTIONS:
        current = getattr(base, section)
        defaults = {_ini_key(section, f.name): (f.name, getattr(current, f.name)) for f in fields(current)}
        given = sections.get(section, {})
        for key in given:
            if key not in defaults:
                raise ConfigError(f"unknown key {key!r} in [{section}]; known: {', '.join(sorted(defaults))}")
        values = {name: getattr(current, name) for name, _ in defaults.values()}
        for key, raw in given.items():
            name, default = defaults[key]
            values[name] = _parse(raw, default, key)
        parts[section] = _build(section, type(current), values)
    for section in sections:
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]; known: {', '.join(SECTIONS)}")
    return RunConfig(**parts)


def load_config(path=None, base: RunConfig | None = None) -> RunConfig:
    if path is None:
        return base or RunConfig()
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case sensitive
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_mapping({s: dict(parser[s]) for s in parser.sections()}, base)


def dump_config(cfg: RunConfig) -> str:
    """Every resolved value, in a form :func:`load_config` reads back to an equal config."""
    lines = []
    for section in SECTIONS:
        part = getattr(cfg, section)
        lines.append(f"[{section}]")
        for f in fields(part):
            lines.append(f"{_ini_key(section, f.name)} = {_format(getattr(part, f.name))}")
        lines.append("")
    return "\n".join(lines)


def with_overrides(cfg: RunConfig, seed=None, mask_threshold=None, lam=None, gamma=None,
                   no_fif=False, no_stp=False, no_hld=False, out=None) -> RunConfig:
    """Command-line flags layered over a loaded config."""
    train = {}
    if mask_threshold is not None:
        train["mask_threshold"] = float(mask_threshold)
    if lam is not None:
        train["lam"] = float(lam)
    if gamma is not None:
        train["gamma"] = float(gamma)
    for flag, name in ((no_fif, "fif"), (no_stp, "stp"), (no_hld, "hld")):
        if flag:
            train[name] = False
    try:
        new_train = replace(cfg.train, **train)
    except InvalidParameterError as exc:
        raise ConfigError(f"[train] {exc}") from None
    run = {}
    if seed is not None:
        run["seeds"] = (int(seed),)
    if out is not None:
        run["out"] = str(out)
    return replace(cfg, train=new_train, run=replace(cfg.run, **run))
