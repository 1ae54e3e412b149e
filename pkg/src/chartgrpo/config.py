"""INI run configuration.

Sections map one-to-one onto dataclasses::

    [trainer]  -> TrainerConfig (minus reward_weights)
    [reward]   -> RewardWeights (alpha, beta, gamma) plus `enabled`
    [sampler]  -> SamplerConfig
    [limits]   -> ExecLimits

Unknown sections or keys raise ConfigError.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from chartgrpo.policy import SamplerConfig
from chartgrpo.rewards import REWARD_COMPONENTS, RewardWeights
from chartgrpo.sandbox import ExecLimits
from chartgrpo.trainer import TrainerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    limits: ExecLimits = field(default_factory=ExecLimits)
    enabled_rewards: tuple = REWARD_COMPONENTS


def _coerce(raw: str, kind, where: str):
    try:
        if kind is bool or kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {getattr(kind, '__name__', kind)}") from None
    raise ConfigError(f"{where}: unsupported field type {kind}")


def _section(parser, name: str, cls, skip=()) -> dict:
    if not parser.has_section(name):
        return {}
    types = {f.name: f.type for f in dataclasses.fields(cls) if f.name not in skip}
    out = {}
    for key, raw in parser.items(name):
        if key not in types:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        out[key] = _coerce(raw, types[key], f"[{name}] {key}")
    return out


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive field names
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from e
    unknown = set(parser.sections()) - {"trainer", "reward", "sampler", "limits"}
    if unknown:
        raise ConfigError(f"{source}: unknown sections {sorted(unknown)}")

    reward = dict(parser.items("reward")) if parser.has_section("reward") else {}
    enabled = tuple(c.strip() for c in reward.pop("enabled", ",".join(REWARD_COMPONENTS)).split(",") if c.strip())
    bad = set(enabled) - set(REWARD_COMPONENTS)
    if bad:
        raise ConfigError(f"[reward] enabled: unknown components {sorted(bad)}")
    weights = {}
    for key, raw in reward.items():
        if key not in ("alpha", "beta", "gamma"):
            raise ConfigError(f"[reward] unknown key {key!r}")
        weights[key] = _coerce(raw, float, f"[reward] {key}")

    try:
        trainer = TrainerConfig(reward_weights=RewardWeights(**weights),
                                **_section(parser, "trainer", TrainerConfig, skip=("reward_weights",)))
        sampler = SamplerConfig(**_section(parser, "sampler", SamplerConfig))
        limits = ExecLimits(**_section(parser, "limits", ExecLimits))
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{source}: {e}") from e
    return RunConfig(trainer, sampler, limits, enabled)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: config file not found")
    return parse_config(path.read_text(), str(path))


def dump_config(cfg: RunConfig) -> str:
    """Inverse of parse_config for every scalar field."""
    def fmt(v):
        return ("true" if v else "false") if isinstance(v, bool) else repr(v)

    lines = ["[trainer]"]
    for f in dataclasses.fields(cfg.trainer):
        if f.name != "reward_weights":
            lines.append(f"{f.name} = {fmt(getattr(cfg.trainer, f.name))}")
    w = cfg.trainer.reward_weights
    lines += ["", "[reward]", f"alpha = {w.alpha!r}", f"beta = {w.beta!r}", f"gamma = {w.gamma!r}",
              f"enabled = {','.join(cfg.enabled_rewards)}", "", "[sampler]"]
    lines += [f"{f.name} = {fmt(getattr(cfg.sampler, f.name))}" for f in dataclasses.fields(cfg.sampler)]
    lines += ["", "[limits]"]
    lines += [f"{f.name} = {fmt(getattr(cfg.limits, f.name))}" for f in dataclasses.fields(cfg.limits)]
    return "\n".join(lines) + "\n"
