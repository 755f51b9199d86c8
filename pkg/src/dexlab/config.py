"""Run configuration: one flat key namespace over run settings and AgentConfig.

Layers are merged lowest first:
built-in defaults < config file < suite override < command-line flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .agents import AgentConfig, coerce_numeric_fields
from .envs import ENV_REGISTRY
from .errors import ConfigurationError, UsageError


@dataclass
class RunConfig:
    env: str = "point_pickplace"
    total_steps: int = 100_000
    eval_every: int = 5_000
    seed: int = 0
    demo_path: str | None = None
    demo_episodes: int = 100
    demo_seed: int = 0
    label: str | None = None
    agent: AgentConfig = field(default_factory=AgentConfig)

    def __post_init__(self):
        coerce_numeric_fields(self)
        if self.env not in ENV_REGISTRY:
            raise ConfigurationError(f"unknown environment {self.env!r}; choose from {sorted(ENV_REGISTRY)}")
        if self.total_steps < 0 or self.eval_every < 0:
            raise ConfigurationError("total_steps and eval_every must be non-negative")
        if self.demo_episodes < 0:
            raise ConfigurationError("demo_episodes must be non-negative")

    @property
    def variant(self) -> str:
        return self.agent.variant

    @property
    def agent_label(self) -> str:
        return self.label or self.agent.variant

    def to_flat(self) -> dict:
        flat = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "agent"}
        flat.update(self.agent.to_dict())
        return flat

    def dump(self) -> str:
        return yaml.safe_dump(self.to_flat(), sort_keys=True, default_flow_style=None)


RUN_KEYS = tuple(f.name for f in fields(RunConfig) if f.name != "agent")
AGENT_KEYS = tuple(AgentConfig.field_names())
ALL_KEYS = frozenset(RUN_KEYS + AGENT_KEYS)


def check_keys(layer: dict, source: str) -> None:
    unknown = sorted(set(layer) - ALL_KEYS)
    if unknown:
        raise UsageError(f"unknown configuration key(s) {unknown} in {source}")


def resolve(*layers: dict) -> RunConfig:
    """Merge flat layers (later wins) over the built-in defaults."""
    merged: dict = {}
    for layer in layers:
        merged.update(layer or {})
    check_keys(merged, "merged configuration")
    run_kw = {k: merged[k] for k in RUN_KEYS if k in merged}
    agent_kw = {k: merged[k] for k in AGENT_KEYS if k in merged}
    if "hidden" in agent_kw:
        agent_kw["hidden"] = tuple(agent_kw["hidden"])
    try:
        agent = AgentConfig(**agent_kw)
        return RunConfig(agent=agent, **run_kw)
    except TypeError as exc:
        raise UsageError(str(exc)) from exc


def load_file(path) -> dict:
    """Read a flat YAML mapping; an empty file is an empty layer."""
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file {p} does not exist")
    data = yaml.safe_load(p.read_text()) or {}
    if not isinstance(data, dict):
        raise UsageError(f"config file {p} must hold a flat mapping")
    check_keys(data, str(p))
    return data


def parse_assignments(items) -> dict:
    """``key=value`` strings to a layer; values are parsed as YAML scalars or lists."""
    out = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = yaml.safe_load(v)
    check_keys(out, "--set")
    return out


def defaults() -> dict:
    return RunConfig().to_flat()
