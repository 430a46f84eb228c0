"""Run configuration: a YAML file whose nested keys mirror the engine configs.

Example::

    problem: branin
    budget: 200
    parallelism: 1
    seed: 0
    surrogate: dngo
    network:
      epochs: 500
    sampler:
      n_samples: 10
    acquisition:
      n_candidates: 1000

Unknown keys raise ``ConfigError`` naming the key path and its line.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field, replace
from typing import Any, Optional

import yaml

from .acquisition import AcquisitionConfig
from .benchmarks import PROBLEMS
from .constraint import ConstraintHyperparams
from .network import NetworkConfig
from .optimizer import EngineConfig, SamplerConfig

SECTIONS = {
    "network": NetworkConfig,
    "sampler": SamplerConfig,
    "acquisition": AcquisitionConfig,
    "constraint": ConstraintHyperparams,
}
ENGINE_KEYS = ("initial_design", "surrogate", "warm_start")
# constraint settings for problems whose validity is deterministic, unless set explicitly
NOISELESS_CONSTRAINT = {"likelihood": "step_approx", "weight_prior_precision": 10.0}


class ConfigError(ValueError):
    pass


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a dot, e.g. 1e-4."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


@dataclass(frozen=True)
class RunConfig:
    problem: str = "branin"
    budget: int = 200
    parallelism: int = 1
    seed: int = 0
    repeats: int = 1
    noise: float = 0.0
    engine: EngineConfig = field(default_factory=EngineConfig)

    def __post_init__(self):
        if self.budget < 1 or self.parallelism < 1 or self.parallelism > self.budget:
            raise ConfigError("need budget >= parallelism >= 1")
        if self.repeats < 1:
            raise ConfigError("repeats must be positive")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("problem", "budget", "parallelism", "seed", "repeats", "noise")}
        out.update(engine_to_dict(self.engine))
        return out


def engine_to_dict(engine: EngineConfig) -> dict:
    out = {k: getattr(engine, k) for k in ENGINE_KEYS}
    for name in SECTIONS:
        section = dataclasses.asdict(getattr(engine, name))
        out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
    return out


def _key_lines(text: str) -> dict:
    """Map dotted key paths to 1-based line numbers."""
    lines: dict = {}

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                path = f"{prefix}{key.value}"
                lines[path] = key.start_mark.line + 1
                walk(value, path + ".")

    try:
        walk(yaml.compose(text, Loader=_Loader), "")
    except yaml.YAMLError:
        pass
    return lines


def _where(lines, path):
    return f"{path} (line {lines[path]})" if path in lines else path


def _build(cls, values: dict, prefix: str, lines: dict):
    if not isinstance(values, dict):
        raise ConfigError(f"{_where(lines, prefix.rstrip('.'))}: expected a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown key {_where(lines, prefix + str(key))}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{_where(lines, prefix.rstrip('.'))}: {exc}") from exc


def build_config(values: dict, lines: Optional[dict] = None) -> RunConfig:
    """Validate a nested mapping into a ``RunConfig``."""
    lines = lines or {}
    values = dict(values or {})
    top = {}
    for key in ("problem", "budget", "parallelism", "seed", "repeats", "noise"):
        if key in values:
            top[key] = values.pop(key)
    engine_kwargs = {}
    for key in ENGINE_KEYS:
        if key in values:
            engine_kwargs[key] = values.pop(key)
    constraint_keys = set(values.get("constraint") or {})
    for name, cls in SECTIONS.items():
        if name in values:
            engine_kwargs[name] = _build(cls, values.pop(name), name + ".", lines)
    if values:
        raise ConfigError(f"unknown key {_where(lines, str(next(iter(values))))}")
    try:
        engine = EngineConfig(**engine_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    try:
        config = RunConfig(engine=engine, **top)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return _constraint_defaults(config, constraint_keys)


def _constraint_defaults(config: RunConfig, explicit: set) -> RunConfig:
    """Switch unset constraint settings to the noiseless defaults when the problem calls for it."""
    if config.problem not in PROBLEMS or not PROBLEMS[config.problem]().noiseless_constraint:
        return config
    updates = {k: v for k, v in NOISELESS_CONSTRAINT.items() if k not in explicit}
    if not updates:
        return config
    engine = replace(config.engine, constraint=replace(config.engine.constraint, **updates))
    return replace(config, engine=engine)


def load_config(path: str, overrides: Optional[dict] = None) -> RunConfig:
    """Read a YAML config file; ``overrides`` (from flags) win over file values."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        values = yaml.load(text, Loader=_Loader) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(values, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return build_config(deep_merge(values, overrides or {}), _key_lines(text))


def deep_merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def parse_value(text: str) -> Any:
    return yaml.load(text, Loader=_Loader)


def merge_dotted(values: dict, dotted: str, value) -> None:
    """Set ``a.b.c = value`` inside a nested dict."""
    parts = dotted.split(".")
    node = values
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{dotted}: {p} is not a section")
    node[parts[-1]] = value
