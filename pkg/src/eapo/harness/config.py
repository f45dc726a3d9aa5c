"""Run configuration, read from INI-style ``key = value`` files.

Example::

    [run]
    env = grid_empty
    algo = eapo_ppo          ; eapo_ppo | eapo_trpo | ppo_entbonus | ppo_entreward
    seed = 0
    total_timesteps = 500000
    num_envs = 16
    num_steps = 128
    eval_every = 50000
    eval_episodes = 100
    hidden = 64, 64
    out = runs/eapo

    [estimator]
    gamma_v = 0.99
    lambda_v = 0.95
    gamma_h = 0.9
    lambda_h = 0.0
    tau = 0.003
    clip_epsilon = 0.2
    c1 = 0.5
    c2 = 1.0
    normalize_advantage = true

    [ppo]
    epochs = 4
    minibatch_size = 1024
    max_grad_norm = 0.5
    learning_rate = 5e-4
    popart = true

    [trpo]
    kl_delta = 0.07

    [baseline]
    c_ent = 0.0

Every key is optional; unknown sections or keys are rejected.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Tuple, Union

from ..algo import ALGORITHMS, PpoUpdateConfig, TrpoUpdateConfig
from ..core import EstimatorConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    env: str = "grid_empty"
    algo: str = "eapo_ppo"
    seed: int = 0
    total_timesteps: int = 500_000
    num_envs: int = 16
    num_steps: int = 128
    eval_every: int = 50_000
    eval_episodes: int = 100
    hidden: Tuple[int, ...] = (64, 64)
    out: str = "runs/default"
    c_ent: float = 0.0
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    ppo: PpoUpdateConfig = field(default_factory=PpoUpdateConfig)
    trpo: TrpoUpdateConfig = field(default_factory=TrpoUpdateConfig)

    def __post_init__(self):
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"algo must be one of {ALGORITHMS}, got {self.algo!r}")
        if self.num_envs <= 0 or self.num_steps <= 0 or self.eval_episodes < 0:
            raise ConfigError("num_envs and num_steps must be positive")
        batch = self.num_envs * self.num_steps
        if self.total_timesteps != 0 and self.total_timesteps < batch:
            raise ConfigError(f"total_timesteps must be 0 or >= num_envs * num_steps = {batch}")
        if self.eval_every <= 0:
            raise ConfigError("eval_every must be positive")

    @property
    def batch_size(self) -> int:
        return self.num_envs * self.num_steps

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        run = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
               if f.name not in ("estimator", "ppo", "trpo", "c_ent")}
        run["hidden"] = list(self.hidden)
        return {"run": run, "estimator": dataclasses.asdict(self.estimator),
                "ppo": dataclasses.asdict(self.ppo), "trpo": dataclasses.asdict(self.trpo),
                "baseline": {"c_ent": self.c_ent}}


def _convert(value: str, like: Any):
    if isinstance(like, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(float(value)) if "e" in value.lower() else int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        return tuple(int(v) for v in value.replace(",", " ").split())
    return value.strip()


_SECTIONS = {"estimator": EstimatorConfig, "ppo": PpoUpdateConfig, "trpo": TrpoUpdateConfig}


def config_from_dict(data: Dict[str, Dict[str, str]]) -> RunConfig:
    """Build a config from ``{section: {key: string value}}``."""
    defaults = {f.name: (f.default if f.default is not dataclasses.MISSING else f.default_factory())
                for f in dataclasses.fields(RunConfig)}
    run_kwargs: Dict[str, Any] = {}
    nested: Dict[str, Dict[str, Any]] = {name: {} for name in _SECTIONS}
    for section, items in data.items():
        for key, raw in items.items():
            if section == "run":
                if key not in defaults or key in _SECTIONS or key == "c_ent":
                    raise ConfigError(f"unknown key [run] {key}")
                run_kwargs[key] = _convert(str(raw), defaults[key])
            elif section == "baseline":
                if key != "c_ent":
                    raise ConfigError(f"unknown key [baseline] {key}")
                run_kwargs["c_ent"] = float(raw)
            elif section in _SECTIONS:
                cls = _SECTIONS[section]
                fields = {f.name: f.default for f in dataclasses.fields(cls)}
                if key not in fields:
                    raise ConfigError(f"unknown key [{section}] {key}")
                nested[section][key] = _convert(str(raw), fields[key])
            else:
                raise ConfigError(f"unknown section [{section}]")
    try:
        for name, cls in _SECTIONS.items():
            run_kwargs[name] = cls(**nested[name])
        return RunConfig(**run_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_config_text(text: str) -> Dict[str, Dict[str, str]]:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    parser.read_string(text)
    return {s: dict(parser.items(s)) for s in parser.sections()}


def load_config(path: Union[str, Path]) -> RunConfig:
    return config_from_dict(parse_config_text(Path(path).read_text()))


def dumps_config(cfg: RunConfig) -> str:
    lines = []
    for section, items in cfg.to_dict().items():
        lines.append(f"[{section}]")
        for key, value in items.items():
            if isinstance(value, (list, tuple)):
                value = ", ".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def with_overrides(cfg: RunConfig, overrides: Dict[str, str]) -> RunConfig:
    """Apply ``{"section.key": value}`` overrides (``run.seed``, ``estimator.tau`` ...)."""
    data = {s: {k: str(v) for k, v in items.items()} for s, items in cfg.to_dict().items()}
    for dotted, value in overrides.items():
        if "." not in dotted:
            raise ConfigError(f"override key must be section.key, got {dotted!r}")
        section, key = dotted.split(".", 1)
        data.setdefault(section, {})[key] = str(value)
    for section in data:
        for key, value in list(data[section].items()):
            if value.startswith("[") or value.startswith("("):
                data[section][key] = value.strip("[]()")
    return config_from_dict(data)
