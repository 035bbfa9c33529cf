"""Experiment configuration: presets, TOML parsing and serialization.

A config file is TOML with an optional top-level ``preset`` naming the
defaults to start from, then ``[env]``, ``[search]``, ``[train]`` and
``[sweep]`` tables whose keys override single fields.  Unknown keys are
errors.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import tomli
import tomli_w

from .learn.training import TrainConfig
from .search import SearchConfig

ENV_KINDS = ("compass", "procmaze", "electric_procmaze", "hier_electric_procmaze")
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
SWEEP_ALPHAS = (6.25e-5, 1.25e-4, 2.5e-4, 5e-4, 1e-3)
SWEEP_BETAS = (0.01, 0.1, 1.0)


@dataclass
class EnvConfig:
    env: str = "electric_procmaze"
    width: int = 7
    timeout: int = 120
    controller_width: int = 8
    discount: float = 0.99

    def validate(self):
        if self.env not in ENV_KINDS:
            raise ValueError(f"env.env must be one of {ENV_KINDS}, got {self.env!r}")
        if self.width < 3 or self.timeout < 1 or self.controller_width < 3:
            raise ValueError("env.width >= 3, env.timeout >= 1 and env.controller_width >= 3 required")
        if self.env != "compass" and self.width % 2 == 0:
            raise ValueError("maze widths must be odd")


@dataclass
class SweepConfig:
    alphas: list = field(default_factory=lambda: list(SWEEP_ALPHAS))
    betas: list = field(default_factory=lambda: list(SWEEP_BETAS))
    final_fraction: float = 0.2  # last 100k of 500k steps

    def validate(self):
        if not self.alphas or not self.betas:
            raise ValueError("sweep needs at least one alpha and one beta")
        if not 0 < self.final_fraction <= 1:
            raise ValueError("sweep.final_fraction must lie in (0, 1]")


@dataclass
class ExperimentConfig:
    name: str = "electric_procmaze7"
    env: EnvConfig = field(default_factory=EnvConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    output_dir: str = "runs"
    sweep: SweepConfig | None = None

    def validate(self) -> ExperimentConfig:
        self.env.validate()
        num_actions = 4
        self.train.validate(self.search, num_actions)
        if self.search.discount != self.env.discount:
            raise ValueError("search.discount must equal env.discount")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.sweep is not None:
            self.sweep.validate()
        return self

    def to_dict(self) -> dict:
        d = {"name": self.name, "seeds": list(self.seeds), "output_dir": self.output_dir,
             "env": asdict(self.env), "search": asdict(self.search), "train": asdict(self.train)}
        if self.sweep is not None:
            d["sweep"] = asdict(self.sweep)
        return d


def _preset_epm7() -> ExperimentConfig:
    return ExperimentConfig()


def _preset_compass() -> ExperimentConfig:
    return ExperimentConfig(
        name="compass",
        env=EnvConfig("compass", 15, 20),
        search=SearchConfig(simulation_budget=50, rollout_length=20, beta=0.01),
        train=TrainConfig(K=20, N=4),
    )


def _preset_hier() -> ExperimentConfig:
    return ExperimentConfig(
        name="hier",
        env=EnvConfig("hier_electric_procmaze", 5, 960, 8),
        search=SearchConfig(rollout_length=8, beta=0.01),
        train=TrainConfig(K=8, hidden_units=800, total_env_steps=2_000_000),
    )


PRESETS = {
    "electric_procmaze7": _preset_epm7,
    "compass": _preset_compass,
    "hier": _preset_hier,
}


def preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _override(obj, table: dict, section: str):
    known = {f.name: f for f in fields(obj)}
    unknown = set(table) - set(known)
    if unknown:
        raise ValueError(f"unknown keys in [{section}]: {sorted(unknown)}")
    cast = {}
    for k, v in table.items():
        current = getattr(obj, k)
        if isinstance(current, bool) or isinstance(v, bool):
            cast[k] = v
        elif isinstance(current, float) and isinstance(v, int):
            cast[k] = float(v)
        elif isinstance(current, int) and isinstance(v, float) and v.is_integer():
            cast[k] = int(v)
        else:
            cast[k] = v
    return replace(obj, **cast)


def config_from_dict(d: dict) -> ExperimentConfig:
    d = copy.deepcopy(d)
    base = d.pop("preset", None) or (d["name"] if d.get("name") in PRESETS else "electric_procmaze7")
    cfg = preset(base)
    cfg.name = d.pop("name", cfg.name)
    if "seeds" in d:
        cfg.seeds = [int(s) for s in d.pop("seeds")]
    if "output_dir" in d:
        cfg.output_dir = str(d.pop("output_dir"))
    for section, attr in (("env", "env"), ("search", "search"), ("train", "train")):
        if section in d:
            setattr(cfg, attr, _override(getattr(cfg, attr), d.pop(section), section))
    if "sweep" in d:
        cfg.sweep = _override(SweepConfig(), d.pop("sweep"), "sweep")
    if d:
        raise ValueError(f"unknown top-level keys: {sorted(d)}")
    return cfg.validate()


def parse_config(text: str) -> ExperimentConfig:
    return config_from_dict(tomli.loads(text))


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def serialize_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())
