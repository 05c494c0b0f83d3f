"""Run configuration: one dataclass tree, JSON round-trip, stable hashing.

Every tunable in the library lives here; a resolved config (committee specs
materialized) is embedded in each run's metrics file together with its hash,
so artifacts are reproducible from their own metadata.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .datagen import GenProfile
from .diffusion import NoiseSchedule, make_schedule
from .model import MLPArch
from .rewards import RewardCommittee, default_committee


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


@dataclass
class ScheduleConfig:
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class ArchConfig:
    hidden: tuple[int, ...] = (64, 64)
    time_emb_dim: int = 8
    activation: str = "tanh"


@dataclass
class GenConfig:
    n_pairs: int = 2000
    d: int = 4
    d_c: int = 4
    annotator_concentration: float = 0.3
    noise_scale: float = 0.6
    seed: int = 0


@dataclass
class CommitteeConfig:
    size: int = 3
    rho: float = 1.5
    specs: list | None = None  # explicit spec dicts; filled from (size, rho) on resolve


@dataclass
class ThresholdConfig:
    n_intervals: int = 10
    percentile: float = 0.8
    acc_floor: float = 0.7
    raise_step: float = 0.05
    draws_per_pair: int = 4
    accuracy_draws: int = 8


@dataclass
class TrainConfig:
    iterations: int = 2
    pretrain_steps: int = 800
    lr_pretrain: float = 1e-3
    steps_cold: int = 1200
    steps_iter: int = 1200
    lr_cold: float = 1e-3
    lr_iter: float = 1e-4
    warmup_frac: float = 0.1
    batch_size: int = 32
    pseudo_batch_size: int = 32
    anchor_weight: float = 1.0
    pseudo_weight: float = 1.0
    test_frac: float = 0.02
    seed: int = 0


@dataclass
class EvalConfig:
    n_prompts: int = 16
    n_samples_per_prompt: int = 8
    seed: int = 2023


@dataclass
class PathsConfig:
    out_dir: str = "runs/run"
    dataset: str = "data/pairs.jsonl"


@dataclass
class RunConfig:
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    gen: GenConfig = field(default_factory=GenConfig)
    committee: CommitteeConfig = field(default_factory=CommitteeConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    beta_dpo: float = 2500.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _from_dict(cls, d, path="")


_SECTIONS = {
    "schedule": ScheduleConfig,
    "arch": ArchConfig,
    "gen": GenConfig,
    "committee": CommitteeConfig,
    "thresholds": ThresholdConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "paths": PathsConfig,
}


def _from_dict(cls, d: dict, path: str):
    if not isinstance(d, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys at {path or '<root>'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        sub = _SECTIONS.get(name) if cls is RunConfig else None
        if sub is not None:
            kwargs[name] = _from_dict(sub, value, f"{path}{name}.")
        elif name == "hidden":
            kwargs[name] = tuple(int(h) for h in value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad config at {path or '<root>'}: {e}") from e


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    return RunConfig.from_dict(data)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply 'dotted.path=value' overrides; values parse as JSON with a string
    fallback, so --set train.lr_cold=5e-4 and --set paths.out_dir=runs/a both work."""
    data = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key.path=value")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config path {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config path {key!r}")
        node[parts[-1]] = value
    return RunConfig.from_dict(data)


def resolve(cfg: RunConfig) -> RunConfig:
    """Materialize derived fields (explicit committee specs) so the embedded
    config fully determines the run."""
    if cfg.committee.specs is None:
        specs = default_committee(cfg.gen.d, cfg.committee.size, cfg.committee.rho).as_dicts()
        cfg = RunConfig.from_dict({**cfg.to_dict(),
                                   "committee": {"size": cfg.committee.size,
                                                 "rho": cfg.committee.rho,
                                                 "specs": specs}})
    return cfg


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(resolve(cfg).to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def build_schedule(cfg: RunConfig) -> NoiseSchedule:
    s = cfg.schedule
    try:
        return make_schedule(s.T, s.beta_start, s.beta_end)
    except ValueError as e:
        raise ConfigError(f"bad schedule config: {e}") from e


def build_arch(cfg: RunConfig) -> MLPArch:
    try:
        return MLPArch(d=cfg.gen.d, d_c=cfg.gen.d_c,
                       time_emb_dim=cfg.arch.time_emb_dim,
                       hidden=tuple(cfg.arch.hidden),
                       activation=cfg.arch.activation,
                       t_max=cfg.schedule.T)
    except ValueError as e:
        raise ConfigError(f"bad arch config: {e}") from e


def build_committee(cfg: RunConfig) -> RewardCommittee:
    try:
        if cfg.committee.specs is not None:
            return RewardCommittee.from_dicts(cfg.committee.specs)
        return default_committee(cfg.gen.d, cfg.committee.size, cfg.committee.rho)
    except (ValueError, KeyError, TypeError) as e:
        raise ConfigError(f"bad committee config: {e}") from e


def build_profile(cfg: RunConfig) -> GenProfile:
    g = cfg.gen
    try:
        return GenProfile(n_pairs=g.n_pairs, d=g.d, d_c=g.d_c,
                          committee=build_committee(cfg),
                          annotator_concentration=g.annotator_concentration,
                          noise_scale=g.noise_scale, seed=g.seed)
    except ValueError as e:
        raise ConfigError(f"bad generation config: {e}") from e
