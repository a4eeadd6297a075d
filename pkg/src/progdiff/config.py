"""Experiment configuration: nested TOML sections with documented defaults.

Every field has a default except ``dataset.name``. Unknown keys are errors.
The defaults are the reference toy configuration.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from .datasets import DATASETS
from .pruning import PROXY_KINDS
from .allocation import SCHEDULE_SHAPES


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted name of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class DatasetConfig:
    name: str = ""
    size: int = 10000  # training points drawn once from the generator


@dataclass
class ScheduleConfig:
    kind: str = "cosine"  # "cosine" or "linear"
    T: int = 100
    beta_start: float = 1e-4  # linear only
    beta_end: float = 0.02  # linear only
    offset: float = 0.008  # cosine only


@dataclass
class ModelConfig:
    hidden_widths: tuple = (64, 64, 64)
    time_embed_dim: int = 16


@dataclass
class AllocationConfig:
    k: float = 0.5
    groups: int = 5
    shape: str = "snr"  # per-timestep FLOPs schedule, see allocation.SCHEDULE_SHAPES


@dataclass
class PruningConfig:
    enabled: bool = True
    proxy: str = "magnitude"
    rounds: int = 5
    candidates: int = 3
    eval_batches: int = 4
    eval_batch_size: int = 256
    flops_ratio: float = 0.7  # kept-FLOPs fraction for the stability study


@dataclass
class TrainingConfig:
    seed: int = 0
    stage1_steps: int = 5000
    stage2_steps: int = 1000  # per group
    single_stage_steps: int = 2000  # per group, when matched_budget is false
    matched_budget: bool = True
    batch_size: int = 128
    lr: float = 1e-3
    finetune_lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    checkpoint_every: int = 1000


@dataclass
class SamplingConfig:
    steps: int = 50
    n_samples: int = 2000
    seed: int = 1234


@dataclass
class LLMConfig:
    temperature: float = 0.7
    timeout: float = 60.0
    retries: int = 3
    stub: bool = False  # use the offline deterministic stub instead of the endpoint


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    allocation: AllocationConfig = field(default_factory=AllocationConfig)
    pruning: PruningConfig = field(default_factory=PruningConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    llm: LLMConfig = field(default_factory=LLMConfig)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"]["hidden_widths"] = list(self.model.hidden_widths)
        return d

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with some fields of some sections replaced: ``replace(training={"seed": 3})``."""
        d = self.to_dict()
        for name, fields in sections.items():
            d[name].update(fields)
        return config_from_dict(d)

    def validate(self) -> "ExperimentConfig":
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(key, msg)

        need(self.dataset.name in DATASETS, "dataset.name", f"must be one of {DATASETS}, got {self.dataset.name!r}")
        need(self.dataset.size >= 1, "dataset.size", "must be positive")
        need(self.schedule.kind in ("cosine", "linear"), "schedule.kind", "must be 'cosine' or 'linear'")
        need(self.schedule.T >= 1, "schedule.T", "must be positive")
        need(0 < self.schedule.beta_start <= self.schedule.beta_end < 1, "schedule.beta_start",
             "need 0 < beta_start <= beta_end < 1")
        need(self.schedule.offset > 0, "schedule.offset", "must be positive")
        need(len(self.model.hidden_widths) >= 1 and min(self.model.hidden_widths) >= 1,
             "model.hidden_widths", "need at least one positive width")
        need(self.model.time_embed_dim >= 2 and self.model.time_embed_dim % 2 == 0,
             "model.time_embed_dim", "must be a positive even number")
        need(0 < self.allocation.k <= 1, "allocation.k", f"must lie in (0, 1], got {self.allocation.k}")
        need(self.allocation.groups >= 1, "allocation.groups", "must be >= 1")
        need(self.allocation.shape in SCHEDULE_SHAPES, "allocation.shape", f"must be one of {SCHEDULE_SHAPES}")
        need(self.pruning.proxy in PROXY_KINDS, "pruning.proxy", f"must be one of {PROXY_KINDS}")
        for key in ("rounds", "candidates", "eval_batches", "eval_batch_size"):
            need(getattr(self.pruning, key) >= 1, f"pruning.{key}", "must be >= 1")
        need(0 < self.pruning.flops_ratio <= 1, "pruning.flops_ratio", "must lie in (0, 1]")
        for key in ("stage1_steps", "stage2_steps", "single_stage_steps"):
            need(getattr(self.training, key) >= 0, f"training.{key}", "must be >= 0")
        need(self.training.batch_size >= 1, "training.batch_size", "must be >= 1")
        need(self.training.checkpoint_every >= 1, "training.checkpoint_every", "must be >= 1")
        need(self.training.lr > 0 and self.training.finetune_lr > 0, "training.lr", "learning rates must be positive")
        need(1 <= self.sampling.steps <= self.schedule.T, "sampling.steps", "must lie in [1, schedule.T]")
        need(self.sampling.n_samples >= 1, "sampling.n_samples", "must be >= 1")
        need(self.llm.retries >= 0 and self.llm.timeout > 0, "llm.timeout", "need timeout > 0 and retries >= 0")
        return self


_SECTION_TYPES = {
    "dataset": DatasetConfig, "schedule": ScheduleConfig, "model": ModelConfig,
    "allocation": AllocationConfig, "pruning": PruningConfig, "training": TrainingConfig,
    "sampling": SamplingConfig, "llm": LLMConfig,
}


def _coerce(key: str, default, value):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, int) and not isinstance(v, bool)
                                                           for v in value):
            raise ConfigError(key, f"expected a list of integers, got {value!r}")
        return tuple(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    return value


def config_from_dict(d: dict) -> ExperimentConfig:
    sections = {}
    for name, body in d.items():
        if name not in _SECTION_TYPES:
            raise ConfigError(name, "unknown section")
        if not isinstance(body, dict):
            raise ConfigError(name, "expected a table")
        cls = _SECTION_TYPES[name]
        defaults = cls()
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in body.items():
            if key not in known:
                raise ConfigError(f"{name}.{key}", "unknown key")
            kwargs[key] = _coerce(f"{name}.{key}", getattr(defaults, key), value)
        sections[name] = cls(**kwargs)
    if "dataset" not in sections or not sections["dataset"].name:
        raise ConfigError("dataset.name", "required")
    return ExperimentConfig(**sections).validate()


def load_config(path) -> ExperimentConfig:
    """Read and validate a TOML experiment config."""
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"malformed config: {exc}") from exc
    return config_from_dict(raw)


def dumps_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def write_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dumps_config(cfg))


def reference_config(dataset: str = "eight-gaussians") -> ExperimentConfig:
    """The canonical toy configuration used by the acceptance suite."""
    return config_from_dict({"dataset": {"name": dataset}})
