"""Run configuration: defaults, JSON round-trip, and canonical hashing.

A config file is a JSON object whose keys mirror the dataclass fields
below; any subset may be given and overrides the defaults.  Unknown keys are
rejected.  ``load_config`` also accepts a benchmark run manifest (it then
reads the embedded "config" object), so a finished run can be reproduced
from its own manifest.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

from .dataset import DEFAULT_CLASS_FAMILIES, DEFAULT_CLASS_MIX
from .errors import ConfigError, FlowmiError
from .jsonutil import canonical_dumps, read_json
from .latentflow import IntegratorConfig, InterpolantConfig
from .mmvae import LossWeights
from .phantom import FAMILIES, PhantomSpec
from .tasks import DEFAULT_TASKS, parse_task


@dataclass
class DatasetConfig:
    n_studies: int = 200
    class_mix: dict = field(default_factory=lambda: dict(DEFAULT_CLASS_MIX))
    class_families: dict = field(default_factory=lambda: dict(DEFAULT_CLASS_FAMILIES))
    spec: PhantomSpec = field(default_factory=PhantomSpec)
    ratios: tuple = (0.7, 0.1, 0.2)
    mini_fraction: float = 0.05

    def validate(self):
        if self.n_studies < 20:
            raise ConfigError(f"n_studies must be at least 20, got {self.n_studies}")
        if any(w <= 0 for w in self.class_mix.values()):
            raise ConfigError("class_mix weights must be positive")
        for cls, family in self.class_families.items():
            if family not in FAMILIES:
                raise ConfigError(f"unknown family {family!r} for class {cls}")
        self.spec.validate()

    def to_dict(self) -> dict:
        return {
            "n_studies": self.n_studies,
            "class_mix": {str(k): v for k, v in self.class_mix.items()},
            "class_families": {str(k): v for k, v in self.class_families.items()},
            "spec": self.spec.to_dict(),
            "ratios": list(self.ratios),
            "mini_fraction": self.mini_fraction,
        }


@dataclass
class ModelConfig:
    latent_dim: int = 16
    hidden: tuple = (512,)
    velocity_hidden: tuple = (128, 128)
    direct_hidden: tuple = (512,)
    activation: str = "relu"
    logvar_bias_init: float = -5.0

    def validate(self):
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be positive, got {self.latent_dim}")
        for name in ("hidden", "velocity_hidden", "direct_hidden"):
            dims = getattr(self, name)
            if any(d < 1 for d in dims):
                raise ConfigError(f"{name} must hold positive widths, got {dims}")
        if self.activation not in ("tanh", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not math.isfinite(self.logvar_bias_init):
            raise ConfigError("logvar_bias_init must be finite")

    def to_dict(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "hidden": list(self.hidden),
            "velocity_hidden": list(self.velocity_hidden),
            "direct_hidden": list(self.direct_hidden),
            "activation": self.activation,
            "logvar_bias_init": self.logvar_bias_init,
        }


@dataclass
class OptimizerConfig:
    lr: float = 1e-4
    weight_decay: float = 0.01
    epochs: int = 200
    effective_batch: int = 8
    micro_batch: int = 8
    warmup_fraction: float = 0.05

    def validate(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.effective_batch < 1 or self.micro_batch < 1:
            raise ConfigError("batch sizes must be positive")
        if self.effective_batch % self.micro_batch != 0:
            raise ConfigError(
                f"micro_batch {self.micro_batch} must divide effective_batch "
                f"{self.effective_batch}"
            )
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "weight_decay": self.weight_decay,
            "epochs": self.epochs, "effective_batch": self.effective_batch,
            "micro_batch": self.micro_batch,
            "warmup_fraction": self.warmup_fraction,
        }


@dataclass
class RunConfig:
    seed: int = 1
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    interpolant: InterpolantConfig = field(default_factory=InterpolantConfig)
    flow_target: str = "endpoint"
    flow_pair_source: str = "mean"
    tasks: tuple = DEFAULT_TASKS

    def validate(self):
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        self.dataset.validate()
        self.model.validate()
        self.optimizer.validate()
        if self.flow_target not in ("endpoint", "conditional"):
            raise ConfigError(f"unknown flow_target {self.flow_target!r}")
        if self.flow_pair_source not in ("mean", "sample"):
            raise ConfigError(f"unknown flow_pair_source {self.flow_pair_source!r}")
        if not self.tasks:
            raise ConfigError("at least one task is required")
        for task in self.tasks:
            needed = {
                cls for cls, family in self.dataset.class_families.items()
                if family == task.family
            }
            if not any(cls in self.dataset.class_mix for cls in needed):
                raise ConfigError(
                    f"task {task.label} needs family {task.family}, which no "
                    "configured class generates"
                )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "dataset": self.dataset.to_dict(),
            "model": self.model.to_dict(),
            "weights": {
                "lambda_pull": self.weights.lambda_pull,
                "beta_kl": self.weights.beta_kl,
            },
            "optimizer": self.optimizer.to_dict(),
            "integrator": self.integrator.to_dict(),
            "interpolant": {"sigma": self.interpolant.sigma},
            "flow_target": self.flow_target,
            "flow_pair_source": self.flow_pair_source,
            "tasks": [task.label for task in self.tasks],
        }

    def canonical_json(self) -> str:
        return canonical_dumps(self.to_dict())

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def _merge_section(defaults, overrides: dict, label: str, tuple_fields=(),
                   int_key_fields=()):
    known = {f for f in defaults.__dataclass_fields__}
    updates = {}
    for key, value in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown {label} field {key!r}")
        if key in tuple_fields:
            value = tuple(value)
        if key in int_key_fields:
            value = {int(k): v for k, v in value.items()}
        updates[key] = value
    return replace(defaults, **updates)


def config_from_dict(data: dict) -> RunConfig:
    """Build a RunConfig from a (possibly partial) plain dict."""
    cfg = RunConfig()
    data = dict(data)
    try:
        if "dataset" in data:
            section = dict(data.pop("dataset"))
            if "spec" in section:
                section["spec"] = PhantomSpec.from_dict(section["spec"])
            cfg.dataset = _merge_section(
                cfg.dataset, section, "dataset", tuple_fields=("ratios",),
                int_key_fields=("class_mix", "class_families"),
            )
        if "model" in data:
            cfg.model = _merge_section(
                cfg.model, data.pop("model"), "model",
                tuple_fields=("hidden", "velocity_hidden", "direct_hidden"),
            )
        if "weights" in data:
            cfg.weights = _merge_section(cfg.weights, data.pop("weights"), "weights")
        if "optimizer" in data:
            cfg.optimizer = _merge_section(
                cfg.optimizer, data.pop("optimizer"), "optimizer"
            )
        if "integrator" in data:
            cfg.integrator = _merge_section(
                cfg.integrator, data.pop("integrator"), "integrator"
            )
        if "interpolant" in data:
            cfg.interpolant = _merge_section(
                cfg.interpolant, data.pop("interpolant"), "interpolant"
            )
        if "tasks" in data:
            cfg.tasks = tuple(parse_task(text) for text in data.pop("tasks"))
        for key in ("seed", "flow_target", "flow_pair_source"):
            if key in data:
                setattr(cfg, key, data.pop(key))
    except FlowmiError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if data:
        raise ConfigError(f"unknown config fields: {sorted(data)}")
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    """Load a config file; a benchmark run manifest works too (its embedded
    config is used)."""
    data = read_json(path)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config root must be a JSON object")
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    return config_from_dict(data)
