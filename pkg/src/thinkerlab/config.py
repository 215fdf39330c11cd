"""Dataclass configuration tree and its JSON (de)serialization.

A full experiment is one JSON document; unknown keys anywhere in the
document are rejected so stale configs fail loudly instead of silently
running with defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, ClassVar

from .errors import ConfigError

AUGMENT_CHOICES = ("none", "cutout_color", "crop", "thinker")
AGENT_BY_AUGMENT = {"none": "ppo", "cutout_color": "cutout", "crop": "crop", "thinker": "thinker"}
AUGMENT_BY_AGENT = {v: k for k, v in AGENT_BY_AUGMENT.items()}


@dataclass
class EnvConfig:
    """ColorMaze parameters. ``grid_size`` must be odd and >= 5."""

    obs_size: int = 64
    grid_size: int = 9
    style_families: int = 6
    n_train_levels: int = 50
    max_steps: int = 256
    holdout_styles: bool = False

    def validate(self) -> None:
        if self.obs_size < 8:
            raise ConfigError(f"obs_size must be >= 8, got {self.obs_size}")
        if self.grid_size < 5 or self.grid_size % 2 == 0:
            raise ConfigError(f"grid_size must be odd and >= 5, got {self.grid_size}")
        if self.style_families < 2:
            raise ConfigError(f"style_families must be >= 2, got {self.style_families}")
        if self.n_train_levels < 1:
            raise ConfigError(f"n_train_levels must be >= 1, got {self.n_train_levels}")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")


@dataclass
class PpoHyper:
    """PPO optimization hyperparameters (full-scale defaults)."""

    gamma: float = 0.999
    gae_lambda: float = 0.95
    lr: float = 5.0e-4
    epochs: int = 3
    minibatch: int = 2048
    train_batch: int = 16384
    clip: float = 0.2
    vf_clip: float = 0.2
    vf_coeff: float = 0.5
    ent_coeff: float = 0.01
    kl_coeff: float = 0.0
    target_kl: float = 0.01
    grad_clip: float = 0.5
    rollout_fragment: int = 256

    # kl_coeff = 0 means no KL penalty term; target_kl only guards epoch
    # early-stopping. The clipped value-loss formulation is one standard
    # reading of "clip for the value"; see ppo.ppo_loss.
    UNPINNED: ClassVar[tuple[str, ...]] = ("target_kl_semantics", "vf_clip_semantics")

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError("gamma and gae_lambda must lie in [0, 1]")
        if self.train_batch < self.minibatch:
            raise ConfigError("train_batch must be >= minibatch")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")


@dataclass
class PolicyNetConfig:
    """Convolutional torso sizing for the policy/value network."""

    channels: tuple[int, ...] = (16, 32, 32)
    dense: int = 256

    def validate(self) -> None:
        if len(self.channels) < 1 or any(c < 1 for c in self.channels):
            raise ConfigError(f"invalid channel spec {self.channels}")


@dataclass
class GanConfig:
    """Translator training hyperparameters.

    lambda_* follow the source protocol; optimizer choice, batch size,
    critic steps and normalization are conventional adversarial-training
    values (the protocol leaves them open).
    """

    iterations: int = 500
    batch_size: int = 16
    n_critic: int = 5
    lr: float = 1.0e-4
    beta1: float = 0.5
    beta2: float = 0.999
    lambda_cls: float = 1.0
    lambda_rec: float = 10.0
    lambda_gp: float = 10.0
    base_channels: int = 32
    res_blocks: int = 6

    UNPINNED: ClassVar[tuple[str, ...]] = ("batch_size", "n_critic", "lr", "beta1", "beta2")

    def validate(self) -> None:
        if self.iterations < 1 or self.batch_size < 1 or self.n_critic < 1:
            raise ConfigError("iterations, batch_size and n_critic must be >= 1")
        if self.res_blocks < 0:
            raise ConfigError("res_blocks must be >= 0")


@dataclass
class PipelineConfig:
    """Bootstrap (clustering + translator) and translation options."""

    n_clusters: int = 3
    # bounded by the unique-observation capacity of the train levels
    # (ColorMaze renders are keyed by level seed and agent cell)
    init_dataset_size: int = 1000
    translate_enabled: bool = True
    translate_prob: float = 1.0
    feature_extractor: str = "avgpool8"
    balanced_clusters: bool = True
    # Re-fitting the translator mid-run is intentionally not implemented;
    # the hook exists so a config can state the choice explicitly.
    retrain_translator: bool = False

    def validate(self) -> None:
        if self.n_clusters < 2:
            raise ConfigError(f"n_clusters must be >= 2, got {self.n_clusters}")
        if not 0.0 <= self.translate_prob <= 1.0:
            raise ConfigError("translate_prob must lie in [0, 1]")
        if self.retrain_translator:
            raise ConfigError("retrain_translator is not supported; the translator is trained once")


@dataclass
class ExperimentConfig:
    """One experiment: environment, agent selection, budgets, output."""

    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoHyper = field(default_factory=PpoHyper)
    policy_net: PolicyNetConfig = field(default_factory=PolicyNetConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    augment: str = "none"
    seeds: tuple[int, ...] = (0, 1, 2)
    total_steps: int = 300_000
    eval_every: int = 50_000
    eval_episodes: int = 128
    n_envs: int = 8
    output_dir: str = "runs"
    name: str = ""

    @property
    def agent(self) -> str:
        return AGENT_BY_AUGMENT[self.augment]

    def validate(self) -> None:
        self.env.validate()
        self.ppo.validate()
        self.policy_net.validate()
        self.gan.validate()
        self.pipeline.validate()
        if self.augment not in AUGMENT_CHOICES:
            raise ConfigError(f"augment must be one of {AUGMENT_CHOICES}, got {self.augment!r}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.total_steps < 1 or self.eval_every < 1 or self.eval_episodes < 1:
            raise ConfigError("total_steps, eval_every and eval_episodes must be >= 1")
        if self.n_envs < 1:
            raise ConfigError("n_envs must be >= 1")
        if self.ppo.train_batch % (self.n_envs * self.ppo.rollout_fragment) != 0:
            raise ConfigError(
                "train_batch must be a multiple of n_envs * rollout_fragment "
                f"({self.n_envs} * {self.ppo.rollout_fragment})"
            )

    def with_agent(self, agent: str) -> "ExperimentConfig":
        if agent not in AUGMENT_BY_AGENT:
            raise ConfigError(f"agent must be one of {tuple(AUGMENT_BY_AGENT)}, got {agent!r}")
        return dataclasses.replace(self, augment=AUGMENT_BY_AGENT[agent])


def desk_config(**overrides: Any) -> ExperimentConfig:
    """CPU-scale profile: 32x32 observations, halved network widths,
    proportionally smaller train batches. Budget fields keep their defaults
    unless overridden."""
    cfg = ExperimentConfig(
        env=EnvConfig(obs_size=32),
        ppo=PpoHyper(train_batch=4096, minibatch=512),
        policy_net=PolicyNetConfig(channels=(8, 16, 16), dense=256),
        gan=GanConfig(base_channels=16, res_blocks=3),
        n_envs=16,
    )
    return dataclasses.replace(cfg, **overrides)


def _from_dict(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        sub = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(f.type) or f.type in _NESTED:
            kwargs[name] = _from_dict(_NESTED[f.type], value, sub)
        elif name in ("seeds", "channels"):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


_NESTED = {
    "EnvConfig": EnvConfig,
    "PpoHyper": PpoHyper,
    "PolicyNetConfig": PolicyNetConfig,
    "GanConfig": GanConfig,
    "PipelineConfig": PipelineConfig,
}


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(data: dict) -> ExperimentConfig:
    cfg = _from_dict(ExperimentConfig, data, "")
    cfg.validate()
    return cfg


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return config_from_dict(data)
