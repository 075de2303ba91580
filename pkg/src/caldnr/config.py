"""Training configuration shared by the objective, trainer and CLI."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields

from .catu import ThetaSchedule
from .model import ModelConfig


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-2
    lr_decay_every: int = 10
    lr_decay_factor: float = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 5e-4
    alpha: float = 0.05
    loss_reduction: str = "mean"
    # model
    mode: str = "attention"
    embed_dim: int = 32
    hidden_dim: int = 64
    attention_gain: float = 1.0
    # theta schedule
    warmup_epochs: int = 5
    theta_start: float = 0.95
    theta_step: float = 0.025
    theta_floor: float = 0.6
    # queues
    queue_capacity: int = 64
    queue_min_size: int = 8
    # rejection
    rejection_mode: str = "corrected"
    # thresholds used when adaptive updating is off
    fixed_theta_pos: float = 0.9
    fixed_theta_neg: float = 0.7
    # ablation switches
    enable_cald: bool = True
    enable_canr: bool = True
    enable_catu: bool = True
    enable_csl: bool = True
    csl_use_pseudo: bool = True
    seed: int = 0

    def validate(self) -> None:
        for name in ("epochs", "batch_size", "queue_capacity", "queue_min_size", "lr_decay_every", "embed_dim", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError("adam betas must lie in [0, 1)")
        if self.weight_decay < 0 or self.alpha < 0:
            raise ValueError("weight_decay and alpha must be >= 0")
        if self.loss_reduction not in ("mean", "sum"):
            raise ValueError(f"loss_reduction must be 'mean' or 'sum', got {self.loss_reduction!r}")
        if self.rejection_mode not in ("corrected", "literal"):
            raise ValueError(f"rejection_mode must be 'corrected' or 'literal', got {self.rejection_mode!r}")
        if self.queue_min_size > self.queue_capacity:
            raise ValueError("queue_min_size exceeds queue_capacity")
        if self.lr_decay_factor <= 0:
            raise ValueError("lr_decay_factor must be positive")
        self.schedule().validate()
        ModelConfig(1, 1, self.embed_dim, self.hidden_dim, self.mode, self.attention_gain).validate()

    def schedule(self) -> ThetaSchedule:
        return ThetaSchedule(self.warmup_epochs, self.theta_start, self.theta_step, self.theta_floor)

    def model_config(self, num_categories: int, feature_dim: int) -> ModelConfig:
        return ModelConfig(num_categories, feature_dim, self.embed_dim, self.hidden_dim, self.mode, self.attention_gain)

    def lr_at_epoch(self, epoch: int) -> float:
        return self.lr / self.lr_decay_factor ** ((epoch - 1) // self.lr_decay_every)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def ablation(name: str, **overrides) -> TrainConfig:
    """Named module combinations used in the ablation study."""
    presets = {
        "full": {},
        "an": dict(enable_cald=False, enable_canr=False, enable_csl=False, enable_catu=False),
        "cald": dict(enable_canr=False),
        "canr": dict(enable_cald=False),
        "cald_fixed": dict(enable_canr=False, enable_catu=False),
        "canr_fixed": dict(enable_cald=False, enable_catu=False),
    }
    if name not in presets:
        raise ValueError(f"unknown ablation {name!r}; choose from {sorted(presets)}")
    return TrainConfig(**{**presets[name], **overrides})
