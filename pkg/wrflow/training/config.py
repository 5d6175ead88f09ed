"""
Training configuration and the component ablation ladder.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from wrflow.errors import ConfigError
from wrflow.model.config import ModelConfig, SurgeryConfig, SurgeryPlacement
from wrflow.objective.loss import NftConfig
from wrflow.rewards.corpus import RewardConfig
from wrflow.sampling.flow import SamplerConfig

logger = logging.getLogger(__name__)


class TrainMode(Enum):
    """
    Rows of the component ladder.

    Each mode switches on a prefix of: advantage routing, gradient surgery,
    region weighting.
    """

    SHARED_ADVANTAGE = "shared-advantage"
    ROUTING_ONLY = "+routing-only"
    ROUTING_SURGERY = "+routing+surgery"
    OMNINFT = "omninft"

    @classmethod
    def parse(cls, value) -> "TrainMode":
        if isinstance(value, TrainMode):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(
                f"Unknown mode {value!r}. Options: {[m.value for m in cls]}"
            ) from None

    @property
    def routing(self) -> bool:
        return self is not TrainMode.SHARED_ADVANTAGE

    @property
    def surgery(self) -> bool:
        return self in (TrainMode.ROUTING_SURGERY, TrainMode.OMNINFT)

    @property
    def region_weighting(self) -> bool:
        return self is TrainMode.OMNINFT


@dataclass
class TrainConfig:
    """
    Everything a training run depends on.

    ``shallow_boundary`` and ``detach_ratio`` override the model's surgery
    defaults when set. The resolved boundary (``boundary``) splits shallow
    from deep blocks for both gradient surgery and the V2A attention cache. ``ema_schedule[i]`` is the old-policy decay after
    iteration i; the last value repeats.
    """

    iterations: int = 200
    prompts_per_iteration: int = 1
    group_size: int = 8
    minibatch_size: int = 8
    learning_rate: float = 1e-3
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    beta: float = 0.5
    region_strength: float = 1.5
    shallow_boundary: Optional[int] = None
    detach_ratio: Optional[float] = None
    surgery_placement: SurgeryPlacement = SurgeryPlacement.SHALLOW
    ema_schedule: Tuple[float, ...] = (0.9,)
    seed: int = 0
    mode: TrainMode = TrainMode.OMNINFT
    t_min: float = 0.001
    t_max: float = 0.999
    profile_every: int = 0
    workers: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    rewards: RewardConfig = field(default_factory=RewardConfig)

    def validate(self) -> "TrainConfig":
        self.model.validate()
        self.sampler.validate()
        self.rewards.validate()
        self.nft().validate()

        for key in ("prompts_per_iteration", "minibatch_size", "workers"):
            if getattr(self, key) < 1:
                raise ConfigError("train", key, f"must be >= 1, got {getattr(self, key)}")
        if self.iterations < 0:
            raise ConfigError("train", "iterations", f"must be >= 0, got {self.iterations}")
        if self.group_size < 2:
            raise ConfigError("train", "group_size", f"must be >= 2, got {self.group_size}")
        if self.learning_rate < 0:
            raise ConfigError("train", "learning_rate", f"must be >= 0, got {self.learning_rate}")
        if len(self.adam_betas) != 2 or not all(0.0 <= b < 1.0 for b in self.adam_betas):
            raise ConfigError("train", "adam_betas", f"need two values in [0, 1), got {self.adam_betas}")
        if self.adam_eps <= 0:
            raise ConfigError("train", "adam_eps", f"must be > 0, got {self.adam_eps}")
        if not self.ema_schedule or not all(0.0 <= e <= 1.0 for e in self.ema_schedule):
            raise ConfigError(
                "train", "ema_schedule", f"need values in [0, 1], got {self.ema_schedule}"
            )
        if not 0.0 < self.t_min < self.t_max < 1.0:
            raise ConfigError(
                "train", "t_min", f"need 0 < t_min < t_max < 1, got ({self.t_min}, {self.t_max})"
            )
        if self.profile_every < 0:
            raise ConfigError("train", "profile_every", f"must be >= 0, got {self.profile_every}")
        if self.prompts_per_iteration > self.rewards.n_prompts and not self.rewards.corpus:
            raise ConfigError(
                "train",
                "prompts_per_iteration",
                f"{self.prompts_per_iteration} exceeds rewards.n_prompts {self.rewards.n_prompts}",
            )
        try:
            self.surgery_config()
        except ValueError as exc:
            raise ConfigError("train", "detach_ratio", str(exc)) from None
        boundary = self.boundary
        if boundary > min(self.model.blocks_audio, self.model.blocks_video):
            raise ConfigError(
                "train", "shallow_boundary", f"{boundary} exceeds the shallower stream's depth"
            )
        if self.mode.region_weighting and boundary >= self.model.blocks_audio:
            logger.warning(
                f"Boundary {boundary} leaves no deep V2A blocks to cache; region weights stay uniform"
            )
        return self

    @property
    def boundary(self) -> int:
        """Shallow/deep split L, after the train-level override."""
        return self.model.shallow_boundary if self.shallow_boundary is None else self.shallow_boundary

    def nft(self) -> NftConfig:
        return NftConfig(beta=self.beta, region_strength=self.region_strength)

    def surgery_config(self) -> SurgeryConfig:
        """Surgery schedule of the training forward; disabled unless the mode uses it."""
        ratio = self.model.detach_ratio if self.detach_ratio is None else self.detach_ratio
        return SurgeryConfig(
            enabled=self.mode.surgery,
            boundary=self.boundary,
            detach_ratio=ratio,
            placement=self.surgery_placement,
        )

    def ema_decay(self, iteration: int) -> float:
        return float(self.ema_schedule[min(iteration, len(self.ema_schedule) - 1)])

    def iteration_sampler(self, iteration: int) -> SamplerConfig:
        """Sampler whose master seed is unique to (run seed, sampler seed, iteration)."""
        state = np.random.SeedSequence([self.seed, self.sampler.seed, iteration]).generate_state(1)
        return SamplerConfig(
            num_steps=self.sampler.num_steps,
            late_steps=self.sampler.late_steps,
            seed=int(state[0]),
        )
