"""
Configuration for the dual-stream velocity model.

Plain dataclasses with defaults, validated on demand.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import FrozenSet, Iterable

from wrflow.errors import ConfigError


@dataclass
class ModelConfig:
    """Shape and surgery defaults of a DualStreamPolicy."""

    blocks_audio: int = 6
    blocks_video: int = 6
    d_model: int = 32
    heads: int = 2
    n_audio_tokens: int = 8
    n_video_tokens: int = 16
    shallow_boundary: int = 2
    detach_ratio: float = 0.1
    prompt_vocab: int = 16
    ff_mult: int = 2

    @property
    def n_blocks(self) -> int:
        return max(self.blocks_audio, self.blocks_video)

    def validate(self) -> "ModelConfig":
        for key in (
            "blocks_audio",
            "blocks_video",
            "d_model",
            "heads",
            "n_audio_tokens",
            "n_video_tokens",
            "prompt_vocab",
            "ff_mult",
        ):
            if getattr(self, key) < 1:
                raise ConfigError("model", key, f"must be >= 1, got {getattr(self, key)}")
        if self.d_model % self.heads:
            raise ConfigError(
                "model", "heads", f"d_model {self.d_model} not divisible by {self.heads}"
            )
        if not 0 <= self.shallow_boundary <= min(self.blocks_audio, self.blocks_video):
            raise ConfigError(
                "model",
                "shallow_boundary",
                f"must lie in [0, {min(self.blocks_audio, self.blocks_video)}], "
                f"got {self.shallow_boundary}",
            )
        if not 0.0 <= self.detach_ratio <= 1.0:
            raise ConfigError(
                "model", "detach_ratio", f"must lie in [0, 1], got {self.detach_ratio}"
            )
        return self


class SurgeryPlacement(Enum):
    """Which side of the boundary receives the detach ratio."""

    SHALLOW = "shallow"  # alpha_s below the boundary
    DEEP = "deep"  # alpha_s at and above the boundary

    @classmethod
    def parse(cls, value: str) -> "SurgeryPlacement":
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(
                f"Unknown surgery placement {value!r}. Options: {[p.value for p in cls]}"
            ) from None


@dataclass(frozen=True)
class SurgeryConfig:
    """
    Layer-wise partial detach of the audio keys/values read by A2V attention.

    alpha(l) is ``detach_ratio`` for blocks below ``boundary`` and 0 above
    (reversed for DEEP placement).
    """

    enabled: bool = False
    boundary: int = 2
    detach_ratio: float = 0.1
    placement: SurgeryPlacement = SurgeryPlacement.SHALLOW

    def __post_init__(self):
        if not 0.0 <= self.detach_ratio <= 1.0:
            raise ValueError(f"detach_ratio must lie in [0, 1], got {self.detach_ratio}")
        if self.boundary < 0:
            raise ValueError(f"boundary must be >= 0, got {self.boundary}")

    @classmethod
    def from_model(
        cls,
        config: ModelConfig,
        enabled: bool = True,
        placement: SurgeryPlacement = SurgeryPlacement.SHALLOW,
    ) -> "SurgeryConfig":
        return cls(enabled, config.shallow_boundary, config.detach_ratio, placement)

    def alpha(self, block: int) -> float:
        if not self.enabled:
            return 0.0
        shallow = block < self.boundary
        if self.placement is SurgeryPlacement.DEEP:
            shallow = not shallow
        return self.detach_ratio if shallow else 0.0


class CrossDirection(Enum):
    """Direction of a cross-attention sublayer, named by information flow."""

    A2V = "A2V"  # video queries read audio keys/values
    V2A = "V2A"  # audio queries read video keys/values

    @classmethod
    def parse(cls, value: str) -> "CrossDirection":
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(
                f"Unknown direction {value!r}. Options: {[d.value for d in cls]}"
            ) from None


@dataclass(frozen=True)
class BlockMask:
    """Blocks whose cross-attention in one direction is switched off."""

    direction: CrossDirection = CrossDirection.V2A
    blocks: FrozenSet[int] = field(default_factory=frozenset)

    @classmethod
    def none(cls) -> "BlockMask":
        return cls()

    @classmethod
    def of(cls, direction, blocks: Iterable[int]) -> "BlockMask":
        if not isinstance(direction, CrossDirection):
            direction = CrossDirection.parse(direction)
        return cls(direction, frozenset(int(b) for b in blocks))

    @classmethod
    def all_blocks(cls, direction, config: ModelConfig) -> "BlockMask":
        return cls.of(direction, range(config.n_blocks))

    def is_blocked(self, direction: CrossDirection, block: int) -> bool:
        return direction is self.direction and block in self.blocks

    def validate(self, config: ModelConfig) -> "BlockMask":
        bad = sorted(b for b in self.blocks if not 0 <= b < config.n_blocks)
        if bad:
            raise ValueError(
                f"BlockMask indices {bad} outside block range [0, {config.n_blocks})"
            )
        return self
