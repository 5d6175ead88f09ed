"""
Linear flow-matching path and the deterministic Euler sampler.

The path runs from data at t=0 to the Gaussian prior at t=1:
``x_t = (1 - t) * x0 + t * x1`` with velocity ``x1 - x0``. Sampling starts
from an independent prior per modality at t=1 and integrates toward t=0 on
a uniform grid, advancing both streams in lockstep.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Protocol, Tuple

import numpy as np

from wrflow.errors import ConfigError, ShapeError
from wrflow.model.attention import AttentionCache
from wrflow.model.config import BlockMask, ModelConfig, SurgeryConfig

logger = logging.getLogger(__name__)

DEFAULT_LATE_STEPS = 4

_AUDIO, _VIDEO = 0, 1


@dataclass
class LatentPair:
    """Joint audio/video latent, both [tokens, d_model]."""

    audio: np.ndarray
    video: np.ndarray

    def __post_init__(self):
        self.audio = np.asarray(self.audio, dtype=np.float64)
        self.video = np.asarray(self.video, dtype=np.float64)

    def check(self, config: ModelConfig) -> "LatentPair":
        d = config.d_model
        if self.audio.shape != (config.n_audio_tokens, d) or self.video.shape != (
            config.n_video_tokens,
            d,
        ):
            raise ShapeError(
                f"LatentPair: shapes {self.audio.shape}/{self.video.shape} do not match "
                f"config ({config.n_audio_tokens}, {d})/({config.n_video_tokens}, {d})"
            )
        return self

    def copy(self) -> "LatentPair":
        return LatentPair(self.audio.copy(), self.video.copy())


def _check_pair(op: str, a: LatentPair, b: LatentPair) -> None:
    if a.audio.shape != b.audio.shape or a.video.shape != b.video.shape:
        raise ShapeError(
            f"{op}: shapes {a.audio.shape}/{a.video.shape} and "
            f"{b.audio.shape}/{b.video.shape} do not conform"
        )


def interpolate(x0: LatentPair, x1: LatentPair, t: float) -> LatentPair:
    """Point at time t on the straight path from x0 (t=0) to x1 (t=1)."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"interpolate: t must lie in [0, 1], got {t}")
    _check_pair("interpolate", x0, x1)
    return LatentPair(
        (1.0 - t) * x0.audio + t * x1.audio,
        (1.0 - t) * x0.video + t * x1.video,
    )


def velocity_target(x0: LatentPair, x1: LatentPair) -> LatentPair:
    """Time derivative of the path, ``x1 - x0`` per modality."""
    _check_pair("velocity_target", x0, x1)
    return LatentPair(x1.audio - x0.audio, x1.video - x0.video)


@dataclass
class SamplerConfig:
    """
    Euler sampler settings.

    ``late_steps`` lists the step indices whose V2A attention is cached;
    None means the last ``min(4, num_steps)`` steps.
    """

    num_steps: int = 16
    late_steps: Optional[Tuple[int, ...]] = None
    seed: int = 0

    @property
    def late_step_set(self) -> Tuple[int, ...]:
        if self.late_steps is None:
            n = self.num_steps
            return tuple(range(max(0, n - DEFAULT_LATE_STEPS), n))
        return tuple(sorted(set(int(s) for s in self.late_steps)))

    def validate(self) -> "SamplerConfig":
        if self.num_steps < 1:
            raise ConfigError("sampler", "num_steps", f"must be >= 1, got {self.num_steps}")
        steps = self.late_step_set
        if not steps:
            raise ConfigError("sampler", "late_steps", "must not be empty")
        bad = [s for s in steps if not 0 <= s < self.num_steps]
        if bad:
            raise ConfigError(
                "sampler", "late_steps", f"indices {bad} outside [0, {self.num_steps})"
            )
        return self


class VelocityModel(Protocol):
    """Anything the sampler can integrate: a config and a numpy velocity field."""

    config: ModelConfig

    def predict_velocity(
        self,
        x_a: np.ndarray,
        x_v: np.ndarray,
        t: float,
        c: int,
        mask: Optional[BlockMask] = None,
        cache_attn: bool = False,
        step: int = 0,
        surgery: Optional[SurgeryConfig] = None,
        cache_from: Optional[int] = None,
    ) -> Tuple[np.ndarray, np.ndarray, AttentionCache]:
        ...


class Rollout(NamedTuple):
    x0: LatentPair
    cache: AttentionCache


def prior_latents(
    config: ModelConfig, master_seed: int, c: int, rollout_index: int
) -> LatentPair:
    """
    Standard normal prior, seeded per (master seed, prompt, rollout, modality).

    Each modality draws from its own generator, so audio and video noise
    are independent and reproducible one rollout at a time.
    """
    d = config.d_model

    def draw(modality: int, tokens: int) -> np.ndarray:
        seq = np.random.SeedSequence([int(master_seed), int(c), int(rollout_index), modality])
        return np.random.default_rng(seq).standard_normal((tokens, d))

    return LatentPair(draw(_AUDIO, config.n_audio_tokens), draw(_VIDEO, config.n_video_tokens))


def sample_ode(
    policy: VelocityModel,
    c: int,
    sampler: SamplerConfig,
    surgery: Optional[SurgeryConfig] = None,
    mask: Optional[BlockMask] = None,
    rollout_index: int = 0,
    prior: Optional[LatentPair] = None,
    cache_from: Optional[int] = None,
) -> Rollout:
    """
    Integrate the policy's velocity field from the prior at t=1 to t=0.

    Step k evaluates at ``t_k = 1 - k / num_steps`` and applies
    ``x <- x - (1 / num_steps) * v`` to both modalities. V2A attention is
    cached at the late steps for blocks at or past ``cache_from`` (the
    model's shallow boundary unless given).

    Args:
        policy: Velocity model (read only)
        c: Prompt id
        sampler: Step count, late steps and master seed
        surgery: Surgery schedule; it never changes forward values
        mask: Cross-attention blocks to switch off
        rollout_index: Index within the group, part of the prior seed
        prior: Explicit starting point instead of the seeded prior
        cache_from: First block whose V2A attention is cached

    Returns:
        Rollout(x0, cache)
    """
    sampler.validate()
    config = policy.config
    start = prior if prior is not None else prior_latents(config, sampler.seed, c, rollout_index)
    start.check(config)

    n = sampler.num_steps
    dt = 1.0 / n
    late = set(sampler.late_step_set)
    x_a, x_v = start.audio.copy(), start.video.copy()
    cache = AttentionCache()

    for k in range(n):
        t = 1.0 - k / n
        v_a, v_v, step_cache = policy.predict_velocity(
            x_a, x_v, t, c, mask=mask, cache_attn=k in late,
            step=k,
            surgery=surgery,
            cache_from=cache_from,
        )
        cache.merge(step_cache)
        x_a = x_a - dt * v_a
        x_v = x_v - dt * v_v

    return Rollout(LatentPair(x_a, x_v), cache)


def rollout_group(
    policy: VelocityModel,
    c: int,
    group_size: int,
    sampler: SamplerConfig,
    surgery: Optional[SurgeryConfig] = None,
    mask: Optional[BlockMask] = None,
    workers: int = 1,
    cache_from: Optional[int] = None,
) -> List[Rollout]:
    """
    Sample ``group_size`` rollouts for one prompt.

    Rollout j uses the prior seeded by (sampler.seed, c, j). With
    ``workers > 1`` rollouts run on a thread pool; results are always
    returned in rollout-index order.
    """
    if group_size < 1:
        raise ValueError(f"rollout_group: group size must be >= 1, got {group_size}")

    def one(j: int) -> Rollout:
        return sample_ode(
            policy, c, sampler, surgery=surgery, mask=mask, rollout_index=j, cache_from=cache_from
        )

    if workers <= 1:
        return [one(j) for j in range(group_size)]

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(group_size)))
