"""
Analytic stand-ins for video quality, audio quality and AV synchronization.

Quality rewards are ``exp(-||x - target||^2 / (N * d))`` against a per-prompt
target. The sync reward is the Pearson correlation between token energies
of paired video and audio tokens, so it only improves when both streams
move together.
"""

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np

from wrflow.errors import NumericError, ShapeError
from wrflow.model.config import ModelConfig
from wrflow.sampling.flow import LatentPair

CONSTANT_ENERGY_TOL = 1e-12

Seed = Union[int, Sequence[int]]


@dataclass
class PromptSpec:
    """
    Toy semantics of one prompt id.

    Attributes:
        id: Prompt id, also the conditioning index
        video_target: Target video latent [N_v, d]
        audio_target: Target audio latent [N_a, d]
        sync_pairing: (video token, audio token) pairs that should co-activate
        seed: Seed the targets were generated from
        target_scale: Multiplier on the generated targets
    """

    id: int
    video_target: np.ndarray
    audio_target: np.ndarray
    sync_pairing: List[Tuple[int, int]] = field(default_factory=list)
    seed: int = 0
    target_scale: float = 1.0

    def validate(self, config: ModelConfig) -> "PromptSpec":
        if not 0 <= self.id < config.prompt_vocab:
            raise ValueError(f"PromptSpec {self.id}: id outside [0, {config.prompt_vocab})")
        if self.video_target.shape != (config.n_video_tokens, config.d_model):
            raise ShapeError(f"PromptSpec {self.id}: video target shape {self.video_target.shape}")
        if self.audio_target.shape != (config.n_audio_tokens, config.d_model):
            raise ShapeError(f"PromptSpec {self.id}: audio target shape {self.audio_target.shape}")
        if not self.sync_pairing:
            raise ValueError(f"PromptSpec {self.id}: sync pairing is empty")
        for i, j in self.sync_pairing:
            if not (0 <= i < config.n_video_tokens and 0 <= j < config.n_audio_tokens):
                raise ValueError(f"PromptSpec {self.id}: pair ({i}, {j}) out of range")
        return self


@dataclass(frozen=True)
class RewardVector:
    """Video, audio and sync scores of one rollout."""

    video: float
    audio: float
    sync: float

    def __post_init__(self):
        for name in ("video", "audio", "sync"):
            if not math.isfinite(getattr(self, name)):
                raise NumericError(f"RewardVector: {name} reward is not finite ({getattr(self, name)})")


def _quality(x: np.ndarray, target: np.ndarray, label: str) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != target.shape:
        raise ShapeError(f"reward_{label}: latent shape {x.shape} vs target {target.shape}")
    return float(np.exp(-np.sum((x - target) ** 2) / x.size))


def reward_video(x_v: np.ndarray, spec: PromptSpec) -> float:
    """Score in (0, 1]; 1 exactly at the target."""
    return _quality(x_v, spec.video_target, "video")


def reward_audio(x_a: np.ndarray, spec: PromptSpec) -> float:
    return _quality(x_a, spec.audio_target, "audio")


def reward_sync(x_a: np.ndarray, x_v: np.ndarray, spec: PromptSpec) -> float:
    """
    Correlation of paired token energies, in [-1, 1].

    Returns 0 when either energy sequence is constant.

    Raises:
        ValueError: fewer than two pairs
    """
    pairs = spec.sync_pairing
    if len(pairs) < 2:
        raise ValueError(f"reward_sync: need at least 2 token pairs, got {len(pairs)}")
    video_idx = [i for i, _ in pairs]
    audio_idx = [j for _, j in pairs]
    e_v = np.linalg.norm(np.asarray(x_v, dtype=np.float64)[video_idx], axis=1)
    e_a = np.linalg.norm(np.asarray(x_a, dtype=np.float64)[audio_idx], axis=1)
    return energy_correlation(e_v, e_a)


def energy_correlation(e_v: np.ndarray, e_a: np.ndarray) -> float:
    """Pearson correlation with the constant-sequence convention."""
    dv = e_v - e_v.mean()
    da = e_a - e_a.mean()
    sv = np.sqrt(np.mean(dv**2))
    sa = np.sqrt(np.mean(da**2))
    if sv < CONSTANT_ENERGY_TOL or sa < CONSTANT_ENERGY_TOL:
        return 0.0
    corr = float(np.mean(dv * da) / (sv * sa))
    return float(np.clip(corr, -1.0, 1.0))


def evaluate_rewards(x0: LatentPair, spec: PromptSpec) -> RewardVector:
    return RewardVector(
        video=reward_video(x0.video, spec),
        audio=reward_audio(x0.audio, spec),
        sync=reward_sync(x0.audio, x0.video, spec),
    )


def inject_conflict(rewards: RewardVector, epsilon: float, seed: Seed) -> RewardVector:
    """
    Push video and audio rewards in opposite directions.

    Adds ``+epsilon * u`` to the video reward and ``-epsilon * u`` to the
    audio reward with ``u`` a seeded random sign. The sync reward and the
    video + audio total are unchanged.
    """
    if epsilon < 0:
        raise ValueError(f"inject_conflict: epsilon must be >= 0, got {epsilon}")
    if epsilon == 0:
        return rewards
    u = 1.0 if np.random.default_rng(seed).random() < 0.5 else -1.0
    return RewardVector(
        video=rewards.video + epsilon * u,
        audio=rewards.audio - epsilon * u,
        sync=rewards.sync,
    )
