"""
Negative-aware fine-tuning loss with per-branch optimality probabilities.

For each branch the training velocity is blended with the frozen old
velocity into an implicit positive policy ``(1 - beta) v_old + beta v``
and an implicit negative policy ``(1 + beta) v_old - beta v``. The branch
loss pulls the positive policy toward the flow target with weight r and
the negative one with weight 1 - r. Video tokens may carry region weights;
the audio branch is always unweighted.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np

from wrflow.autodiff import Tensor, as_tensor, scale, squared_error
from wrflow.errors import ConfigError, ShapeError
from wrflow.model.config import BlockMask, SurgeryConfig
from wrflow.model.policy import DualStreamPolicy
from wrflow.objective.region import RegionWeights
from wrflow.sampling.flow import LatentPair, interpolate, velocity_target


@dataclass
class NftConfig:
    """Objective settings: beta mixing, region strength lambda, Z floor, clip."""

    beta: float = 0.5
    region_strength: float = 1.5
    z_floor: float = 1e-8
    clip: float = 1.0

    def validate(self) -> "NftConfig":
        if self.beta < 0:
            raise ConfigError("train", "beta", f"must be >= 0, got {self.beta}")
        if self.region_strength < 0:
            raise ConfigError(
                "train", "region_strength", f"must be >= 0, got {self.region_strength}"
            )
        if self.z_floor <= 0:
            raise ConfigError("train", "z_floor", f"must be > 0, got {self.z_floor}")
        if self.clip <= 0:
            raise ConfigError("train", "clip", f"must be > 0, got {self.clip}")
        return self


class BranchLosses(NamedTuple):
    video: Tensor
    audio: Tensor


def implicit_policies(v_old, v_train, beta: float) -> Tuple[Tensor, Tensor]:
    """
    Positive and negative implicit velocities.

    Example:
        >>> plus, minus = implicit_policies(Tensor([1.0]), Tensor([3.0]), 0.5)
        >>> plus.data, minus.data
        (array([2.]), array([0.]))
    """
    v_old, v_train = as_tensor(v_old), as_tensor(v_train)
    if v_old.shape != v_train.shape:
        raise ShapeError(
            f"implicit_policies: shapes {v_old.shape} and {v_train.shape} do not conform"
        )
    v_plus = scale(v_old, 1.0 - beta) + scale(v_train, beta)
    v_minus = scale(v_old, 1.0 + beta) - scale(v_train, beta)
    return v_plus, v_minus


def _check_probability(name: str, r: float) -> float:
    r = float(r)
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {r}")
    return r


def branch_objective(
    v_plus: Tensor,
    v_minus: Tensor,
    target,
    r: float,
    weights: Optional[np.ndarray] = None,
) -> Tensor:
    """``r * ||v+ - v||^2_w + (1 - r) * ||v- - v||^2_w`` on one branch."""
    r = _check_probability("branch_objective: r", r)
    target = as_tensor(target)
    positive = squared_error(v_plus, target, row_weights=weights)
    negative = squared_error(v_minus, target, row_weights=weights)
    return scale(positive, r) + scale(negative, 1.0 - r)


def _row_weights(weights: Union[RegionWeights, np.ndarray, None]) -> Optional[np.ndarray]:
    if weights is None:
        return None
    if isinstance(weights, RegionWeights):
        return weights.w
    return np.asarray(weights, dtype=np.float64)


def nft_branch_loss(
    policy: DualStreamPolicy,
    old_policy: DualStreamPolicy,
    x0: LatentPair,
    x1: LatentPair,
    t: float,
    c: int,
    r_v: float,
    r_a: float,
    weights: Union[RegionWeights, np.ndarray, None] = None,
    config: Optional[NftConfig] = None,
    surgery: Optional[SurgeryConfig] = None,
    mask: Optional[BlockMask] = None,
) -> BranchLosses:
    """
    Video and audio branch losses at one (x0, prior, t) point.

    Both policies see the same interpolated input ``x_t``; the old policy
    is evaluated without a graph so only the training policy receives
    gradients. Surgery applies to the training forward only.

    Args:
        policy: Training policy
        old_policy: Frozen sampling policy
        x0: Generated latent from the buffer
        x1: Fresh prior sample
        t: Time in the open interval (0, 1)
        c: Prompt id
        r_v: Video optimality probability
        r_a: Audio optimality probability
        weights: Optional video region weights (length N_v)
        config: Objective settings
        surgery: Partial-detach schedule
        mask: Cross-attention mask

    Returns:
        BranchLosses(video, audio)
    """
    config = config or NftConfig()
    if not 0.0 < t < 1.0:
        raise ValueError(f"nft_branch_loss: t must lie in (0, 1), got {t}")
    r_v = _check_probability("nft_branch_loss: r_v", r_v)
    r_a = _check_probability("nft_branch_loss: r_a", r_a)

    x_t = interpolate(x0, x1, t)
    target = velocity_target(x0, x1)

    old_a, old_v, _ = old_policy.predict_velocity(x_t.audio, x_t.video, t, c, mask=mask)
    out = policy.forward(x_t.audio, x_t.video, t, c, surgery=surgery, mask=mask)

    plus_v, minus_v = implicit_policies(old_v, out.v_v, config.beta)
    plus_a, minus_a = implicit_policies(old_a, out.v_a, config.beta)

    return BranchLosses(
        video=branch_objective(plus_v, minus_v, target.video, r_v, _row_weights(weights)),
        audio=branch_objective(plus_a, minus_a, target.audio, r_a),
    )


def total_loss(video, audio=None) -> Tensor:
    """
    Sum of the branch losses.

    Accepts either the two branch losses or a single ``BranchLosses``.
    """
    if audio is None and isinstance(video, BranchLosses):
        video, audio = video.video, video.audio
    return as_tensor(video) + as_tensor(audio)
