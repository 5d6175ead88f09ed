"""
Group-relative advantages, modality routing and optimality probabilities.
"""

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
import polars as pl

from wrflow.errors import ShapeError

Z_FLOOR = 1e-8
CLIP = 1.0


def group_advantages(raw: Sequence[float], z_floor: float = Z_FLOOR) -> np.ndarray:
    """
    Normalize rewards within one group.

    ``A_j = (raw_j - mean) / std`` with population statistics. A group whose
    standard deviation does not exceed ``z_floor`` has no preferred sample
    and gets all-zero advantages.

    Example:
        >>> group_advantages([0.0, 1.0])
        array([-1.,  1.])
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1 or raw.size < 1:
        raise ValueError(f"group_advantages: need a non-empty 1-D group, got shape {raw.shape}")
    centered = raw - raw.mean()
    std = float(np.sqrt(np.mean(centered**2)))
    if std <= z_floor:
        return np.zeros_like(raw)
    return centered / max(std, z_floor)


def route_advantages(
    a_v: Sequence[float], a_a: Sequence[float], a_av: Sequence[float]
) -> Tuple[np.ndarray, np.ndarray]:
    """Video gets A_v + A_av, audio gets A_a + A_av."""
    a_v, a_a, a_av = (np.asarray(x, dtype=np.float64) for x in (a_v, a_a, a_av))
    if not a_v.shape == a_a.shape == a_av.shape:
        raise ShapeError(
            f"route_advantages: group lengths {a_v.shape}, {a_a.shape}, {a_av.shape} differ"
        )
    return a_v + a_av, a_a + a_av


def shared_advantage(
    raw_v: Sequence[float],
    raw_a: Sequence[float],
    raw_av: Sequence[float],
    z_floor: float = Z_FLOOR,
) -> np.ndarray:
    """One advantage per rollout from the summed raw rewards, normalized once."""
    raw_v, raw_a, raw_av = (np.asarray(x, dtype=np.float64) for x in (raw_v, raw_a, raw_av))
    if not raw_v.shape == raw_a.shape == raw_av.shape:
        raise ShapeError(
            f"shared_advantage: group lengths {raw_v.shape}, {raw_a.shape}, {raw_av.shape} differ"
        )
    return group_advantages(raw_v + raw_a + raw_av, z_floor)


def optimality_probability(advantage, clip: float = CLIP) -> np.ndarray:
    """``r = 1/2 + 1/2 * clip(A, -clip, clip) / clip``, in [0, 1]."""
    advantage = np.asarray(advantage, dtype=np.float64)
    if not np.all(np.isfinite(advantage)):
        raise ValueError("optimality_probability: advantages must be finite")
    return 0.5 + 0.5 * np.clip(advantage, -clip, clip) / clip


@dataclass
class AdvantageSet:
    """
    Per-rollout advantages of one group.

    ``a_v``, ``a_a``, ``a_av`` are the per-reward normalized advantages;
    ``routed_v``/``routed_a`` drive the branches and ``r_v``/``r_a`` are
    their optimality probabilities. Without routing both branches share
    one advantage.
    """

    a_v: np.ndarray
    a_a: np.ndarray
    a_av: np.ndarray
    routed_v: np.ndarray
    routed_a: np.ndarray
    r_v: np.ndarray
    r_a: np.ndarray
    routing: bool = True

    def __len__(self) -> int:
        return int(self.a_v.size)

    @property
    def degenerate(self) -> bool:
        """No reward stream separates the group."""
        return not (np.any(self.a_v) or np.any(self.a_a) or np.any(self.a_av))


def compute_advantage_set(
    raw_v: Sequence[float],
    raw_a: Sequence[float],
    raw_av: Sequence[float],
    routing: bool = True,
    z_floor: float = Z_FLOOR,
    clip: float = CLIP,
) -> AdvantageSet:
    """Advantages, routed advantages and optimality probabilities for a group."""
    a_v = group_advantages(raw_v, z_floor)
    a_a = group_advantages(raw_a, z_floor)
    a_av = group_advantages(raw_av, z_floor)
    if a_v.shape != a_a.shape or a_v.shape != a_av.shape:
        raise ShapeError(
            f"compute_advantage_set: group lengths {a_v.shape}, {a_a.shape}, {a_av.shape} differ"
        )

    if routing:
        routed_v, routed_a = route_advantages(a_v, a_a, a_av)
    else:
        shared = shared_advantage(raw_v, raw_a, raw_av, z_floor)
        routed_v, routed_a = shared, shared.copy()

    return AdvantageSet(
        a_v=a_v,
        a_a=a_a,
        a_av=a_av,
        routed_v=routed_v,
        routed_a=routed_a,
        r_v=optimality_probability(routed_v, clip),
        r_a=optimality_probability(routed_a, clip),
        routing=routing,
    )


def conflict_mask(a_v: Sequence[float], a_a: Sequence[float]) -> np.ndarray:
    """True where video and audio advantages have strictly opposite signs."""
    a_v, a_a = np.asarray(a_v, dtype=np.float64), np.asarray(a_a, dtype=np.float64)
    if a_v.shape != a_a.shape:
        raise ShapeError(f"conflict_mask: lengths {a_v.shape} and {a_a.shape} differ")
    return a_v * a_a < 0


def conflict_rate(a_v: Sequence[float], a_a: Sequence[float]) -> float:
    mask = conflict_mask(a_v, a_a)
    if mask.size == 0:
        raise ValueError("conflict_rate: no advantages given")
    return float(mask.mean())


def compare_strategies(
    raw_v: Sequence[float],
    raw_a: Sequence[float],
    raw_av: Sequence[float],
    z_floor: float = Z_FLOOR,
) -> pl.DataFrame:
    """
    Shared and routed advantages side by side, one row per rollout.

    Columns: rollout, raw_v, raw_a, raw_av, shared, routed_v, routed_a,
    conflict.
    """
    shared = shared_advantage(raw_v, raw_a, raw_av, z_floor)
    routed = compute_advantage_set(raw_v, raw_a, raw_av, routing=True, z_floor=z_floor)
    return pl.DataFrame(
        {
            "rollout": np.arange(len(shared)),
            "raw_v": np.asarray(raw_v, dtype=np.float64),
            "raw_a": np.asarray(raw_a, dtype=np.float64),
            "raw_av": np.asarray(raw_av, dtype=np.float64),
            "shared": shared,
            "routed_v": routed.routed_v,
            "routed_a": routed.routed_a,
            "conflict": conflict_mask(routed.a_v, routed.a_a),
        }
    )
