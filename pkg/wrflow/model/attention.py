"""
Multi-head attention and the V2A attention cache.
"""

import math
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from wrflow.autodiff import Tensor, matmul, partial_detach, scale, softmax
from wrflow.errors import ShapeError

CacheKey = Tuple[int, int]  # (block, denoising step)


class AttentionCache:
    """
    V2A attention maps keyed by (block, denoising step).

    Each map has shape [audio queries N_a, video keys N_v], averaged over
    heads, so every row is a distribution over video tokens.
    """

    def __init__(self, maps: Optional[Dict[CacheKey, np.ndarray]] = None):
        self._maps: Dict[CacheKey, np.ndarray] = {}
        for key, attn in (maps or {}).items():
            self.record(key[0], key[1], attn)

    def record(self, block: int, step: int, attn: np.ndarray) -> None:
        attn = np.asarray(attn, dtype=np.float64)
        if attn.ndim != 2:
            raise ShapeError(f"AttentionCache: map must be 2-D, got shape {attn.shape}")
        self._maps[(int(block), int(step))] = attn

    def merge(self, other: "AttentionCache") -> "AttentionCache":
        for (block, step), attn in other.items():
            self.record(block, step, attn)
        return self

    def keys(self) -> List[CacheKey]:
        return sorted(self._maps)

    def items(self) -> Iterator[Tuple[CacheKey, np.ndarray]]:
        for key in self.keys():
            yield key, self._maps[key]

    def blocks(self) -> List[int]:
        return sorted({b for b, _ in self._maps})

    def steps(self) -> List[int]:
        return sorted({s for _, s in self._maps})

    def __getitem__(self, key: CacheKey) -> np.ndarray:
        return self._maps[key]

    def __contains__(self, key) -> bool:
        return key in self._maps

    def __len__(self) -> int:
        return len(self._maps)

    def __repr__(self) -> str:
        return f"AttentionCache(entries={len(self)}, blocks={self.blocks()}, steps={self.steps()})"


def multi_head_attention(
    q: Tensor, k: Tensor, v: Tensor, heads: int
) -> Tuple[Tensor, Tensor]:
    """
    Scaled dot-product attention over projected queries/keys/values.

    Args:
        q: Queries [N, d]
        k: Keys [M, d]
        v: Values [M, d]
        heads: Number of heads (d divisible by heads)

    Returns:
        (output [N, d], attention probabilities [heads, N, M])
    """
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError(
            f"attention: expected 2-D operands, got {q.shape}, {k.shape}, {v.shape}"
        )
    n, d = q.shape
    m = k.shape[0]
    if k.shape[1] != d or v.shape != k.shape or d % heads:
        raise ShapeError(
            f"attention: shapes {q.shape}, {k.shape}, {v.shape} incompatible with {heads} heads"
        )
    dh = d // heads

    qh = q.reshape((n, heads, dh)).permute((1, 0, 2))
    kh = k.reshape((m, heads, dh)).permute((1, 0, 2))
    vh = v.reshape((m, heads, dh)).permute((1, 0, 2))

    probs = softmax(scale(matmul(qh, kh.transpose()), 1.0 / math.sqrt(dh)))
    out = matmul(probs, vh).permute((1, 0, 2)).reshape((n, d))
    return out, probs


def a2v_cross_attention(
    q_v: Tensor, k_a: Tensor, v_a: Tensor, alpha: float, heads: int = 1
) -> Tensor:
    """
    A2V attention: video queries over partially detached audio keys/values.

    The forward value equals unmodified attention for every alpha; the
    gradient reaching ``k_a`` and ``v_a`` is scaled by ``1 - alpha``.
    """
    out, _ = multi_head_attention(
        q_v, partial_detach(k_a, alpha), partial_detach(v_a, alpha), heads
    )
    return out


def v2a_cross_attention(
    q_a: Tensor, k_v: Tensor, v_v: Tensor, heads: int = 1
) -> Tuple[Tensor, np.ndarray]:
    """V2A attention; also returns the head-averaged map [N_a, N_v]."""
    out, probs = multi_head_attention(q_a, k_v, v_v, heads)
    return out, probs.data.mean(axis=0)
