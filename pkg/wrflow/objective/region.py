"""
Region-wise video token weights from cached V2A attention.
"""

from dataclasses import dataclass

import numpy as np

from wrflow.model.attention import AttentionCache

DEGENERATE_SPREAD = 1e-9


@dataclass
class RegionWeights:
    """Per-video-token loss weights in [1, 1 + lam] and the scores behind them."""

    w: np.ndarray
    lam: float
    scores: np.ndarray

    def __len__(self) -> int:
        return int(self.w.size)

    @classmethod
    def uniform(cls, n_tokens: int) -> "RegionWeights":
        return cls(np.ones(n_tokens), 0.0, np.zeros(n_tokens))


def token_scores(cache: AttentionCache) -> np.ndarray:
    """
    Attention mass each video token receives, averaged over cache entries.

    For each (block, step) map the column sums over audio queries are
    taken; the result is their mean over all entries.
    """
    if len(cache) == 0:
        raise ValueError("token_scores: attention cache is empty")
    columns = [attn.sum(axis=0) for _, attn in cache.items()]
    widths = {c.size for c in columns}
    if len(widths) != 1:
        raise ValueError(f"token_scores: cache maps disagree on video token count {sorted(widths)}")
    return np.mean(np.stack(columns), axis=0)


def weights_from_scores(scores, lam: float) -> RegionWeights:
    """
    ``w = 1 + lam * (s - min s) / (max s - min s)``.

    A spread below 1e-9 gives w = 1 everywhere.

    Example:
        >>> weights_from_scores([0.0, 0.5, 1.0], 1.5).w
        array([1.  , 1.75, 2.5 ])
    """
    if lam < 0:
        raise ValueError(f"weights_from_scores: lambda must be >= 0, got {lam}")
    s = np.asarray(scores, dtype=np.float64)
    spread = float(s.max() - s.min())
    if spread < DEGENERATE_SPREAD:
        return RegionWeights(np.ones_like(s), float(lam), s)
    return RegionWeights(1.0 + lam * (s - s.min()) / spread, float(lam), s)


def region_weights(cache: AttentionCache, lam: float) -> RegionWeights:
    return weights_from_scores(token_scores(cache), lam)
