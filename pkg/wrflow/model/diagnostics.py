"""
Gradient diagnostics for the dual-stream policy.

Per-layer gradient norms grouped by parameter role, and the isolated A2V
probe used to measure how partial detach scales audio-side gradients.
"""

import re
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import polars as pl

from wrflow.autodiff import Tensor, backward
from wrflow.model.config import BlockMask, CrossDirection, SurgeryConfig
from wrflow.model.policy import DualStreamPolicy

_BLOCK_PARAM = re.compile(r"^(audio|video)\.blocks\.(\d+)\.(self_attn|cross_q|cross_kv|ff)\.")

PATHS = ("self_attn", "cross_q", "cross_kv", "ff", "io", "conditioning")


def parameter_group(name: str) -> Tuple[str, int, str]:
    """
    Map a parameter name to its (stream, block, path) group.

    Block parameters map to their block and role. Other per-stream
    parameters (input/output projections, positions) map to ``io`` with
    block -1; time and prompt embeddings map to ``("shared", -1,
    "conditioning")``.

    Example:
        >>> parameter_group("audio.blocks.3.cross_kv.wk")
        ('audio', 3, 'cross_kv')
    """
    match = _BLOCK_PARAM.match(name)
    if match:
        return match.group(1), int(match.group(2)), match.group(3)
    stream = name.split(".", 1)[0]
    if stream in ("audio", "video"):
        return stream, -1, "io"
    return "shared", -1, "conditioning"


def grad_norm_table(grads: Dict[str, np.ndarray]) -> pl.DataFrame:
    """L2 norm of gradients per (stream, block, path), sorted by group."""
    sq: Dict[Tuple[str, int, str], float] = {}
    for name, grad in grads.items():
        key = parameter_group(name)
        sq[key] = sq.get(key, 0.0) + float(np.sum(np.square(grad)))

    keys = sorted(sq)
    return pl.DataFrame(
        {
            "stream": [k[0] for k in keys],
            "block": [k[1] for k in keys],
            "path": [k[2] for k in keys],
            "grad_norm": [float(np.sqrt(sq[k])) for k in keys],
        },
        schema={"stream": pl.Utf8, "block": pl.Int64, "path": pl.Utf8, "grad_norm": pl.Float64},
    )


def named_gradients(policy: DualStreamPolicy, loss: Tensor) -> Dict[str, np.ndarray]:
    """Backward gradients of ``loss`` keyed by parameter name."""
    grads = backward(loss, wrt=list(policy.parameters.values()))
    return {name: grads[p] for name, p in policy.parameters.items()}


def layer_grad_norms(
    policy: DualStreamPolicy,
    batch,
    loss_fn: Callable[[DualStreamPolicy, object], Tensor],
) -> pl.DataFrame:
    """
    Per-(stream, block, path) gradient norms of ``loss_fn(policy, batch)``.

    The groups partition the parameters, so the squared norms sum to the
    squared norm of the full gradient.

    Args:
        policy: Policy whose parameters are differentiated
        batch: Opaque input handed to ``loss_fn``
        loss_fn: Builds a scalar loss on the policy's graph

    Returns:
        DataFrame with columns stream, block, path, grad_norm
    """
    return grad_norm_table(named_gradients(policy, loss_fn(policy, batch)))


def surgery_probe_gradients(
    policy: DualStreamPolicy,
    alpha: float,
    seed: int = 0,
    t: float = 0.5,
    c: int = 0,
) -> Dict[str, np.ndarray]:
    """
    Audio-parameter gradients of a loss on the video output only.

    Every V2A sublayer is masked and the detach ratio is applied in every
    block, so each path from an audio parameter to the loss crosses exactly
    one partially detached A2V key/value edge. The returned gradients are
    therefore ``(1 - alpha)`` times their ``alpha = 0`` values.

    The policy needs nonzero output projections for the probe to carry any
    gradient.
    """
    cfg = policy.config
    rng = np.random.default_rng(seed)
    x_a = rng.standard_normal((cfg.n_audio_tokens, cfg.d_model))
    x_v = rng.standard_normal((cfg.n_video_tokens, cfg.d_model))
    surgery = SurgeryConfig(enabled=True, boundary=cfg.n_blocks, detach_ratio=alpha)
    mask = BlockMask.all_blocks(CrossDirection.V2A, cfg)

    out = policy.forward(x_a, x_v, t, c, surgery=surgery, mask=mask)
    loss = (out.v_v * out.v_v).mean()
    grads = named_gradients(policy, loss)
    return {name: g for name, g in grads.items() if name.startswith("audio.")}


def total_grad_norm(grads: Dict[str, np.ndarray], prefix: Optional[str] = None) -> float:
    return float(
        np.sqrt(
            sum(
                float(np.sum(np.square(g)))
                for name, g in grads.items()
                if prefix is None or name.startswith(prefix)
            )
        )
    )
