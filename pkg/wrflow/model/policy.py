"""
Dual-stream velocity predictor.

Two token streams (audio, video) each run pre-norm transformer blocks:
self-attention, then cross-attention reading the other stream, then a
feed-forward layer, all with residual connections. The keys/values a
stream offers to the other stream's cross-attention are projected by
parameters owned by the offering stream, so the A2V key/value path of
block l lives under ``audio.blocks.<l>.cross_kv`` even when the audio
stream has fewer than l + 1 blocks of its own.
"""

import logging
import math
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from wrflow.autodiff import Tensor, embedding, gelu, layer_norm, stop_gradient
from wrflow.errors import ShapeError
from wrflow.model.attention import (
    AttentionCache,
    a2v_cross_attention,
    multi_head_attention,
    v2a_cross_attention,
)
from wrflow.model.config import BlockMask, CrossDirection, ModelConfig, SurgeryConfig

logger = logging.getLogger(__name__)

STREAMS = ("audio", "video")

# (name, shape, init kind, fan_in)
ParamSpec = Tuple[str, Tuple[int, ...], str, int]


def parameter_layout(config: ModelConfig, zero_output: bool = True) -> List[ParamSpec]:
    """Names, shapes and initializers of every parameter, in creation order."""
    d = config.d_model
    hidden = config.ff_mult * d
    layout: List[ParamSpec] = [
        ("time.fc1.weight", (d, d), "uniform", d),
        ("time.fc1.bias", (d,), "uniform", d),
        ("time.fc2.weight", (d, d), "uniform", d),
        ("time.fc2.bias", (d,), "uniform", d),
        ("prompt.embedding", (config.prompt_vocab, d), "uniform", d),
    ]
    head_init = "zeros" if zero_output else "uniform"

    for stream in STREAMS:
        own = config.blocks_audio if stream == "audio" else config.blocks_video
        other = config.blocks_video if stream == "audio" else config.blocks_audio
        tokens = config.n_audio_tokens if stream == "audio" else config.n_video_tokens

        layout += [
            (f"{stream}.in_proj.weight", (d, d), "uniform", d),
            (f"{stream}.in_proj.bias", (d,), "uniform", d),
            (f"{stream}.pos", (tokens, d), "uniform", d),
        ]
        for l in range(own):
            base = f"{stream}.blocks.{l}"
            layout += _norm(f"{base}.self_attn.norm", d)
            layout += [(f"{base}.self_attn.{w}", (d, d), "uniform", d) for w in ("wq", "wk", "wv", "wo")]
            layout += _norm(f"{base}.cross_q.norm", d)
            layout += [(f"{base}.cross_q.{w}", (d, d), "uniform", d) for w in ("wq", "wo")]
            layout += _norm(f"{base}.ff.norm", d)
            layout += [
                (f"{base}.ff.w1", (d, hidden), "uniform", d),
                (f"{base}.ff.b1", (hidden,), "uniform", d),
                (f"{base}.ff.w2", (hidden, d), "uniform", hidden),
                (f"{base}.ff.b2", (d,), "uniform", hidden),
            ]
        for l in range(other):
            layout += _norm(f"{stream}.blocks.{l}.cross_kv.norm", d)
            layout += [(f"{stream}.blocks.{l}.cross_kv.{w}", (d, d), "uniform", d) for w in ("wk", "wv")]
        layout += _norm(f"{stream}.out_norm", d)
        layout += [
            (f"{stream}.out_proj.weight", (d, d), head_init, d),
            (f"{stream}.out_proj.bias", (d,), head_init, d),
        ]
    return layout


def _norm(prefix: str, d: int) -> List[ParamSpec]:
    return [(f"{prefix}.gamma", (d,), "ones", d), (f"{prefix}.beta", (d,), "zeros", d)]


def timestep_features(t: float, d: int) -> np.ndarray:
    """Sinusoidal features of t (scaled to [0, 1000]); odd widths are zero-padded."""
    half = d // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    angles = 1000.0 * float(t) * freqs
    feats = np.concatenate([np.sin(angles), np.cos(angles)])
    if feats.size < d:
        feats = np.concatenate([feats, np.zeros(d - feats.size)])
    return feats


class ForwardOutput(NamedTuple):
    v_a: Tensor
    v_v: Tensor
    cache: AttentionCache


class DualStreamPolicy:
    """
    Velocity field v_theta = (v_a, v_v) over joint audio/video latents.

    Example:
        >>> policy = init_policy(ModelConfig(), seed=0)
        >>> out = policy.forward(x_a, x_v, t=0.5, c=3)
        >>> out.v_v.shape
        (16, 32)
    """

    def __init__(self, config: ModelConfig, parameters: Dict[str, Tensor]):
        self.config = config.validate()
        self.parameters = parameters

    # ------------------------------------------------------------------
    # Parameter access
    # ------------------------------------------------------------------

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters.values())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> "DualStreamPolicy":
        missing = set(self.parameters) ^ set(state)
        if missing:
            raise ValueError(f"Parameter sets differ: {sorted(missing)[:5]}")
        for name, param in self.parameters.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.shape:
                raise ShapeError(
                    f"load_state_dict: {name} has shape {value.shape}, expected {param.shape}"
                )
            param.data[...] = value
        return self

    def copy(self) -> "DualStreamPolicy":
        """Independent policy with identical parameter values."""
        params = {name: Tensor.parameter(p.data, name=name) for name, p in self.parameters.items()}
        return DualStreamPolicy(self.config, params)

    def _view(self, track_grad: bool) -> Dict[str, Tensor]:
        if track_grad:
            return self.parameters
        return {name: stop_gradient(p) for name, p in self.parameters.items()}

    # ------------------------------------------------------------------
    # Forward
    # ------------------------------------------------------------------

    def forward(
        self,
        x_a,
        x_v,
        t: float,
        c: int,
        surgery: Optional[SurgeryConfig] = None,
        mask: Optional[BlockMask] = None,
        cache_attn: bool = False,
        step: int = 0,
        track_grad: bool = True,
        cache_from: Optional[int] = None,
    ) -> ForwardOutput:
        """
        Predict velocities for both streams.

        Args:
            x_a: Audio latent [N_a, d]
            x_v: Video latent [N_v, d]
            t: Shared timestep in [0, 1]
            c: Prompt id
            surgery: Partial-detach schedule for A2V keys/values
            mask: Cross-attention blocks to switch off
            cache_attn: Record V2A maps for blocks at or past ``cache_from``
            step: Denoising step index used as the cache key
            track_grad: Build a graph over the parameters
            cache_from: First cached block; defaults to the model's shallow boundary

        Returns:
            ForwardOutput(v_a, v_v, cache)
        """
        cfg = self.config
        x_a = x_a if isinstance(x_a, Tensor) else Tensor(x_a)
        x_v = x_v if isinstance(x_v, Tensor) else Tensor(x_v)
        self._check_inputs(x_a, x_v, t, c)
        surgery = surgery or SurgeryConfig()
        mask = (mask or BlockMask.none()).validate(cfg)
        cache_from = cfg.shallow_boundary if cache_from is None else int(cache_from)

        p = self._view(track_grad)
        cond = self._conditioning(p, t, c)
        h = {
            "audio": self._embed(p, "audio", x_a, cond),
            "video": self._embed(p, "video", x_v, cond),
        }
        counts = {"audio": cfg.blocks_audio, "video": cfg.blocks_video}
        cache = AttentionCache()

        for l in range(cfg.n_blocks):
            for stream in STREAMS:
                if l < counts[stream]:
                    h[stream] = h[stream] + self._self_attention(p, f"{stream}.blocks.{l}.self_attn", h[stream])

            source = dict(h)

            if l < cfg.blocks_video and not mask.is_blocked(CrossDirection.A2V, l):
                q = self._normed(p, f"video.blocks.{l}.cross_q.norm", source["video"]) @ p[f"video.blocks.{l}.cross_q.wq"]
                k, v = self._keys_values(p, f"audio.blocks.{l}.cross_kv", source["audio"])
                out = a2v_cross_attention(q, k, v, surgery.alpha(l), cfg.heads)
                h["video"] = h["video"] + out @ p[f"video.blocks.{l}.cross_q.wo"]

            if l < cfg.blocks_audio and not mask.is_blocked(CrossDirection.V2A, l):
                q = self._normed(p, f"audio.blocks.{l}.cross_q.norm", source["audio"]) @ p[f"audio.blocks.{l}.cross_q.wq"]
                k, v = self._keys_values(p, f"video.blocks.{l}.cross_kv", source["video"])
                out, attn = v2a_cross_attention(q, k, v, cfg.heads)
                if cache_attn and l >= cache_from:
                    cache.record(l, step, attn)
                h["audio"] = h["audio"] + out @ p[f"audio.blocks.{l}.cross_q.wo"]

            for stream in STREAMS:
                if l < counts[stream]:
                    h[stream] = h[stream] + self._feed_forward(p, f"{stream}.blocks.{l}.ff", h[stream])

        return ForwardOutput(
            v_a=self._head(p, "audio", h["audio"]),
            v_v=self._head(p, "video", h["video"]),
            cache=cache,
        )

    __call__ = forward

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
        """Graph-free evaluation returning numpy velocities."""
        out = self.forward(
            x_a,
            x_v,
            t,
            c,
            surgery=surgery,
            mask=mask,
            cache_attn=cache_attn,
            step=step,
            track_grad=False,
            cache_from=cache_from,
        )
        return out.v_a.data, out.v_v.data, out.cache

    # ------------------------------------------------------------------
    # Sublayers
    # ------------------------------------------------------------------

    def _check_inputs(self, x_a: Tensor, x_v: Tensor, t: float, c: int) -> None:
        cfg = self.config
        d = cfg.d_model
        if x_a.shape != (cfg.n_audio_tokens, d):
            raise ShapeError(
                f"forward: audio latent shape {x_a.shape}, expected {(cfg.n_audio_tokens, d)}"
            )
        if x_v.shape != (cfg.n_video_tokens, d):
            raise ShapeError(
                f"forward: video latent shape {x_v.shape}, expected {(cfg.n_video_tokens, d)}"
            )
        if not 0.0 <= float(t) <= 1.0:
            raise ValueError(f"forward: t must lie in [0, 1], got {t}")
        if int(c) != c or not 0 <= int(c) < cfg.prompt_vocab:
            raise ValueError(f"forward: prompt id {c} outside [0, {cfg.prompt_vocab})")

    def _conditioning(self, p: Dict[str, Tensor], t: float, c: int) -> Tensor:
        # [1, d] rows broadcast over every token
        feats = Tensor(timestep_features(t, self.config.d_model)[None, :])
        temb = gelu(feats @ p["time.fc1.weight"] + p["time.fc1.bias"])
        temb = temb @ p["time.fc2.weight"] + p["time.fc2.bias"]
        return temb + embedding(p["prompt.embedding"], [int(c)])

    def _embed(self, p: Dict[str, Tensor], stream: str, x: Tensor, cond: Tensor) -> Tensor:
        h = x @ p[f"{stream}.in_proj.weight"] + p[f"{stream}.in_proj.bias"]
        return h + p[f"{stream}.pos"] + cond

    def _normed(self, p: Dict[str, Tensor], prefix: str, h: Tensor) -> Tensor:
        return layer_norm(h) * p[f"{prefix}.gamma"] + p[f"{prefix}.beta"]

    def _self_attention(self, p: Dict[str, Tensor], prefix: str, h: Tensor) -> Tensor:
        x = self._normed(p, f"{prefix}.norm", h)
        out, _ = multi_head_attention(
            x @ p[f"{prefix}.wq"], x @ p[f"{prefix}.wk"], x @ p[f"{prefix}.wv"], self.config.heads
        )
        return out @ p[f"{prefix}.wo"]

    def _keys_values(self, p: Dict[str, Tensor], prefix: str, h: Tensor) -> Tuple[Tensor, Tensor]:
        x = self._normed(p, f"{prefix}.norm", h)
        return x @ p[f"{prefix}.wk"], x @ p[f"{prefix}.wv"]

    def _feed_forward(self, p: Dict[str, Tensor], prefix: str, h: Tensor) -> Tensor:
        x = self._normed(p, f"{prefix}.norm", h)
        return gelu(x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"]) @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"]

    def _head(self, p: Dict[str, Tensor], stream: str, h: Tensor) -> Tensor:
        x = self._normed(p, f"{stream}.out_norm", h)
        return x @ p[f"{stream}.out_proj.weight"] + p[f"{stream}.out_proj.bias"]


def init_policy(config: ModelConfig, seed: int, zero_output: bool = True) -> DualStreamPolicy:
    """
    Deterministically initialize a policy.

    Weights are uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] drawn from a
    PCG64 generator seeded with ``seed``, in layout order. Normalization
    gains start at 1 and shifts at 0. With ``zero_output`` the output
    projections start at zero, so the initial velocity field is zero.
    """
    config.validate()
    rng = np.random.Generator(np.random.PCG64(seed))
    params: Dict[str, Tensor] = {}
    for name, shape, kind, fan_in in parameter_layout(config, zero_output):
        if kind == "uniform":
            bound = 1.0 / math.sqrt(fan_in)
            value = rng.uniform(-bound, bound, size=shape)
        elif kind == "ones":
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
        params[name] = Tensor.parameter(value, name=name)
    logger.debug(f"Initialized policy with {sum(p.size for p in params.values())} parameters (seed={seed})")
    return DualStreamPolicy(config, params)


def forward(policy: DualStreamPolicy, *args, **kwargs) -> ForwardOutput:
    """Functional alias of ``DualStreamPolicy.forward``."""
    return policy.forward(*args, **kwargs)
