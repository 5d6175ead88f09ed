"""Dual-stream velocity model, its configuration, checkpoints and diagnostics."""

from wrflow.model.config import (
    BlockMask,
    CrossDirection,
    ModelConfig,
    SurgeryConfig,
    SurgeryPlacement,
)
from wrflow.model.attention import (
    AttentionCache,
    a2v_cross_attention,
    multi_head_attention,
    v2a_cross_attention,
)
from wrflow.model.policy import (
    DualStreamPolicy,
    ForwardOutput,
    forward,
    init_policy,
    parameter_layout,
    timestep_features,
)
from wrflow.model.checkpoint import (
    CheckpointError,
    checkpoint_bytes,
    load_checkpoint,
    policy_from_bytes,
    save_checkpoint,
)
from wrflow.model.diagnostics import (
    grad_norm_table,
    layer_grad_norms,
    named_gradients,
    parameter_group,
    surgery_probe_gradients,
    total_grad_norm,
)

__all__ = [
    "BlockMask",
    "CrossDirection",
    "ModelConfig",
    "SurgeryConfig",
    "SurgeryPlacement",
    "AttentionCache",
    "a2v_cross_attention",
    "multi_head_attention",
    "v2a_cross_attention",
    "DualStreamPolicy",
    "ForwardOutput",
    "forward",
    "init_policy",
    "parameter_layout",
    "timestep_features",
    "CheckpointError",
    "checkpoint_bytes",
    "load_checkpoint",
    "policy_from_bytes",
    "save_checkpoint",
    "grad_norm_table",
    "layer_grad_norms",
    "named_gradients",
    "parameter_group",
    "surgery_probe_gradients",
    "total_grad_norm",
]
