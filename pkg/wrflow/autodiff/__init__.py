"""Reverse-mode automatic differentiation on float64 numpy buffers."""

from wrflow.autodiff.tensor import Graph, Node, Tensor, backward
from wrflow.autodiff.ops import (
    DetachAnchors,
    add,
    anchored_detach,
    as_tensor,
    concat,
    embedding,
    gelu,
    layer_norm,
    matmul,
    mean,
    mul,
    partial_detach,
    permute,
    reshape,
    scale,
    softmax,
    squared_error,
    stop_gradient,
    sub,
    take,
    transpose,
)
from wrflow.autodiff.ops import sum as reduce_sum
from wrflow.autodiff.gradcheck import (
    GradcheckResult,
    check_gradients,
    detach_surrogate,
    numerical_gradient,
    relative_error,
)

__all__ = [
    "Graph",
    "Node",
    "Tensor",
    "backward",
    "add",
    "as_tensor",
    "concat",
    "embedding",
    "gelu",
    "layer_norm",
    "matmul",
    "mean",
    "mul",
    "DetachAnchors",
    "anchored_detach",
    "partial_detach",
    "permute",
    "reshape",
    "reduce_sum",
    "scale",
    "softmax",
    "squared_error",
    "stop_gradient",
    "sub",
    "take",
    "transpose",
    "GradcheckResult",
    "check_gradients",
    "detach_surrogate",
    "numerical_gradient",
    "relative_error",
]
