"""
Differentiable primitives.

Each primitive computes its value with numpy and, when any input carries
a node, records a node whose backward rule maps the output gradient to
one gradient per input. Shape violations raise ``ShapeError`` naming the
primitive and the offending shapes.
"""

import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from wrflow.autodiff.tensor import Node, Tensor
from wrflow.errors import ShapeError

LAYER_NORM_VARIANCE_FLOOR = 1e-8

_GELU_C = math.sqrt(2.0 / math.pi)


def as_tensor(value) -> Tensor:
    """Wrap arrays and numbers as constant tensors."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(
    data: np.ndarray,
    op: str,
    inputs: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
) -> Tensor:
    parents = tuple(t.node for t in inputs)
    if all(p is None for p in parents):
        return Tensor(data)
    return Tensor(data, node=Node(op, parents, backward_fn))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a.shape, b.shape))
    except ValueError:
        raise ShapeError(
            f"{op}: shapes {a.shape} and {b.shape} do not conform"
        ) from None


# -------------------------------------------------------------------------
# Elementwise
# -------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, "add", (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, "sub", (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, "mul", (a, b), backward_fn)


def scale(x, factor: float) -> Tensor:
    x = as_tensor(x)
    factor = float(factor)
    return _result(x.data * factor, "scale", (x,), lambda g: (g * factor,))


def gelu(x) -> Tensor:
    """GELU, tanh approximation."""
    x = as_tensor(x)
    d = x.data
    inner = _GELU_C * (d + 0.044715 * d**3)
    th = np.tanh(inner)
    out = 0.5 * d * (1.0 + th)

    def backward_fn(g):
        dinner = _GELU_C * (1.0 + 3.0 * 0.044715 * d**2)
        local = 0.5 * (1.0 + th) + 0.5 * d * (1.0 - th**2) * dinner
        return (g * local,)

    return _result(out, "gelu", (x,), backward_fn)


# -------------------------------------------------------------------------
# Linear algebra and layout
# -------------------------------------------------------------------------


def _swap_last(arr: np.ndarray) -> np.ndarray:
    return np.swapaxes(arr, -1, -2)


def matmul(a, b) -> Tensor:
    """Matrix product; 3-D operands are batched over the leading axis."""
    a, b = as_tensor(a), as_tensor(b)
    if (
        a.ndim < 2
        or a.ndim != b.ndim
        or a.shape[:-2] != b.shape[:-2]
        or a.shape[-1] != b.shape[-2]
    ):
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")

    def backward_fn(g):
        return g @ _swap_last(b.data), _swap_last(a.data) @ g

    return _result(a.data @ b.data, "matmul", (a, b), backward_fn)


def transpose(x) -> Tensor:
    """Swap the last two axes."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"transpose: need at least 2 axes, got shape {x.shape}")
    return _result(_swap_last(x.data), "transpose", (x,), lambda g: (_swap_last(g),))


def permute(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: axes {axes} invalid for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    return _result(
        np.transpose(x.data, axes), "permute", (x,), lambda g: (np.transpose(g, inverse),)
    )


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view shape {x.shape} as {shape}")
    original = x.shape
    return _result(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(original),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat: no operands")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        shapes = [p.shape for p in parts]
        raise ShapeError(f"concat: shapes {shapes} do not conform on axis {axis}") from None
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward_fn(g):
        return np.split(g, bounds, axis=axis)

    return _result(out, "concat", parts, backward_fn)


def take(x, index) -> Tensor:
    """Basic (slice/integer) indexing."""
    x = as_tensor(x)
    try:
        out = np.array(x.data[index], dtype=np.float64, copy=True)
    except IndexError:
        raise ShapeError(f"slice: index {index!r} out of range for shape {x.shape}") from None

    def backward_fn(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _result(out, "slice", (x,), backward_fn)


def embedding(table, ids: Sequence[int]) -> Tensor:
    """Row lookup ``table[ids]``; repeated ids accumulate gradient."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-D, got shape {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding: ids {ids.tolist()} out of range for table shape {table.shape}"
        )

    def backward_fn(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _result(table.data[ids], "embedding", (table,), backward_fn)


# -------------------------------------------------------------------------
# Normalizations
# -------------------------------------------------------------------------


def softmax(x) -> Tensor:
    """Softmax over the last axis, max-subtracted."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, "softmax", (x,), backward_fn)


def layer_norm(x, floor: float = LAYER_NORM_VARIANCE_FLOOR) -> Tensor:
    """
    Normalize the last axis to zero mean and unit variance.

    The variance is floored at ``floor``, so a constant row maps to zeros.
    Affine terms are applied by the caller.
    """
    x = as_tensor(x)
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    var = (centered**2).mean(axis=-1, keepdims=True)
    floored = var <= floor
    inv = 1.0 / np.sqrt(np.maximum(var, floor))
    y = centered * inv

    def backward_fn(g):
        g_mean = g.mean(axis=-1, keepdims=True)
        gy_mean = np.where(floored, 0.0, (g * y).mean(axis=-1, keepdims=True))
        return (inv * (g - g_mean - y * gy_mean),)

    return _result(y, "layer_norm", (x,), backward_fn)


# -------------------------------------------------------------------------
# Reductions
# -------------------------------------------------------------------------


def sum(x, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    if axis is None:
        return _result(
            np.asarray(x.data.sum()), "sum", (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),)
        )

    def backward_fn(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _result(x.data.sum(axis=axis), "sum", (x,), backward_fn)


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.size
    return _result(
        np.asarray(x.data.mean()),
        "mean",
        (x,),
        lambda g: (np.full(x.shape, float(g) / n),),
    )


def squared_error(pred, target, row_weights: Optional[np.ndarray] = None) -> Tensor:
    """
    Mean squared error, optionally reweighted per row.

    With ``row_weights`` w the result is ``sum_i w_i * mse_i / sum_i w_i``,
    where ``mse_i`` is the mean over row i. Without weights it is the mean
    over all elements.
    """
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape or pred.ndim != 2:
        raise ShapeError(
            f"squared_error: shapes {pred.shape} and {target.shape} do not conform"
        )
    diff = pred.data - target.data

    if row_weights is None:
        value = np.asarray((diff**2).mean())
        coef = np.full((diff.shape[0], 1), 2.0 / diff.size)
    else:
        w = np.asarray(row_weights, dtype=np.float64)
        if w.shape != (diff.shape[0],):
            raise ShapeError(
                f"squared_error: weights shape {w.shape} does not match rows of {pred.shape}"
            )
        total = w.sum()
        value = np.asarray((w * (diff**2).mean(axis=1)).sum() / total)
        coef = (2.0 * w / (diff.shape[1] * total))[:, None]

    def backward_fn(g):
        local = float(g) * coef * diff
        return local, -local

    return _result(value, "squared_error", (pred, target), backward_fn)


# -------------------------------------------------------------------------
# Gradient control
# -------------------------------------------------------------------------


def stop_gradient(x) -> Tensor:
    """Same value, no node: nothing flows back through this edge."""
    x = as_tensor(x)
    return Tensor(x.data)


class DetachAnchors:
    """
    Reference buffers for partial-detach edges, in the order they are built.

    Inside the first ``anchored_detach`` block every detached buffer is
    recorded. Later blocks replay them, so an edge evaluates to
    ``alpha * reference + (1 - alpha) * x``: the detached share is held
    at the reference value while the kept share follows ``x``.
    """

    def __init__(self) -> None:
        self.values: List[np.ndarray] = []
        self.recorded = False
        self._cursor = 0

    def _apply(self, data: np.ndarray, alpha: float) -> np.ndarray:
        if not self.recorded:
            self.values.append(data.copy())
            return data
        if self._cursor >= len(self.values):
            raise ValueError(
                f"partial_detach: replay has more edges than the {len(self.values)} recorded"
            )
        ref = self.values[self._cursor]
        self._cursor += 1
        if ref.shape != data.shape:
            raise ShapeError(f"partial_detach: recorded {ref.shape}, replayed {data.shape}")
        return alpha * ref + (1.0 - alpha) * data


_ANCHORS = threading.local()


@contextmanager
def anchored_detach(anchors: DetachAnchors) -> Iterator[DetachAnchors]:
    """Route ``partial_detach`` through ``anchors`` for the duration of the block."""
    previous = getattr(_ANCHORS, "active", None)
    _ANCHORS.active = anchors
    anchors._cursor = 0
    try:
        yield anchors
    finally:
        _ANCHORS.active = previous
        anchors.recorded = True


def partial_detach(x, alpha: float) -> Tensor:
    """
    ``alpha * stop_gradient(x) + (1 - alpha) * x``.

    The forward value is the input buffer itself, so it is bit-identical
    to ``x`` for every alpha; the backward gradient is multiplied by
    ``1 - alpha``. Under ``anchored_detach`` with recorded anchors the
    detached share comes from the recorded buffer instead.
    """
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"partial_detach: alpha must lie in [0, 1], got {alpha}")
    x = as_tensor(x)
    keep = 1.0 - alpha
    anchors = getattr(_ANCHORS, "active", None)
    value = x.data if anchors is None else anchors._apply(x.data, alpha)
    return _result(value, "partial_detach", (x,), lambda g: (g * keep,))


__all__: List[str] = [
    "as_tensor",
    "add",
    "sub",
    "mul",
    "scale",
    "gelu",
    "matmul",
    "transpose",
    "permute",
    "reshape",
    "concat",
    "take",
    "embedding",
    "softmax",
    "layer_norm",
    "sum",
    "mean",
    "squared_error",
    "stop_gradient",
    "partial_detach",
    "DetachAnchors",
    "anchored_detach",
]
