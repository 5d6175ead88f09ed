"""
Tensors and the reverse-mode graph.

A Tensor is a float64 numpy buffer plus an optional node handle. Leaves
are created with ``Tensor.parameter``; every primitive in
``wrflow.autodiff.ops`` that receives at least one input carrying a node
records a new node holding its inputs and local derivative rule.

Nodes get a global, strictly increasing sequence number at creation.
Inputs always exist before their outputs, so sorting the reachable nodes
by sequence number gives a valid evaluation order and walking it in
reverse gives a valid backward order.
"""

import itertools
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from wrflow.errors import ShapeError

_SEQUENCE = itertools.count()

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Node:
    """One recorded primitive application (or a leaf)."""

    __slots__ = ("seq", "op", "parents", "backward_fn", "leaf")

    def __init__(
        self,
        op: str,
        parents: Tuple[Optional["Node"], ...] = (),
        backward_fn: Optional[BackwardFn] = None,
        leaf: Optional["Tensor"] = None,
    ):
        self.seq = next(_SEQUENCE)
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.leaf = leaf

    def __repr__(self) -> str:
        return f"Node(seq={self.seq}, op={self.op!r})"


class Tensor:
    """
    Shape-carrying float64 value, optionally attached to a graph.

    A tensor without a node is a constant: it contributes zero gradient
    to every backward pass.

    Example:
        >>> w = Tensor.parameter([[1.0, 2.0], [3.0, 4.0]], name="w")
        >>> loss = (w @ Tensor(np.eye(2))).sum()
        >>> grads = backward(loss)
        >>> grads[w]
        array([[1., 1.],
               [1., 1.]])
    """

    # ndarray (op) Tensor defers to the Tensor's reflected operator
    __array_priority__ = 100

    def __init__(self, data, node: Optional[Node] = None, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.node = node
        self.name = name

    @classmethod
    def parameter(cls, data, name: str = "") -> "Tensor":
        """Create a leaf tensor that receives gradients."""
        tensor = cls(np.array(data, dtype=np.float64, copy=True), name=name)
        tensor.node = Node("leaf", leaf=tensor)
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def requires_grad(self) -> bool:
        return self.node is not None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Copy of the underlying buffer."""
        return self.data.copy()

    def detach(self) -> "Tensor":
        return _ops.stop_gradient(self)

    # ------------------------------------------------------------------
    # Operators
    # ------------------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        return _ops.add(self, other)

    def __radd__(self, other) -> "Tensor":
        return _ops.add(other, self)

    def __sub__(self, other) -> "Tensor":
        return _ops.sub(self, other)

    def __rsub__(self, other) -> "Tensor":
        return _ops.sub(other, self)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return _ops.scale(self, float(other))
        return _ops.mul(self, other)

    def __rmul__(self, other) -> "Tensor":
        return self.__mul__(other)

    def __neg__(self) -> "Tensor":
        return _ops.scale(self, -1.0)

    def __matmul__(self, other) -> "Tensor":
        return _ops.matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return _ops.take(self, index)

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        return _ops.sum(self, axis=axis)

    def mean(self) -> "Tensor":
        return _ops.mean(self)

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return _ops.reshape(self, shape)

    def permute(self, axes: Sequence[int]) -> "Tensor":
        return _ops.permute(self, axes)

    def transpose(self) -> "Tensor":
        return _ops.transpose(self)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        grad = ", requires_grad=True" if self.node is not None else ""
        return f"Tensor(shape={self.shape}{label}{grad})"


TensorLike = Union[Tensor, np.ndarray, float, int, Sequence[float]]


class Graph:
    """
    Ordered record of the nodes reachable from a root.

    ``nodes`` is sorted by creation sequence, which is a topological
    order; backward walks it in reverse and visits each node once.
    """

    def __init__(self, nodes: List[Node]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Node) -> "Graph":
        seen: Dict[int, Node] = {}
        stack = [root]
        while stack:
            node = stack.pop()
            if node.seq in seen:
                continue
            seen[node.seq] = node
            stack.extend(p for p in node.parents if p is not None)
        return cls([seen[k] for k in sorted(seen)])

    def leaves(self) -> List[Tensor]:
        return [n.leaf for n in self.nodes if n.leaf is not None]

    def __len__(self) -> int:
        return len(self.nodes)


def backward(
    loss: Tensor, wrt: Optional[Iterable[Tensor]] = None
) -> Dict[Tensor, np.ndarray]:
    """
    Reverse-mode gradients of a scalar loss.

    Args:
        loss: Scalar tensor (one element)
        wrt: Parameters to report. Parameters the loss does not reach get
            zero gradients. When omitted, every leaf reached is reported.

    Returns:
        Map from parameter tensor to a gradient array of the same shape
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")

    targets = list(wrt) if wrt is not None else None

    if loss.node is None:
        return {p: np.zeros_like(p.data) for p in (targets or [])}

    graph = Graph.trace(loss.node)
    grads: Dict[int, np.ndarray] = {loss.node.seq: np.ones_like(loss.data)}

    for node in reversed(graph.nodes):
        if node.backward_fn is None:
            continue
        upstream = grads.pop(node.seq, None)
        if upstream is None:
            continue
        for parent, grad in zip(node.parents, node.backward_fn(upstream)):
            if parent is None or grad is None:
                continue
            prev = grads.get(parent.seq)
            grads[parent.seq] = grad if prev is None else prev + grad

    reached = {
        node.leaf: grads.get(node.seq, np.zeros_like(node.leaf.data))
        for node in graph.nodes
        if node.leaf is not None
    }
    if targets is None:
        return reached
    return {p: reached.get(p, np.zeros_like(p.data)) for p in targets}


# Bound last: ops imports Tensor and Node from this module.
from wrflow.autodiff import ops as _ops  # noqa: E402
