"""
Reverse-mode tensor engine
Every op records its inputs and a backward closure; backward() replays the
recorded graph once in reverse topological order.
"""

import itertools
from contextlib import contextmanager
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from diffcore import settings


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible"""
    pass


class NonScalarLossError(ValueError):
    """Raised when backward is started from a node holding more than one value"""
    pass


_node_ids = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Evaluate ops without recording graph edges"""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Dense array taking part in a differentiable computation"""

    __slots__ = ("data", "grad", "node_id", "op", "parents", "backward_fn", "requires_grad", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
        op: str = "leaf",
        parents: Tuple["Tensor", ...] = (),
        backward_fn: Optional[Callable[[np.ndarray], None]] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        array = np.asarray(data)
        if array.dtype != settings.DTYPE:
            array = array.astype(settings.DTYPE)
        self.data = array
        self.grad: Optional[np.ndarray] = None
        self.node_id = next(_node_ids)
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{label})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        """Add an upstream contribution to this node's gradient"""
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        backward(self)


def make_node(
    data: np.ndarray,
    parents: Sequence[Tensor],
    op: str,
    backward_fn: Callable[[np.ndarray], None],
) -> Tensor:
    """
    Wrap an op result, attaching graph edges only when some input needs gradients

    Args:
        data: Forward result
        parents: Input tensors of the op
        op: Op kind recorded in the graph
        backward_fn: Receives dL/d(result) and accumulates into the parents

    Returns:
        Result tensor
    """
    tracked = _grad_enabled and any(p.requires_grad for p in parents)
    if not tracked:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, op=op, parents=tuple(parents), backward_fn=backward_fn)


def topological_order(root: Tensor) -> List[Tensor]:
    """Inputs before consumers; iterative so deep graphs do not hit the recursion limit"""
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in visited:
            continue
        visited.add(node.node_id)
        stack.append((node, True))
        # reversed keeps the first parent first in the final order
        for parent in reversed(node.parents):
            if parent.node_id not in visited:
                stack.append((parent, False))
    return order


class Graph:
    """Recorded computation reachable from a loss node"""

    def __init__(self, loss: Tensor):
        self.loss = loss
        self.nodes: List[Tensor] = topological_order(loss)

    @property
    def leaves(self) -> List[Tensor]:
        return [n for n in self.nodes if n.is_leaf and n.requires_grad]

    def op_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for node in self.nodes:
            counts[node.op] = counts.get(node.op, 0) + 1
        return counts

    def backward(self) -> None:
        if self.loss.size != 1:
            raise NonScalarLossError(f"backward needs a scalar loss, got shape {self.loss.shape}")
        for node in self.nodes:
            if not node.is_leaf:
                node.grad = None
        self.loss.grad = np.ones_like(self.loss.data)
        for node in reversed(self.nodes):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)


def backward(loss: Tensor, parameters: Optional[Iterable[Tensor]] = None) -> Dict[str, np.ndarray]:
    """
    Run reverse-mode differentiation from a scalar loss

    Args:
        loss: Scalar tensor
        parameters: Tensors that must receive a gradient; untouched ones get zeros

    Returns:
        Gradient arrays keyed by parameter name (or node id when unnamed)
    """
    Graph(loss).backward()
    grads: Dict[str, np.ndarray] = {}
    for param in parameters or ():
        if param.grad is None:
            param.grad = np.zeros_like(param.data)
        grads[param.name or str(param.node_id)] = param.grad
    return grads
