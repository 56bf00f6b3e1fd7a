"""
Differentiable ops
Each op computes its forward result with numpy and registers an exact analytic
backward. Broadcasting is limited to numpy's rules for the elementwise ops.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from diffcore import settings
from diffcore.tensor import ShapeError, Tensor, make_node

ArrayLike = Union[Tensor, np.ndarray, float, int, Sequence]


class DegenerateDenominatorError(ArithmeticError):
    """Raised by strict l1 normalisation when a row's absolute sum is below the floor"""
    pass


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to an operand's shape"""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not compatible") from None


# ============================================================================
# Elementwise
# ============================================================================

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward_fn(g):
        if a.requires_grad:
            a.accumulate(unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(unbroadcast(g, b.shape))

    return make_node(a.data + b.data, (a, b), "add", backward_fn)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward_fn(g):
        if a.requires_grad:
            a.accumulate(unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(unbroadcast(-g, b.shape))

    return make_node(a.data - b.data, (a, b), "sub", backward_fn)


def hadamard(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "hadamard")

    def backward_fn(g):
        if a.requires_grad:
            a.accumulate(unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(unbroadcast(g * a.data, b.shape))

    return make_node(a.data * b.data, (a, b), "hadamard", backward_fn)


def scale(x: ArrayLike, c: float) -> Tensor:
    x = as_tensor(x)

    def backward_fn(g):
        x.accumulate(g * c)

    return make_node(x.data * c, (x,), "scale", backward_fn)


def relu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def backward_fn(g):
        x.accumulate(g * mask)

    return make_node(np.where(mask, x.data, 0.0), (x,), "relu", backward_fn)


def sigmoid(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    y = expit(x.data)

    def backward_fn(g):
        x.accumulate(g * y * (1.0 - y))

    return make_node(y, (x,), "sigmoid", backward_fn)


def exp(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)

    def backward_fn(g):
        x.accumulate(g * y)

    return make_node(y, (x,), "exp", backward_fn)


def log(x: ArrayLike) -> Tensor:
    x = as_tensor(x)

    def backward_fn(g):
        x.accumulate(g / x.data)

    return make_node(np.log(x.data), (x,), "log", backward_fn)


def clamp(x: ArrayLike, low: float, high: float) -> Tensor:
    """Clip into [low, high]; gradient passes only where the input was not clipped"""
    x = as_tensor(x)
    inside = (x.data >= low) & (x.data <= high)

    def backward_fn(g):
        x.accumulate(g * inside)

    return make_node(np.clip(x.data, low, high), (x,), "clamp", backward_fn)


# ============================================================================
# Reductions and shape
# ============================================================================

def sum(x: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x.accumulate(np.broadcast_to(g, x.shape))

    return make_node(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), "sum", backward_fn)


def mean(x: ArrayLike, axis: Optional[int] = None) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    return scale(sum(x, axis=axis), 1.0 / count)


def reshape(x: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {x.shape} as {tuple(shape)}") from None

    def backward_fn(g):
        x.accumulate(g.reshape(x.shape))

    return make_node(y, (x,), "reshape", backward_fn)


def gather_rows(x: ArrayLike, index: np.ndarray) -> Tensor:
    """
    Pick rows of a 2-D tensor by an integer table

    Args:
        x: Tensor of shape (N, d)
        index: Integer array of any shape with values < N

    Returns:
        Tensor of shape index.shape + (d,)
    """
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2-D tensor, got shape {x.shape}")
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {x.shape[0]} rows")

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        x.accumulate(gx)

    return make_node(x.data[index], (x,), "gather_rows", backward_fn)


# ============================================================================
# Products
# ============================================================================

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not chain")

    def backward_fn(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return make_node(a.data @ b.data, (a, b), "matmul", backward_fn)


def _parse_einsum(subscripts: str) -> Tuple[str, str, str]:
    try:
        inputs, out = subscripts.replace(" ", "").split("->")
        sa, sb = inputs.split(",")
    except ValueError:
        raise ValueError(f"einsum2 needs 'ab,bc->ac' style subscripts, got {subscripts!r}") from None
    for operand in (sa, sb):
        if len(set(operand)) != len(operand):
            raise ValueError(f"einsum2: repeated index inside operand {operand!r}")
    if not set(sa) <= set(out) | set(sb) or not set(sb) <= set(out) | set(sa):
        raise ValueError(f"einsum2: every operand index must appear in the output or the other operand ({subscripts})")
    return sa, sb, out


def einsum2(subscripts: str, a: ArrayLike, b: ArrayLike) -> Tensor:
    """
    Two-operand contraction

    Args:
        subscripts: e.g. "nkrc,nkc->nr"
        a: First operand
        b: Second operand

    Returns:
        Contracted tensor
    """
    a, b = as_tensor(a), as_tensor(b)
    sa, sb, out = _parse_einsum(subscripts)
    if a.ndim != len(sa) or b.ndim != len(sb):
        raise ShapeError(f"einsum2 {subscripts}: operand shapes {a.shape} and {b.shape}")
    try:
        y = np.einsum(f"{sa},{sb}->{out}", a.data, b.data)
    except ValueError:
        raise ShapeError(f"einsum2 {subscripts}: operand shapes {a.shape} and {b.shape}") from None

    def backward_fn(g):
        if a.requires_grad:
            a.accumulate(np.einsum(f"{out},{sb}->{sa}", g, b.data))
        if b.requires_grad:
            b.accumulate(np.einsum(f"{out},{sa}->{sb}", g, a.data))

    return make_node(y, (a, b), "einsum2", backward_fn)


# ============================================================================
# Normalisations
# ============================================================================

def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    """
    Softmax along an axis, computed after subtracting the maximum

    Backward: dy_i/dx_i = y_i(1 - y_i), dy_i/dx_j = -y_i y_j
    """
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def backward_fn(g):
        x.accumulate(y * (g - np.sum(g * y, axis=axis, keepdims=True)))

    return make_node(y, (x,), "softmax", backward_fn)


def l1_normalize(
    x: ArrayLike,
    axis: int = -1,
    floor: Optional[float] = None,
    strict: Optional[bool] = None,
) -> Tensor:
    """
    Divide by the absolute sum along an axis

    Backward: dy_i/dx_j = delta_ij / S - y_i sign(x_j) / S, with S the absolute sum

    Args:
        x: Input tensor
        axis: Axis holding the entries of one normalised vector
        floor: Sums below this get the floor added (defaults to settings.DENOM_FLOOR)
        strict: Raise DegenerateDenominatorError instead of adding the floor

    Returns:
        Tensor whose absolute values sum to 1 along axis
    """
    x = as_tensor(x)
    floor = settings.DENOM_FLOOR if floor is None else floor
    strict = settings.STRICT_NORM if strict is None else strict

    total = np.sum(np.abs(x.data), axis=axis, keepdims=True)
    degenerate = total < floor
    if np.any(degenerate):
        if strict:
            raise DegenerateDenominatorError(
                f"l1_normalize: {int(degenerate.sum())} vector(s) with absolute sum below {floor:g}"
            )
        total = np.where(degenerate, total + floor, total)
    y = x.data / total

    def backward_fn(g):
        inner = np.sum(g * y, axis=axis, keepdims=True)
        x.accumulate((g - np.sign(x.data) * inner) / total)

    return make_node(y, (x,), "l1_normalize", backward_fn)


# ============================================================================
# Operator overloads
# ============================================================================

Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = lambda self, other: (
    scale(self, other) if isinstance(other, (int, float)) else hadamard(self, other)
)
Tensor.__rmul__ = Tensor.__mul__
Tensor.__neg__ = lambda self: scale(self, -1.0)
Tensor.__matmul__ = lambda self, other: matmul(self, other)
Tensor.sum = lambda self, axis=None, keepdims=False: sum(self, axis=axis, keepdims=keepdims)
Tensor.reshape = lambda self, *shape: reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)
