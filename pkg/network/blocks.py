"""
Network building blocks: Tensorformer block, farthest point sampling,
position-aware feature transfer, occupancy head and BCE loss
"""

from typing import Callable, Optional

import numpy as np

from attention.kernels import AttentionLayer
from attention.kinds import AttentionKind
from attention.neighborhood import Neighborhood, knn
from diffcore import ops
from diffcore.nn import MLP, ParameterSet
from diffcore.tensor import ShapeError, Tensor

PROB_CLAMP = 1e-7


class TensorformerBlock:
    """linear-in -> attention kernel -> linear-out, plus residual when widths match"""

    def __init__(
        self,
        params: ParameterSet,
        prefix: str,
        in_dim: int,
        out_dim: int,
        kind: AttentionKind,
        rng: np.random.Generator,
        matrix_norm: str = "linear",
        kernel_hidden: Optional[int] = None,
    ):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.linear_in = MLP(params, f"{prefix}.in", [in_dim, out_dim], rng)
        self.attention = AttentionLayer(params, f"{prefix}.attn", kind, out_dim, rng, matrix_norm, kernel_hidden)
        self.linear_out = MLP(params, f"{prefix}.out", [out_dim, out_dim], rng)
        self.residual = in_dim == out_dim

    def zero_output(self) -> None:
        """Zero the output projection; with a residual the block becomes the identity"""
        self.linear_out.zero_last()

    def __call__(self, features: Tensor, nbr: Neighborhood) -> Tensor:
        return tensorformer_block(features, nbr, self)


def tensorformer_block(features: Tensor, nbr: Neighborhood, block: TensorformerBlock) -> Tensor:
    features = ops.as_tensor(features)
    if features.ndim != 2 or features.shape[1] != block.in_dim:
        raise ShapeError(f"tensorformer_block: expected (N, {block.in_dim}) features, got {features.shape}")
    h = block.linear_in(features)
    h = block.attention(h, nbr)
    h = block.linear_out(h)
    return ops.add(features, h) if block.residual else h


def farthest_point_sample(
    points: np.ndarray,
    m: int,
    seed: Optional[int] = None,
    start: Optional[int] = None,
) -> np.ndarray:
    """
    Greedy max-min subset

    Args:
        points: (N, 3) positions
        m: Subset size
        seed: When given (and start is not), the first pick is drawn from this seed
        start: Index of the first pick

    Returns:
        m indices in pick order; without seed or start the first pick is the
        point farthest from the bounding-box center, so the subset does not
        depend on point order
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not 1 <= m <= n:
        raise ValueError(f"cannot sample {m} of {n} points")
    if start is None:
        if seed is not None:
            start = int(np.random.default_rng(seed).integers(n))
        else:
            center = (points.min(axis=0) + points.max(axis=0)) / 2.0
            start = int(np.argmax(np.sum((points - center) ** 2, axis=1)))
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = start
    nearest = np.sum((points - points[start]) ** 2, axis=1)
    for i in range(1, m):
        chosen[i] = int(np.argmax(nearest))
        nearest = np.minimum(nearest, np.sum((points - points[chosen[i]]) ** 2, axis=1))
    return chosen


def indicator_features(
    queries: np.ndarray,
    points: np.ndarray,
    features: Tensor,
    omega: Callable[[Tensor], Tensor],
    k: int,
) -> Tensor:
    """
    g_i = sum_j omega(q_i - p_nj) * f_nj over the k nearest cloud points of each query

    Args:
        queries: (Q, 3) query positions
        points: (N, 3) cloud positions carrying the features
        features: (N, d) per-point features
        omega: Position network R^3 -> R^d
        k: Neighbours per query

    Returns:
        (Q, d)
    """
    features = ops.as_tensor(features)
    points = np.asarray(points, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != len(points):
        raise ShapeError(f"indicator_features: features {features.shape} do not match {len(points)} points")
    nbr = knn(points, k, queries=queries).canonical()
    weights = omega(Tensor(-nbr.offsets))
    if weights.shape[-1] != features.shape[1]:
        raise ShapeError(
            f"indicator_features: position network width {weights.shape[-1]} != feature width {features.shape[1]}"
        )
    neighbors = ops.gather_rows(features, nbr.indices)
    return ops.sum(ops.hadamard(weights, neighbors), axis=1)


def transfer_features(
    target_points: np.ndarray,
    source_points: np.ndarray,
    source_features: Tensor,
    omega: Callable[[Tensor], Tensor],
    k: int,
) -> Tensor:
    """Move features between point sets; target points play the query role"""
    return indicator_features(target_points, source_points, source_features, omega, k)


def occupancy_head(g: Tensor, theta: MLP) -> Tensor:
    """o = sigmoid(theta(g)), shape (Q,)"""
    g = ops.as_tensor(g)
    if theta.out_dim != 1:
        raise ShapeError(f"occupancy_head: theta must end at width 1, got {theta.out_dim}")
    if g.ndim != 2 or g.shape[1] != theta.in_dim:
        raise ShapeError(f"occupancy_head: expected (Q, {theta.in_dim}) input, got {g.shape}")
    logits = theta(g)
    return ops.reshape(ops.sigmoid(logits), (g.shape[0],))


def bce_loss(pred: Tensor, labels: np.ndarray) -> Tensor:
    """-(1/Q) sum y log o + (1 - y) log(1 - o), with o clamped 1e-7 away from 0 and 1"""
    pred = ops.as_tensor(pred)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if labels.shape != (pred.size,):
        raise ShapeError(f"bce_loss: {labels.size} labels for predictions of shape {pred.shape}")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("bce_loss: labels must be 0 or 1")
    o = ops.clamp(ops.reshape(pred, (pred.size,)), PROB_CLAMP, 1.0 - PROB_CLAMP)
    positive = ops.hadamard(ops.log(o), labels)
    negative = ops.hadamard(ops.log(ops.sub(1.0, o)), 1.0 - labels)
    return ops.scale(ops.sum(ops.add(positive, negative)), -1.0 / pred.size)
