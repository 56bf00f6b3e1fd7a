"""
Attention kernels over local patches
Every kernel maps anchor features (N, d) and a Neighborhood to (N, d). Rows are
put in canonical neighbour order first so the summation order never depends on
how a patch was listed.
"""

from typing import Callable, Optional

import numpy as np

from attention.kinds import MATRIX_NORMS, AttentionKind
from attention.neighborhood import Neighborhood
from diffcore import ops
from diffcore.nn import MLP, ParameterSet
from diffcore.tensor import ShapeError, Tensor

TensorFn = Callable[[Tensor], Tensor]


def _check(features: Tensor, nbr: Neighborhood, kernel: str) -> None:
    if features.ndim != 2:
        raise ShapeError(f"{kernel}: features must be (N, d), got {features.shape}")
    if features.shape[0] != nbr.n_anchors:
        raise ShapeError(
            f"{kernel}: {features.shape[0]} feature rows but the neighbourhood has {nbr.n_anchors} anchors"
        )
    if nbr.indices.size and nbr.indices.max() >= features.shape[0]:
        raise ShapeError(f"{kernel}: neighbour index {nbr.indices.max()} out of range for {features.shape[0]} rows")


def _relative(features: Tensor, neighbors: Tensor) -> Tensor:
    """f_i - f_nj, shape (N, k, d)"""
    n, d = features.shape
    return ops.sub(ops.reshape(features, (n, 1, d)), neighbors)


def scaled_dot_attention(features: Tensor, nbr: Neighborhood) -> Tensor:
    """z_i = sum_j softmax_j(f_i . f_nj) f_nj"""
    features = ops.as_tensor(features)
    _check(features, nbr, "scaled_dot_attention")
    nbr = nbr.canonical()
    neighbors = ops.gather_rows(features, nbr.indices)
    logits = ops.einsum2("nd,nkd->nk", features, neighbors)
    weights = ops.softmax(logits, axis=1)
    return ops.einsum2("nk,nkd->nd", weights, neighbors)


def vector_attention(features: Tensor, nbr: Neighborhood, phi: TensorFn) -> Tensor:
    """z_i = sum_j softmax_j(phi(f_i - f_nj)) * f_nj, softmax per channel across the patch"""
    features = ops.as_tensor(features)
    _check(features, nbr, "vector_attention")
    nbr = nbr.canonical()
    neighbors = ops.gather_rows(features, nbr.indices)
    logits = phi(_relative(features, neighbors))
    if logits.shape != neighbors.shape:
        raise ShapeError(f"vector_attention: phi produced {logits.shape}, expected {neighbors.shape}")
    weights = ops.softmax(logits, axis=1)
    return ops.sum(ops.hadamard(weights, neighbors), axis=1)


def matrix_weights(features: Tensor, nbr: Neighborhood, psi: TensorFn, structure: str = "full") -> Tensor:
    """
    Per-neighbour weight matrices psi(f_i - f_nj), shape (N, k, d, d), row = output channel

    With structure="diagonal" psi returns d values placed on the diagonal.
    nbr must already be canonical.
    """
    n, d = features.shape
    neighbors = ops.gather_rows(features, nbr.indices)
    raw = psi(_relative(features, neighbors))
    if structure == "full":
        if raw.shape[-1] != d * d:
            raise ShapeError(f"matrix_weights: psi output width {raw.shape[-1]} must be d^2 = {d * d}")
        return ops.reshape(raw, (n, nbr.k, d, d))
    if structure == "diagonal":
        if raw.shape[-1] != d:
            raise ShapeError(f"matrix_weights: diagonal psi output width {raw.shape[-1]} must be d = {d}")
        return ops.einsum2("nkr,rc->nkrc", raw, np.eye(d))
    raise ValueError(f"structure must be 'full' or 'diagonal', got {structure!r}")


def normalize_weights(weights: Tensor, norm: str) -> Tensor:
    """
    Normalise (N, k, d, d) weight matrices

    linear: each row divided by its L1 norm over the channel index
    softmax: softmax across the k neighbours, separately for each matrix entry
    none: unchanged
    """
    if norm == "linear":
        return ops.l1_normalize(weights, axis=-1)
    if norm == "softmax":
        return ops.softmax(weights, axis=1)
    if norm == "none":
        return weights
    raise ValueError(f"norm must be one of {MATRIX_NORMS}, got {norm!r}")


def matrix_aggregate(
    weights: Tensor,
    neighbors: Tensor,
    norm: str = "linear",
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """
    z_i = sum_j Norm(W_ij) f_nj

    Args:
        weights: (N, k, d, d) matrices, row = output channel
        neighbors: (N, k, d) neighbour features
        norm: "linear", "softmax" or "none"
        mask: Optional (d, d) 0/1 pattern applied after normalisation (structural zeros)

    Returns:
        (N, d)
    """
    weights = ops.as_tensor(weights)
    neighbors = ops.as_tensor(neighbors)
    if weights.ndim != 4 or weights.shape[:2] != neighbors.shape[:2] or weights.shape[3] != neighbors.shape[2]:
        raise ShapeError(f"matrix_aggregate: weights {weights.shape} do not match neighbours {neighbors.shape}")
    normalized = normalize_weights(weights, norm)
    if mask is not None:
        normalized = ops.hadamard(normalized, np.asarray(mask, dtype=np.float64))
    return ops.einsum2("nkrc,nkc->nr", normalized, neighbors)


def matrix_attention(
    features: Tensor,
    nbr: Neighborhood,
    psi: TensorFn,
    norm: str = "linear",
    structure: str = "full",
) -> Tensor:
    """z_i = sum_j Norm(psi(f_i - f_nj)) f_nj with a d x d matrix per neighbour"""
    features = ops.as_tensor(features)
    _check(features, nbr, "matrix_attention")
    nbr = nbr.canonical()
    weights = matrix_weights(features, nbr, psi, structure)
    neighbors = ops.gather_rows(features, nbr.indices)
    mask = np.eye(features.shape[1]) if structure == "diagonal" else None
    return matrix_aggregate(weights, neighbors, norm, mask)


def point_conv_weights(nbr: Neighborhood, wnet: TensorFn, d: int) -> Tensor:
    """wnet(p_nj - p_i) reshaped to (N, k, d, d); depends on positions only. nbr must be canonical."""
    raw = wnet(Tensor(nbr.offsets))
    if raw.shape[-1] != d * d:
        raise ShapeError(f"point_conv: weight network output width {raw.shape[-1]} must be d^2 = {d * d}")
    return ops.reshape(raw, (nbr.n_anchors, nbr.k, d, d))


def point_conv(features: Tensor, nbr: Neighborhood, wnet: TensorFn) -> Tensor:
    """z_i = sum_j W(p_nj - p_i) f_nj"""
    features = ops.as_tensor(features)
    _check(features, nbr, "point_conv")
    nbr = nbr.canonical()
    weights = point_conv_weights(nbr, wnet, features.shape[1])
    neighbors = ops.gather_rows(features, nbr.indices)
    return ops.einsum2("nkrc,nkc->nr", weights, neighbors)


class AttentionLayer:
    """One kernel of a given kind together with its learnable weight network"""

    def __init__(
        self,
        params: ParameterSet,
        prefix: str,
        kind: AttentionKind,
        dim: int,
        rng: np.random.Generator,
        matrix_norm: str = "linear",
        hidden: Optional[int] = None,
    ):
        """
        Args:
            params: Registry receiving the weight-network parameters
            prefix: Parameter name prefix
            kind: Kernel variant
            dim: Feature width d
            rng: Initialisation generator
            matrix_norm: Normalisation of the general MATRIX kind
            hidden: Hidden width of the weight network (defaults to d)
        """
        self.kind = AttentionKind(kind)
        self.dim = dim
        self.norm = self.kind.matrix_norm(matrix_norm)
        if self.norm is not None and self.norm not in MATRIX_NORMS:
            raise ValueError(f"matrix_norm must be one of {MATRIX_NORMS}, got {self.norm!r}")
        width = hidden or dim
        self.net: Optional[MLP] = None
        if self.kind.is_matrix:
            self.net = MLP(params, f"{prefix}.psi", [dim, width, dim * dim], rng)
        elif self.kind is AttentionKind.VECTOR:
            self.net = MLP(params, f"{prefix}.phi", [dim, width, dim], rng)
        elif self.kind is AttentionKind.POINT_CONV:
            self.net = MLP(params, f"{prefix}.wnet", [3, width, dim * dim], rng)

    def __call__(self, features: Tensor, nbr: Neighborhood) -> Tensor:
        if self.kind is AttentionKind.SCALAR_DOT:
            return scaled_dot_attention(features, nbr)
        if self.kind is AttentionKind.VECTOR:
            return vector_attention(features, nbr, self.net)
        if self.kind is AttentionKind.POINT_CONV:
            return point_conv(features, nbr, self.net)
        return matrix_attention(features, nbr, self.net, self.norm)
