"""
How widely gradient spreads through softmax versus linear weight normalisation
"""

from typing import Iterable

import numpy as np
import pandas as pd

from attention.kernels import matrix_aggregate
from diffcore import ops
from diffcore.gradcheck import active_fraction, normalization_gradient_spread
from diffcore.tensor import Tensor, backward

NORMALIZATIONS = ("softmax", "linear")


def matrix_gradient_spread(
    norm: str,
    seed: int,
    n: int = 8,
    d: int = 16,
    k: int = 8,
    sigma: float = 5.0,
    threshold: float = 1e-4,
) -> float:
    """
    Fraction of raw weight-matrix entries that receive gradient through the aggregation

    Raw matrices are drawn N(0, sigma^2) and neighbour features N(0, 1); the
    loss is a random linear read-out of the aggregated features.

    Args:
        norm: "softmax" or "linear"
        seed: Instance seed
        n: Anchors
        d: Feature width
        k: Neighbours per anchor
        sigma: Standard deviation of the raw weights
        threshold: Relative magnitude counted as receiving gradient

    Returns:
        Fraction in [0, 1]
    """
    if norm not in NORMALIZATIONS:
        raise ValueError(f"norm must be one of {NORMALIZATIONS}, got {norm!r}")
    rng = np.random.default_rng(seed)
    weights = Tensor(rng.normal(0.0, sigma, size=(n, k, d, d)), requires_grad=True)
    neighbors = Tensor(rng.normal(size=(n, k, d)))
    readout = rng.normal(size=(n, d))
    loss = ops.sum(ops.hadamard(matrix_aggregate(weights, neighbors, norm), readout))
    backward(loss)
    return active_fraction(weights.grad, threshold)


def gradient_spread_table(seeds: Iterable[int], scope: str = "vector") -> pd.DataFrame:
    """
    Per-seed spread under both normalisations

    Args:
        seeds: Seeds to run
        scope: "vector" (length-64 inputs) or "matrix" (N=8, d=16, k=8 kernel instance)

    Returns:
        DataFrame with columns seed, normalization, fraction
    """
    if scope == "vector":
        measure = normalization_gradient_spread
    elif scope == "matrix":
        measure = matrix_gradient_spread
    else:
        raise ValueError(f"scope must be 'vector' or 'matrix', got {scope!r}")
    rows = [
        {"seed": seed, "normalization": norm, "fraction": measure(norm, seed)}
        for seed in seeds
        for norm in NORMALIZATIONS
    ]
    return pd.DataFrame(rows, columns=["seed", "normalization", "fraction"])


def median_spread(table: pd.DataFrame) -> pd.Series:
    """Median fraction per normalisation"""
    return table.groupby("normalization")["fraction"].median()
