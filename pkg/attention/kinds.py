"""
Attention kernel variants
"""

from enum import Enum
from typing import Optional


class AttentionKind(str, Enum):
    SCALAR_DOT = "scalar_dot"
    VECTOR = "vector"
    MATRIX = "matrix"
    MATRIX_SOFTMAX = "matrix_softmax"
    MATRIX_UNNORMALIZED = "matrix_unnormalized"
    NORMALIZED_MATRIX = "normalized_matrix"
    POINT_CONV = "point_conv"

    @property
    def is_matrix(self) -> bool:
        return self in _MATRIX_NORMS

    def matrix_norm(self, default: str = "linear") -> Optional[str]:
        """Weight normalisation of a matrix kernel ("linear", "softmax", "none"); None otherwise"""
        if self is AttentionKind.MATRIX:
            return default
        return _MATRIX_NORMS.get(self)


_MATRIX_NORMS = {
    AttentionKind.MATRIX: None,
    AttentionKind.MATRIX_SOFTMAX: "softmax",
    AttentionKind.MATRIX_UNNORMALIZED: "none",
    AttentionKind.NORMALIZED_MATRIX: "linear",
}

MATRIX_NORMS = ("linear", "softmax", "none")
