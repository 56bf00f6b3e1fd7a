# Attention kernels

from attention.kernels import (
    AttentionLayer,
    matrix_aggregate,
    matrix_attention,
    matrix_weights,
    normalize_weights,
    point_conv,
    point_conv_weights,
    scaled_dot_attention,
    vector_attention,
)
from attention.kinds import AttentionKind
from attention.neighborhood import Neighborhood, NeighborhoodError, knn
from attention.probe import complexity_probe, fit_slopes
from attention.study import gradient_spread_table, matrix_gradient_spread
