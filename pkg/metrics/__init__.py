# Metrics module

from metrics.evaluate import (
    MetricsReport,
    chamfer_l1,
    chamfer_l1_points,
    evaluate_against_oracle,
    evaluate_meshes,
    iou,
    normal_consistency,
    oracle_mesh,
)
