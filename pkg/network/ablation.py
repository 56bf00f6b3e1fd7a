"""
Attention-kernel ablation on an analytic shape
Every kind is trained with the same budget and seeds, then scored by IoU on the
prediction grid's detection points.
"""

from typing import Iterable, List, Optional

import numpy as np
import pandas as pd

from attention.kinds import AttentionKind
from geometry.oracles import ShapeOracle, Sphere
from metrics.evaluate import iou
from network.models import NetworkConfig, TrainConfig
from network.predict import predict_field
from network.train import Trainer, training_cloud

ABLATION_KINDS = (
    AttentionKind.NORMALIZED_MATRIX,
    AttentionKind.SCALAR_DOT,
    AttentionKind.VECTOR,
    AttentionKind.MATRIX_SOFTMAX,
    AttentionKind.MATRIX_UNNORMALIZED,
    AttentionKind.POINT_CONV,
)


def run_ablation(
    kinds: Iterable[AttentionKind] = ABLATION_KINDS,
    seeds: Iterable[int] = (0, 1, 2),
    shape: Optional[ShapeOracle] = None,
    net_config: Optional[NetworkConfig] = None,
    train_config: Optional[TrainConfig] = None,
    resolution: int = 32,
    verbose: bool = False,
) -> pd.DataFrame:
    """
    Train and score one network per (kind, seed)

    Returns:
        DataFrame with columns kind, seed, final_loss, iou
    """
    shape = shape or Sphere(0.4)
    net_config = net_config or NetworkConfig.desk()
    train_config = train_config or TrainConfig.desk()
    rows: List[dict] = []
    for kind in kinds:
        kind = AttentionKind(kind)
        for seed in seeds:
            run_id = f"ablate-{kind.value}-seed{seed}"
            config = net_config.model_copy(update={"attention_kind": kind})
            trainer = Trainer([shape], config, train_config.model_copy(update={"seed": seed}), run_id, verbose)
            result = trainer.run()
            cloud = training_cloud(shape, config, train_config.noise_std_fraction, seed=10_000 + seed)
            field = predict_field(cloud, trainer.net, resolution)
            truth = field.grid.with_values(shape.occupancy(field.world_points()).reshape(field.grid.shape))
            score = iou(field.binary(), truth)
            rows.append({"kind": kind.value, "seed": seed, "final_loss": result.final_loss, "iou": score})
            if verbose:
                print(f"[{run_id}] ✓ iou={score:.4f}")
    return pd.DataFrame(rows, columns=["kind", "seed", "final_loss", "iou"])


def summarize_ablation(table: pd.DataFrame) -> pd.DataFrame:
    """Mean and median IoU per kind, best first"""
    summary = table.groupby("kind")["iou"].agg(["mean", "median"])
    return summary.sort_values("mean", ascending=False)


def normalized_matrix_leads(table: pd.DataFrame, tolerance: float = 0.02) -> bool:
    """
    Whether normalized matrix attention is within tolerance of every other kind
    and strictly above the median of the others (mean IoU over seeds)
    """
    means = table.groupby("kind")["iou"].mean()
    ours = means[AttentionKind.NORMALIZED_MATRIX.value]
    others = means.drop(AttentionKind.NORMALIZED_MATRIX.value)
    return bool(np.all(ours >= others - tolerance) and ours > float(np.median(others)))
