"""
Dense occupancy prediction on a voxel grid
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from diffcore.tensor import no_grad
from geometry.grid import VoxelGrid
from geometry.pointcloud import Normalization, PointCloud, normalize_cloud
from network.model import ReconstructionNet, load_model


@dataclass
class OccupancyField:
    """Predicted occupancy at the voxel centers of the cloud's normalized cube"""

    grid: VoxelGrid
    normalization: Normalization

    @property
    def resolution(self) -> int:
        return self.grid.shape[0]

    def binary(self, threshold: float = 0.5) -> VoxelGrid:
        return self.grid.with_values((self.grid.values > threshold).astype(np.int8))

    def world_points(self) -> np.ndarray:
        """Detection points mapped back to the cloud's coordinates"""
        return self.normalization.invert(self.grid.points())


def predict_field(
    cloud: PointCloud,
    model: Union[ReconstructionNet, str, Path],
    resolution: int = 64,
    batch_size: int = 8192,
    workers: int = 1,
) -> OccupancyField:
    """
    Evaluate the network at every voxel center of [-0.5, 0.5]^3 (normalized units)

    Args:
        cloud: Input cloud in world coordinates
        model: Network or checkpoint path
        resolution: Voxels per axis
        batch_size: Queries per forward pass
        workers: Threads evaluating batches; results do not depend on it

    Returns:
        OccupancyField
    """
    if resolution < 8:
        raise ValueError(f"resolution must be >= 8, got {resolution}")
    if len(cloud) == 0:
        raise ValueError("cannot predict a field from an empty point cloud")
    net = model if isinstance(model, ReconstructionNet) else load_model(model)
    normalized, transform = normalize_cloud(cloud, net.config.normalize_extent)
    grid = VoxelGrid.cube(resolution)
    queries = grid.points()
    batches = [queries[i:i + batch_size] for i in range(0, len(queries), batch_size)]

    with no_grad():
        encoding = net.encode(normalized.points)

        def evaluate(batch: np.ndarray) -> np.ndarray:
            with no_grad():
                return net.occupancy(encoding, batch).data

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(evaluate, batches))
        else:
            parts = [evaluate(batch) for batch in batches]

    values = np.concatenate(parts).reshape(grid.shape)
    return OccupancyField(grid.with_values(values), transform)
