"""
Point clouds and their text format (one "x y z" per line)
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np


@dataclass
class PointCloud:
    """N points in 3-space with optional per-point feature rows"""

    points: np.ndarray
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {self.points.shape}")
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=np.float64)
            if self.features.shape[0] != self.points.shape[0]:
                raise ValueError(
                    f"feature rows ({self.features.shape[0]}) must match point count ({self.points.shape[0]})"
                )

    def __len__(self) -> int:
        return self.points.shape[0]

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.points.min(axis=0), self.points.max(axis=0)


@dataclass(frozen=True)
class Normalization:
    """Map world coordinates into the normalized cube: (p - center) * scale"""

    center: np.ndarray
    scale: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.center) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) / self.scale + self.center

    @staticmethod
    def identity() -> "Normalization":
        return Normalization(center=np.zeros(3), scale=1.0)


def normalize_cloud(cloud: PointCloud, extent: float = 0.8) -> Tuple[PointCloud, Normalization]:
    """
    Translate and scale a cloud into the unit cube centered at the origin

    Args:
        cloud: Input cloud
        extent: Side length the largest bounding-box side is scaled to (<= 1 leaves a margin)

    Returns:
        (normalized cloud, transform used)
    """
    if len(cloud) == 0:
        raise ValueError("cannot normalize an empty point cloud")
    low, high = cloud.bounds()
    side = float(np.max(high - low))
    scale = extent / side if side > 0 else 1.0
    transform = Normalization(center=(low + high) / 2.0, scale=scale)
    return PointCloud(transform.apply(cloud.points), cloud.features), transform


def read_xyz(path: Union[str, Path]) -> PointCloud:
    """Read whitespace-delimited "x y z" rows"""
    points = np.loadtxt(Path(path), dtype=np.float64, ndmin=2)
    if points.shape[1] < 3:
        raise ValueError(f"{path}: expected at least 3 columns, got {points.shape[1]}")
    return PointCloud(points[:, :3], points[:, 3:] if points.shape[1] > 3 else None)


def write_xyz(path: Union[str, Path], cloud: PointCloud) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, cloud.points, fmt="%.17g")
