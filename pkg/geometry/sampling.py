"""
Surface points and training queries drawn from shape oracles
"""

from typing import Tuple

import numpy as np

from geometry.grid import VoxelGrid, surface_band
from geometry.oracles import ShapeOracle
from geometry.pointcloud import PointCloud


def sample_surface(oracle: ShapeOracle, n: int, noise_std: float = 0.0, seed: int = 0) -> PointCloud:
    """
    Points uniform on an oracle's surface with isotropic Gaussian noise

    Args:
        oracle: Shape with a surface sampler
        n: Number of points
        noise_std: Standard deviation of the added noise (normalized units)
        seed: Random seed

    Returns:
        Sampled cloud
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if noise_std < 0:
        raise ValueError(f"noise_std must be >= 0, got {noise_std}")
    rng = np.random.default_rng(seed)
    points = oracle.sample_surface(n, rng)
    if noise_std > 0:
        points = points + rng.normal(0.0, noise_std, size=points.shape)
    return PointCloud(points)


def occupancy_labels(oracle: ShapeOracle, queries: np.ndarray) -> np.ndarray:
    """Exact in/out label per query (1 inside)"""
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(queries)):
        raise ValueError("queries must be finite")
    return oracle.occupancy(queries).astype(np.int8)


def occupancy_grid(oracle: ShapeOracle, resolution: int, low: float = -0.5, high: float = 0.5) -> VoxelGrid:
    """Binary occupancy at the cell centers of a cube grid"""
    return VoxelGrid.sample(oracle.occupancy, resolution, low, high)


def soft_occupancy_grid(
    oracle: ShapeOracle,
    resolution: int,
    low: float = -0.5,
    high: float = 0.5,
    width_cells: float = 2.0,
) -> VoxelGrid:
    """
    Clamped signed distance mapped to [0, 1] with the surface at 0.5

    Values ramp linearly over width_cells cells on each side of the surface.
    """
    grid = VoxelGrid.cube(resolution, low, high)
    width = width_cells * grid.h
    with np.errstate(invalid="ignore"):
        values = np.clip(0.5 - oracle.sdf(grid.points()) / (2.0 * width), 0.0, 1.0)
    return grid.with_values(np.nan_to_num(values, nan=0.0).reshape(grid.shape))


class QuerySampler:
    """
    Training queries for one oracle: a near-surface band plus a uniform layer

    The band (dilate(occ) - erode(occ) at fine_res) and the labels' oracle are
    fixed at construction; draw() places fresh random points inside the cells.
    """

    def __init__(
        self,
        oracle: ShapeOracle,
        fine_res: int = 64,
        coarse_res: int = 16,
        low: float = -0.5,
        high: float = 0.5,
    ):
        if fine_res <= coarse_res:
            raise ValueError(f"fine_res ({fine_res}) must exceed coarse_res ({coarse_res})")
        self.oracle = oracle
        self.fine = occupancy_grid(oracle, fine_res, low, high)
        self.coarse = VoxelGrid.cube(coarse_res, low, high)
        band = surface_band(self.fine)
        self.band_centers = self.fine.points()[band.values.reshape(-1).astype(bool)]
        self.coarse_centers = self.coarse.points()

    @property
    def band_size(self) -> int:
        return len(self.band_centers)

    def draw(self, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """One uniform random point per band cell and per coarse cell, with labels"""
        near = self.band_centers + rng.uniform(-0.5, 0.5, size=self.band_centers.shape) * self.fine.h
        uniform = self.coarse_centers + rng.uniform(-0.5, 0.5, size=self.coarse_centers.shape) * self.coarse.h
        queries = np.concatenate([near, uniform])
        return queries, occupancy_labels(self.oracle, queries)


def query_sampling_train(
    oracle: ShapeOracle,
    fine_res: int = 64,
    coarse_res: int = 16,
    seed: int = 0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Near-surface and uniform training queries with ground-truth occupancy

    Args:
        oracle: Shape giving the labels
        fine_res: Resolution of the occupancy grid used for the band
        coarse_res: Resolution of the uniform layer
        seed: Random seed

    Returns:
        (queries (Q, 3), labels (Q,) in {0, 1}); band points come first
    """
    return QuerySampler(oracle, fine_res, coarse_res).draw(np.random.default_rng(seed))
