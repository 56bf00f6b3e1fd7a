"""
Regular voxel grids
Values sit at sample positions origin + (i, j, k) * h. Text format: a header
line "nx ny nz ox oy oz h" followed by the values in row-major order.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Tuple, Union

import numpy as np
from scipy import ndimage


class GridMismatchError(ValueError):
    """Raised when two grids that must share geometry do not"""
    pass


class NonBinaryGridError(ValueError):
    """Raised when a binary operation receives values other than 0 and 1"""
    pass


# 6-connected cross
STRUCTURE = ndimage.generate_binary_structure(3, 1)


@dataclass
class VoxelGrid:
    """Scalar value per cell of a regular grid"""

    values: np.ndarray
    origin: np.ndarray
    h: float

    def __post_init__(self):
        self.values = np.asarray(self.values)
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.h = float(self.h)
        if self.values.ndim != 3 or min(self.values.shape) < 2:
            raise ValueError(f"grid needs at least 2 cells per axis, got shape {self.values.shape}")
        if not self.h > 0:
            raise ValueError(f"cell size must be positive, got {self.h}")

    @classmethod
    def cube(cls, resolution: int, low: float = -0.5, high: float = 0.5, fill: float = 0.0) -> "VoxelGrid":
        """resolution^3 cells covering [low, high]^3, sampled at cell centers"""
        h = (high - low) / resolution
        values = np.full((resolution,) * 3, fill, dtype=np.float64)
        return cls(values, np.full(3, low + h / 2.0), h)

    @classmethod
    def sample(
        cls,
        fn: Callable[[np.ndarray], np.ndarray],
        resolution: int,
        low: float = -0.5,
        high: float = 0.5,
    ) -> "VoxelGrid":
        """Evaluate fn at every sample position of a cube grid"""
        grid = cls.cube(resolution, low, high)
        return grid.with_values(np.asarray(fn(grid.points())).reshape(grid.shape))

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.values.shape)

    def centers(self) -> np.ndarray:
        """Sample positions, shape (nx, ny, nz, 3)"""
        axes = [self.origin[a] + self.h * np.arange(n) for a, n in enumerate(self.shape)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def points(self) -> np.ndarray:
        """Sample positions flattened row-major, shape (nx*ny*nz, 3)"""
        return self.centers().reshape(-1, 3)

    def with_values(self, values: np.ndarray) -> "VoxelGrid":
        return VoxelGrid(np.asarray(values).reshape(self.shape), self.origin.copy(), self.h)

    def same_geometry(self, other: "VoxelGrid") -> bool:
        return (
            self.shape == other.shape
            and np.allclose(self.origin, other.origin, rtol=0.0, atol=1e-12)
            and abs(self.h - other.h) <= 1e-12
        )

    def is_binary(self) -> bool:
        return bool(np.all((self.values == 0) | (self.values == 1)))

    def occupied(self) -> np.ndarray:
        return binary_values(self)


def binary_values(grid: VoxelGrid) -> np.ndarray:
    """Boolean view of a binary grid"""
    if not grid.is_binary():
        bad = np.unique(grid.values[(grid.values != 0) & (grid.values != 1)])[:5]
        raise NonBinaryGridError(f"grid must hold only 0 and 1, found {bad.tolist()}")
    return grid.values.astype(bool)


def check_same_geometry(a: VoxelGrid, b: VoxelGrid) -> None:
    if not a.same_geometry(b):
        raise GridMismatchError(
            f"grid geometry differs: shape {a.shape} vs {b.shape}, "
            f"origin {a.origin.tolist()} vs {b.origin.tolist()}, h {a.h:g} vs {b.h:g}"
        )


# ============================================================================
# Morphology
# ============================================================================

def dilate(grid: VoxelGrid) -> VoxelGrid:
    """One step of 6-connected dilation; outside the grid counts as empty"""
    values = ndimage.binary_dilation(binary_values(grid), structure=STRUCTURE, border_value=0)
    return grid.with_values(values.astype(np.int8))


def erode(grid: VoxelGrid) -> VoxelGrid:
    """One step of 6-connected erosion; outside the grid counts as occupied so erode is dual to dilate"""
    values = ndimage.binary_erosion(binary_values(grid), structure=STRUCTURE, border_value=1)
    return grid.with_values(values.astype(np.int8))


def morphology(grid: VoxelGrid, op: str) -> VoxelGrid:
    """
    Binary erosion or dilation with the 6-connected structuring element

    Args:
        grid: Binary grid
        op: "erode" or "dilate"

    Returns:
        New binary grid with the same geometry
    """
    if op == "dilate":
        return dilate(grid)
    if op == "erode":
        return erode(grid)
    raise ValueError(f"op must be 'erode' or 'dilate', got {op!r}")


def surface_band(grid: VoxelGrid) -> VoxelGrid:
    """Cells in dilate(G) but not in erode(G)"""
    band = dilate(grid).values.astype(bool) & ~erode(grid).values.astype(bool)
    return grid.with_values(band.astype(np.int8))


# ============================================================================
# Text I/O
# ============================================================================

def write_grid(path: Union[str, Path], grid: VoxelGrid) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nx, ny, nz = grid.shape
    ox, oy, oz = grid.origin
    header = f"{nx} {ny} {nz} {ox:.17g} {oy:.17g} {oz:.17g} {grid.h:.17g}"
    np.savetxt(path, grid.values.reshape(-1), fmt="%.17g", header=header, comments="")
    return path


def read_grid(path: Union[str, Path]) -> VoxelGrid:
    path = Path(path)
    with path.open() as handle:
        header = handle.readline().split()
        if len(header) != 7:
            raise ValueError(f"{path}: grid header must be 'nx ny nz ox oy oz h', got {' '.join(header)!r}")
        nx, ny, nz = (int(v) for v in header[:3])
        origin = np.array([float(v) for v in header[3:6]])
        h = float(header[6])
        values = np.loadtxt(handle, dtype=np.float64, ndmin=1)
    if values.size != nx * ny * nz:
        raise ValueError(f"{path}: expected {nx * ny * nz} values, found {values.size}")
    return VoxelGrid(values.reshape(nx, ny, nz), origin, h)
