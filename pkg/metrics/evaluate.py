"""
Reconstruction metrics: Chamfer-L1, normal consistency and IoU
"""

from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.spatial import cKDTree

from geometry.grid import VoxelGrid, binary_values, check_same_geometry
from geometry.marching_cubes import marching_cubes
from geometry.mesh import TriangleMesh
from geometry.oracles import ShapeOracle
from geometry.sampling import occupancy_grid, soft_occupancy_grid

DEFAULT_SAMPLES = 100_000

Norm = Literal["l1", "l2"]
_MINKOWSKI = {"l1": 1, "l2": 2}


# ============================================================================
# Report
# ============================================================================

class MetricsReport(BaseModel):
    cd1: float = Field(ge=0, allow_inf_nan=False)
    nc: float = Field(ge=-1, le=1, allow_inf_nan=False)
    iou: float = Field(ge=0, le=1, allow_inf_nan=False)
    n: int = Field(ge=1)
    seed: int = 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{"cd1": self.cd1, "nc": self.nc, "iou": self.iou, "n": self.n}])

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path

    def summary(self) -> str:
        return "\n".join([
            f"  Chamfer-L1:          {self.cd1:.6f}",
            f"  Normal consistency:  {self.nc:.6f}",
            f"  IoU:                 {self.iou:.6f}",
            f"  Samples per surface: {self.n} (seed {self.seed})",
        ])


# ============================================================================
# Metrics
# ============================================================================

def chamfer_l1_points(x: np.ndarray, y: np.ndarray, norm: Norm = "l1") -> float:
    """
    Symmetric mean nearest-neighbour distance between two point sets

    (1/2Nx) sum_x d(x, Y) + (1/2Ny) sum_y d(y, X), with Manhattan distance by default
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 3)
    if len(x) == 0 or len(y) == 0:
        raise ValueError("chamfer distance needs two nonempty point sets")
    p = _MINKOWSKI[norm]
    to_y, _ = cKDTree(y).query(x, k=1, p=p)
    to_x, _ = cKDTree(x).query(y, k=1, p=p)
    return float(0.5 * to_y.mean() + 0.5 * to_x.mean())


def chamfer_l1(
    mesh_a: TriangleMesh,
    mesh_b: TriangleMesh,
    n: int = DEFAULT_SAMPLES,
    seed: int = 0,
    norm: Norm = "l1",
) -> float:
    """Chamfer distance between n area-uniform samples of each mesh (same seed for both)"""
    mesh_a.require_faces("first mesh")
    mesh_b.require_faces("second mesh")
    x, _ = mesh_a.sample_surface(n, np.random.default_rng(seed))
    y, _ = mesh_b.sample_surface(n, np.random.default_rng(seed))
    return chamfer_l1_points(x, y, norm)


def normal_consistency(mesh_a: TriangleMesh, mesh_b: TriangleMesh, n: int = DEFAULT_SAMPLES, seed: int = 0) -> float:
    """
    Mean signed inner product of face normals between each sample and its nearest counterpart

    Symmetrised over both directions; 1 for identical surfaces, -1 for a flipped copy.
    """
    mesh_a.require_faces("first mesh")
    mesh_b.require_faces("second mesh")
    x, fx = mesh_a.sample_surface(n, np.random.default_rng(seed))
    y, fy = mesh_b.sample_surface(n, np.random.default_rng(seed))
    nx = mesh_a.face_normals()[fx]
    ny = mesh_b.face_normals()[fy]
    _, to_y = cKDTree(y).query(x, k=1)
    _, to_x = cKDTree(x).query(y, k=1)
    forward = np.einsum("ij,ij->i", nx, ny[to_y]).mean()
    reverse = np.einsum("ij,ij->i", ny, nx[to_x]).mean()
    return float(np.clip(0.5 * forward + 0.5 * reverse, -1.0, 1.0))


def iou(field_a: VoxelGrid, field_b: VoxelGrid) -> float:
    """|A and B| / |A or B| of two binary grids; 1.0 when both are empty"""
    check_same_geometry(field_a, field_b)
    a = binary_values(field_a)
    b = binary_values(field_b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(a & b) / union)


# ============================================================================
# Evaluation
# ============================================================================

def evaluate_meshes(
    mesh_a: TriangleMesh,
    mesh_b: TriangleMesh,
    grid_res: int = 64,
    n: int = DEFAULT_SAMPLES,
    seed: int = 0,
    norm: Norm = "l1",
) -> MetricsReport:
    """All three metrics between two meshes; IoU on both meshes voxelised over [-0.5, 0.5]^3"""
    like = VoxelGrid.cube(grid_res)
    return MetricsReport(
        cd1=chamfer_l1(mesh_a, mesh_b, n, seed, norm),
        nc=normal_consistency(mesh_a, mesh_b, n, seed),
        iou=iou(mesh_a.voxelize(like), mesh_b.voxelize(like)),
        n=n,
        seed=seed,
    )


def oracle_mesh(oracle: ShapeOracle, grid_res: int = 64) -> TriangleMesh:
    """Reference surface of an oracle extracted from its clamped signed distance"""
    return marching_cubes(soft_occupancy_grid(oracle, grid_res), 0.5)


def evaluate_against_oracle(
    mesh: TriangleMesh,
    oracle: ShapeOracle,
    grid_res: int = 64,
    n: int = DEFAULT_SAMPLES,
    seed: int = 0,
    prediction: Optional[VoxelGrid] = None,
    detection_points: Optional[np.ndarray] = None,
    norm: Norm = "l1",
) -> MetricsReport:
    """
    Compare a reconstruction with an analytic shape

    Args:
        mesh: Reconstructed mesh
        oracle: Ground-truth shape
        grid_res: Resolution of the reference mesh and of the IoU grid
        n: Surface samples per mesh
        seed: Sampling seed
        prediction: Binary predicted occupancy; when given, IoU is taken on its detection points
        detection_points: World positions of prediction's cells (row-major); required with prediction
        norm: Point distance for the Chamfer term

    Returns:
        MetricsReport
    """
    reference = oracle_mesh(oracle, grid_res)
    if prediction is not None:
        if detection_points is None:
            raise ValueError("detection_points are required together with prediction")
        truth = prediction.with_values(oracle.occupancy(detection_points).reshape(prediction.shape))
        score = iou(prediction, truth)
    else:
        truth = occupancy_grid(oracle, grid_res)
        score = iou(mesh.voxelize(truth), truth)
    return MetricsReport(
        cd1=chamfer_l1(mesh, reference, n, seed, norm),
        nc=normal_consistency(mesh, reference, n, seed),
        iou=score,
        n=n,
        seed=seed,
    )
