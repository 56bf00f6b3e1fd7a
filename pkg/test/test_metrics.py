import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from geometry.grid import GridMismatchError, NonBinaryGridError, VoxelGrid
from geometry.mesh import EmptyMeshError, TriangleMesh
from geometry.oracles import Box, Sphere
from geometry.sampling import occupancy_grid
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


@pytest.fixture(scope="module")
def sphere_mesh():
    return oracle_mesh(Sphere(0.4), 64)


@pytest.fixture(scope="module")
def larger_sphere_mesh():
    return oracle_mesh(Sphere(0.44), 64)


def square():
    vertices = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    return TriangleMesh(vertices, np.array([[0, 1, 2], [0, 2, 3]]))


def grid_of(cells, n=4):
    values = np.zeros((n, n, n), dtype=np.int8)
    for cell in cells:
        values[cell] = 1
    return VoxelGrid(values, np.zeros(3), 1.0)


# ============================================================================
# Chamfer
# ============================================================================

def test_chamfer_single_points():
    assert chamfer_l1_points([[0.0, 0.0, 0.0]], [[1.0, 0.0, 0.0]]) == 1.0


def test_chamfer_uses_manhattan_distance():
    assert chamfer_l1_points([[0.0, 0.0, 0.0]], [[1.0, 1.0, 0.0]]) == pytest.approx(2.0)
    assert chamfer_l1_points([[0.0, 0.0, 0.0]], [[1.0, 1.0, 0.0]], norm="l2") == pytest.approx(np.sqrt(2.0))


def test_chamfer_needs_points():
    with pytest.raises(ValueError):
        chamfer_l1_points(np.zeros((0, 3)), [[0.0, 0.0, 0.0]])


def test_chamfer_identical_meshes(sphere_mesh):
    assert chamfer_l1(sphere_mesh, sphere_mesh, n=10_000) < 1e-3


def test_chamfer_concentric_spheres(sphere_mesh, larger_sphere_mesh):
    # the radial gap of 0.04 seen through the Manhattan norm
    assert 0.04 <= chamfer_l1(sphere_mesh, larger_sphere_mesh, n=20_000) <= 0.065
    assert 0.035 <= chamfer_l1(sphere_mesh, larger_sphere_mesh, n=20_000, norm="l2") <= 0.05


def test_chamfer_is_symmetric(sphere_mesh, larger_sphere_mesh):
    forward = chamfer_l1(sphere_mesh, larger_sphere_mesh, n=5_000, seed=3)
    assert forward == chamfer_l1(larger_sphere_mesh, sphere_mesh, n=5_000, seed=3)
    assert forward >= 0.0


def test_chamfer_shrinks_as_meshes_converge(sphere_mesh):
    distances = [chamfer_l1(sphere_mesh, sphere_mesh.transformed(s), n=5_000) for s in (1.1, 1.05, 1.01)]
    assert distances[0] > distances[1] > distances[2]


def test_chamfer_converges_in_samples(sphere_mesh, larger_sphere_mesh):
    coarse = chamfer_l1(sphere_mesh, larger_sphere_mesh, n=20_000)
    fine = chamfer_l1(sphere_mesh, larger_sphere_mesh, n=40_000)
    assert abs(fine - coarse) / fine < 0.05


def test_chamfer_empty_mesh(sphere_mesh):
    with pytest.raises(EmptyMeshError):
        chamfer_l1(TriangleMesh.empty(), sphere_mesh)


# ============================================================================
# Normal consistency
# ============================================================================

def test_normal_consistency_identical(sphere_mesh):
    assert normal_consistency(sphere_mesh, sphere_mesh, n=10_000) == pytest.approx(1.0, abs=1e-3)


def test_normal_consistency_flipped_plane():
    assert normal_consistency(square(), square().flipped(), n=2_000) == pytest.approx(-1.0)


def test_normal_consistency_is_symmetric(sphere_mesh, larger_sphere_mesh):
    forward = normal_consistency(sphere_mesh, larger_sphere_mesh, n=5_000)
    assert forward == normal_consistency(larger_sphere_mesh, sphere_mesh, n=5_000)
    assert 0.9 < forward <= 1.0


def test_normal_consistency_empty_mesh(sphere_mesh):
    with pytest.raises(EmptyMeshError):
        normal_consistency(sphere_mesh, TriangleMesh.empty())


# ============================================================================
# IoU
# ============================================================================

def test_iou_examples():
    a = grid_of([(0, 0, 0), (0, 0, 1), (0, 0, 2)])
    b = grid_of([(0, 0, 1), (0, 0, 2), (1, 1, 1)])
    assert iou(a, a) == 1.0
    assert iou(a, grid_of([(3, 3, 3)])) == 0.0
    assert iou(a, b) == 0.5
    assert iou(a, b) == iou(b, a)
    assert iou(grid_of([]), grid_of([])) == 1.0


def test_iou_grows_with_intersection():
    a = grid_of([(0, 0, 0), (0, 0, 1), (0, 0, 2), (0, 0, 3)])
    scores = [iou(a, grid_of([(0, 0, i) for i in range(m)])) for m in range(1, 5)]
    assert scores == sorted(scores)
    assert scores[-1] == 1.0


def test_iou_rejects_mismatch():
    with pytest.raises(GridMismatchError):
        iou(grid_of([], n=4), grid_of([], n=5))
    shifted = VoxelGrid(np.zeros((4, 4, 4), dtype=np.int8), np.ones(3), 1.0)
    with pytest.raises(GridMismatchError):
        iou(grid_of([]), shifted)


def test_iou_needs_binary_grids():
    soft = VoxelGrid(np.full((4, 4, 4), 0.3), np.zeros(3), 1.0)
    with pytest.raises(NonBinaryGridError):
        iou(soft, grid_of([]))


# ============================================================================
# Reports
# ============================================================================

def test_report_rejects_out_of_range():
    with pytest.raises(ValidationError):
        MetricsReport(cd1=float("nan"), nc=1.0, iou=1.0, n=10)
    with pytest.raises(ValidationError):
        MetricsReport(cd1=0.1, nc=1.5, iou=1.0, n=10)
    with pytest.raises(ValidationError):
        MetricsReport(cd1=-0.1, nc=0.5, iou=1.0, n=10)


def test_report_csv(tmp_path):
    report = MetricsReport(cd1=0.125, nc=0.75, iou=0.5, n=100, seed=2)
    frame = pd.read_csv(report.to_csv(tmp_path / "metrics.csv"))
    assert list(frame.columns) == ["cd1", "nc", "iou", "n"]
    assert frame.iloc[0].to_dict() == {"cd1": 0.125, "nc": 0.75, "iou": 0.5, "n": 100}
    assert "Chamfer-L1" in report.summary()


def test_evaluate_mesh_against_itself(sphere_mesh):
    report = evaluate_meshes(sphere_mesh, sphere_mesh, grid_res=32, n=5_000)
    assert report.cd1 == 0.0
    assert report.nc == pytest.approx(1.0)
    assert report.iou == 1.0


def test_evaluate_against_oracle_voxelised(sphere_mesh):
    report = evaluate_against_oracle(sphere_mesh, Sphere(0.4), grid_res=64, n=5_000)
    assert report.cd1 < 1e-3
    assert report.iou > 0.95


def test_evaluate_against_oracle_detection_points():
    box = Box(0.3)
    prediction = occupancy_grid(box, 32)
    report = evaluate_against_oracle(
        oracle_mesh(box, 32), box, grid_res=32, n=2_000, prediction=prediction, detection_points=prediction.points()
    )
    assert report.iou == 1.0


def test_evaluate_against_oracle_needs_detection_points(sphere_mesh):
    with pytest.raises(ValueError):
        evaluate_against_oracle(sphere_mesh, Sphere(0.4), grid_res=16, n=100, prediction=occupancy_grid(Sphere(0.4), 16))
