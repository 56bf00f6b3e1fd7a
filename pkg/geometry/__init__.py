# Geometry module

from geometry.grid import (
    GridMismatchError,
    NonBinaryGridError,
    VoxelGrid,
    dilate,
    erode,
    morphology,
    read_grid,
    surface_band,
    write_grid,
)
from geometry.marching_cubes import marching_cubes
from geometry.mesh import EmptyMeshError, TriangleMesh, read_obj, write_obj
from geometry.oracles import (
    Box,
    Empty,
    Flipped,
    ShapeDifference,
    ShapeOracle,
    ShapeUnion,
    Sphere,
    Torus,
    UnsupportedShapeError,
    parse_shape_spec,
)
from geometry.pointcloud import Normalization, PointCloud, normalize_cloud, read_xyz, write_xyz
from geometry.sampling import (
    QuerySampler,
    occupancy_grid,
    occupancy_labels,
    query_sampling_train,
    sample_surface,
    soft_occupancy_grid,
)
from geometry.smoothing import laplacian_smooth
