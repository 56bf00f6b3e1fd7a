"""
Marching cubes isosurfacing
Cubes sharing a case are processed together; vertices are keyed by the grid
edge they lie on, so neighbouring cubes weld automatically.
"""

import numpy as np

from geometry.grid import VoxelGrid
from geometry.mc_tables import CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE
from geometry.mesh import TriangleMesh

# (corner offset, axis) of the lower end of each cube edge
_EDGE_BASE = np.array([
    [min(CORNER_OFFSETS[a][i], CORNER_OFFSETS[b][i]) for i in range(3)] for a, b in EDGE_CORNERS
])
_EDGE_AXIS = np.array([
    int(np.flatnonzero(np.subtract(CORNER_OFFSETS[a], CORNER_OFFSETS[b]))[0]) for a, b in EDGE_CORNERS
])
_UNIT = np.eye(3, dtype=np.int64)


def marching_cubes(field: VoxelGrid, iso: float = 0.5) -> TriangleMesh:
    """
    Extract the iso-surface of a sampled field

    A sample counts as inside when its value exceeds iso. Faces are oriented so
    that normals point out of the inside region.

    Args:
        field: Grid of finite values
        iso: Iso-level

    Returns:
        Welded and cleaned mesh; empty when iso is outside the field's range
    """
    values = np.asarray(field.values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("marching_cubes needs finite field values")
    nx, ny, nz = values.shape
    inside = values > iso

    cases = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for bit, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        cases |= inside[dx:nx - 1 + dx, dy:ny - 1 + dy, dz:nz - 1 + dz].astype(np.int64) << bit

    n_nodes = nx * ny * nz
    face_keys = []
    for case in np.unique(cases):
        if EDGE_TABLE[case] == 0 or not TRI_TABLE[case]:
            continue
        cubes = np.argwhere(cases == case)
        edges = np.asarray(TRI_TABLE[case])
        base = cubes[:, None, :] + _EDGE_BASE[edges][None, :, :]
        flat = np.ravel_multi_index((base[..., 0], base[..., 1], base[..., 2]), (nx, ny, nz))
        face_keys.append((_EDGE_AXIS[edges][None, :] * n_nodes + flat).reshape(-1, 3))

    if not face_keys:
        return TriangleMesh.empty()

    keys = np.concatenate(face_keys)
    unique, inverse = np.unique(keys, return_inverse=True)
    faces = inverse.reshape(-1, 3)

    axis, flat = np.divmod(unique, n_nodes)
    start = np.stack(np.unravel_index(flat, (nx, ny, nz)), axis=1)
    end = start + _UNIT[axis]
    va = values[start[:, 0], start[:, 1], start[:, 2]]
    vb = values[end[:, 0], end[:, 1], end[:, 2]]
    t = (iso - va) / (vb - va)
    vertices = field.origin + field.h * (start + t[:, None] * _UNIT[axis])

    mesh = TriangleMesh(vertices, faces).cleanup()
    if mesh.signed_volume() < 0.0:
        mesh = mesh.flipped()
    return mesh
