"""
Uniform (umbrella) Laplacian smoothing
"""

import numpy as np
from scipy import sparse

from geometry.mesh import TriangleMesh


def vertex_adjacency(mesh: TriangleMesh) -> sparse.csr_matrix:
    """Symmetric 0/1 vertex adjacency built from the mesh edges"""
    edges, _ = mesh.edges()
    n = mesh.n_vertices
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    data = np.ones(len(rows), dtype=np.float64)
    return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))


def laplacian_smooth(mesh: TriangleMesh, iterations: int = 3, lam: float = 0.5) -> TriangleMesh:
    """
    Move every vertex toward the centroid of its edge neighbours

    v <- v + lam * (mean(neighbours) - v), repeated; connectivity is unchanged
    and isolated vertices stay put.

    Args:
        mesh: Input mesh
        iterations: Number of passes (0 returns a copy)
        lam: Step size in (0, 1]

    Returns:
        Smoothed copy
    """
    if iterations < 0:
        raise ValueError(f"iterations must be >= 0, got {iterations}")
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"lambda must be in (0, 1], got {lam}")
    vertices = mesh.vertices.copy()
    if iterations == 0 or mesh.is_empty():
        return TriangleMesh(vertices, mesh.faces.copy())

    adjacency = vertex_adjacency(mesh)
    degree = np.asarray(adjacency.sum(axis=1)).reshape(-1)
    connected = degree > 0
    for _ in range(iterations):
        centroid = adjacency @ vertices
        centroid[connected] /= degree[connected, None]
        centroid[~connected] = vertices[~connected]
        vertices = vertices + lam * (centroid - vertices)
    return TriangleMesh(vertices, mesh.faces.copy())
