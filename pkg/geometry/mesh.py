"""
Triangle meshes
Normals, areas, topology checks, area-weighted sampling, voxelisation and the
OBJ subset (v / f lines, 1-based indices).
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from geometry.grid import VoxelGrid


class EmptyMeshError(ValueError):
    """Raised when an operation needs at least one triangle"""
    pass


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError(
                f"face indices must lie in [0, {len(self.vertices)}), got range "
                f"[{self.faces.min()}, {self.faces.max()}]"
            )

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def is_empty(self) -> bool:
        return self.n_faces == 0

    def require_faces(self, label: str = "mesh") -> None:
        if self.is_empty():
            raise EmptyMeshError(f"{label} has no triangles")

    # ------------------------------------------------------------------
    # Per-face quantities
    # ------------------------------------------------------------------

    def corners(self) -> np.ndarray:
        """(F, 3, 3) triangle corner positions"""
        return self.vertices[self.faces]

    def cross_products(self) -> np.ndarray:
        c = self.corners()
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.cross_products(), axis=1)

    def face_normals(self) -> np.ndarray:
        """Unit normals following the right-hand rule; zero rows for zero-area faces"""
        cross = self.cross_products()
        length = np.linalg.norm(cross, axis=1, keepdims=True)
        return np.divide(cross, length, out=np.zeros_like(cross), where=length > 0)

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted average of incident face normals, unit length"""
        cross = self.cross_products()
        normals = np.zeros_like(self.vertices)
        for corner in range(3):
            np.add.at(normals, self.faces[:, corner], cross)
        length = np.linalg.norm(normals, axis=1, keepdims=True)
        return np.divide(normals, length, out=np.zeros_like(normals), where=length > 0)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def signed_volume(self) -> float:
        """Positive when faces wind counter-clockwise seen from outside"""
        if self.is_empty():
            return 0.0
        c = self.corners()
        return float(np.sum(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2]))) / 6.0)

    # ------------------------------------------------------------------
    # Topology
    # ------------------------------------------------------------------

    def edges(self) -> Tuple[np.ndarray, np.ndarray]:
        """Undirected edges (E, 2) with the number of faces using each"""
        if self.is_empty():
            return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
        pairs = self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        pairs = np.sort(pairs, axis=1)
        return np.unique(pairs, axis=0, return_counts=True)

    def is_closed(self) -> bool:
        """Every edge borders exactly two faces"""
        if self.is_empty():
            return False
        _, counts = self.edges()
        return bool(np.all(counts == 2))

    def euler_characteristic(self) -> int:
        """V - E + F over referenced vertices"""
        edges, _ = self.edges()
        referenced = len(np.unique(self.faces)) if self.n_faces else 0
        return int(referenced - len(edges) + self.n_faces)

    # ------------------------------------------------------------------
    # Edits
    # ------------------------------------------------------------------

    def flipped(self) -> "TriangleMesh":
        return TriangleMesh(self.vertices.copy(), self.faces[:, ::-1].copy())

    def transformed(self, scale: float = 1.0, offset=(0.0, 0.0, 0.0)) -> "TriangleMesh":
        return TriangleMesh(self.vertices * scale + np.asarray(offset, dtype=np.float64), self.faces.copy())

    def cleanup(self) -> "TriangleMesh":
        """
        Weld coincident vertices, drop degenerate faces and unreferenced vertices

        Returns:
            New mesh; face order of the surviving faces is preserved
        """
        if self.n_vertices == 0:
            return TriangleMesh.empty()
        unique, inverse = np.unique(self.vertices, axis=0, return_inverse=True)
        faces = inverse.reshape(-1)[self.faces]
        distinct = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
        faces = faces[distinct]
        welded = TriangleMesh(unique, faces)
        faces = faces[welded.face_areas() > 0.0]
        used = np.unique(faces)
        remap = np.full(len(unique), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        return TriangleMesh(unique[used], remap[faces])

    # ------------------------------------------------------------------
    # Sampling and voxelisation
    # ------------------------------------------------------------------

    def sample_surface(self, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """
        Uniform samples over the surface (triangle chosen by area, uniform barycentric)

        Args:
            n: Number of samples
            rng: Random generator

        Returns:
            (points (n, 3), index of the face each point lies on)
        """
        self.require_faces()
        areas = self.face_areas()
        face_ids = rng.choice(self.n_faces, size=n, p=areas / areas.sum())
        r1 = np.sqrt(rng.uniform(0.0, 1.0, size=n))
        r2 = rng.uniform(0.0, 1.0, size=n)
        c = self.corners()[face_ids]
        points = (
            (1.0 - r1)[:, None] * c[:, 0]
            + (r1 * (1.0 - r2))[:, None] * c[:, 1]
            + (r1 * r2)[:, None] * c[:, 2]
        )
        return points, face_ids

    def voxelize(self, like: VoxelGrid) -> VoxelGrid:
        """
        Inside test at every sample position of a grid by z-ray crossing parity

        The mesh must be closed. Rays are shifted by a tiny irrational fraction
        of a cell in x and y so they never pass exactly through vertices or edges.

        Args:
            like: Grid whose geometry is used

        Returns:
            Binary grid (1 inside)
        """
        nx, ny, nz = like.shape
        occupied = np.zeros(like.shape, dtype=np.int8)
        if self.is_empty():
            return like.with_values(occupied)

        jitter = like.h * np.array([1.1892071e-6, 0.7937005e-6])
        ox, oy = like.origin[:2] + jitter
        c = self.corners()
        x, y, z = c[..., 0], c[..., 1], c[..., 2]

        # candidate columns per triangle from its xy bounding box
        i_lo = np.clip(np.ceil((x.min(axis=1) - ox) / like.h), 0, nx).astype(np.int64)
        i_hi = np.clip(np.floor((x.max(axis=1) - ox) / like.h), -1, nx - 1).astype(np.int64)
        j_lo = np.clip(np.ceil((y.min(axis=1) - oy) / like.h), 0, ny).astype(np.int64)
        j_hi = np.clip(np.floor((y.max(axis=1) - oy) / like.h), -1, ny - 1).astype(np.int64)
        ni = np.maximum(i_hi - i_lo + 1, 0)
        nj = np.maximum(j_hi - j_lo + 1, 0)
        counts = ni * nj
        if counts.sum() == 0:
            return like.with_values(occupied)

        tri = np.repeat(np.arange(self.n_faces), counts)
        local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        ci = i_lo[tri] + local // nj[tri]
        cj = j_lo[tri] + local % nj[tri]
        px = ox + ci * like.h
        py = oy + cj * like.h

        # 2-D barycentric test in the xy projection
        x0, x1, x2 = x[tri, 0], x[tri, 1], x[tri, 2]
        y0, y1, y2 = y[tri, 0], y[tri, 1], y[tri, 2]
        det = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
        valid = det != 0.0
        safe = np.where(valid, det, 1.0)
        w0 = ((y1 - y2) * (px - x2) + (x2 - x1) * (py - y2)) / safe
        w1 = ((y2 - y0) * (px - x2) + (x0 - x2) * (py - y2)) / safe
        w2 = 1.0 - w0 - w1
        hit = valid & (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not np.any(hit):
            return like.with_values(occupied)

        zc = (w0 * z[tri, 0] + w1 * z[tri, 1] + w2 * z[tri, 2])[hit]
        column = (ci * ny + cj)[hit]
        order = np.lexsort((zc, column))
        column, zc = column[order], zc[order]
        starts = np.flatnonzero(np.r_[True, column[1:] != column[:-1]])
        ends = np.r_[starts[1:], len(column)]
        cell_z = like.origin[2] + like.h * np.arange(nz)
        flat = occupied.reshape(nx * ny, nz)
        for start, end in zip(starts, ends):
            below = np.searchsorted(zc[start:end], cell_z)
            flat[column[start]] = below % 2
        return like.with_values(occupied)


# ============================================================================
# OBJ I/O
# ============================================================================

def write_obj(path: Union[str, Path], mesh: TriangleMesh) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    path.write_text("\n".join(lines) + ("\n" if lines else ""))
    return path


def read_obj(path: Union[str, Path]) -> TriangleMesh:
    """
    Read v and f records; other records are skipped

    Polygon faces are fan-triangulated and "i/t/n" index forms keep only the vertex index.
    """
    path = Path(path)
    vertices, faces = [], []
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        try:
            if fields[0] == "v":
                vertices.append([float(v) for v in fields[1:4]])
            elif fields[0] == "f":
                ids = [int(f.split("/")[0]) for f in fields[1:]]
                ids = [i - 1 if i > 0 else len(vertices) + i for i in ids]
                faces.extend([ids[0], ids[k], ids[k + 1]] for k in range(1, len(ids) - 1))
        except ValueError as error:
            raise ValueError(f"{path}:{number}: malformed record {line.strip()!r}") from error
    if any(len(v) != 3 for v in vertices):
        raise ValueError(f"{path}: vertex records need three coordinates")
    return TriangleMesh(np.array(vertices).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))
