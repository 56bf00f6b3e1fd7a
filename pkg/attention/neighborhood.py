"""
k-nearest-neighbour patches
"""

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.spatial import cKDTree

from geometry.pointcloud import PointCloud

# Up to this many anchor-point pairs a full distance table is used instead of the tree
_BRUTE_FORCE_PAIRS = 65536
# Extra tree candidates fetched beyond k before the exact re-sort
_CANDIDATE_SLACK = 8


class NeighborhoodError(ValueError):
    """Raised for an empty cloud or a k the cloud cannot supply"""
    pass


@dataclass
class Neighborhood:
    """N x k index table binding each anchor to its patch"""

    indices: np.ndarray
    offsets: np.ndarray

    @property
    def n_anchors(self) -> int:
        return self.indices.shape[0]

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    def canonical(self) -> "Neighborhood":
        """Rows reordered by ascending neighbour index"""
        order = np.argsort(self.indices, axis=1, kind="stable")
        rows = np.arange(self.n_anchors)[:, None]
        return Neighborhood(self.indices[rows, order], self.offsets[rows, order])


def _as_points(points: Union[PointCloud, np.ndarray]) -> np.ndarray:
    if isinstance(points, PointCloud):
        return points.points
    return np.asarray(points, dtype=np.float64).reshape(-1, 3)


def _sorted_rows(d2: np.ndarray, cand: np.ndarray):
    order = np.lexsort((cand, d2), axis=-1)
    rows = np.arange(d2.shape[0])[:, None]
    return d2[rows, order], cand[rows, order]


def knn(
    points: Union[PointCloud, np.ndarray],
    k: int,
    include_self: bool = True,
    queries: Optional[np.ndarray] = None,
) -> Neighborhood:
    """
    k nearest cloud points of every anchor, ties broken by smaller index

    Args:
        points: Cloud searched
        k: Neighbours per anchor
        include_self: When anchors are the cloud itself, whether a point may be its own neighbour
        queries: Anchors other than the cloud points (include_self is then irrelevant)

    Returns:
        Neighborhood with rows sorted by (distance, index) and offsets p_neighbour - anchor
    """
    cloud = _as_points(points)
    n = len(cloud)
    if n == 0:
        raise NeighborhoodError("cannot build neighbourhoods on an empty cloud")
    exclude_self = queries is None and not include_self
    available = n - 1 if exclude_self else n
    if not 1 <= k <= available:
        raise NeighborhoodError(f"k must be in [1, {available}] for {n} points, got {k}")
    anchors = cloud if queries is None else np.asarray(queries, dtype=np.float64).reshape(-1, 3)

    def exact(cand: np.ndarray) -> np.ndarray:
        d2 = np.sum((cloud[cand] - anchors[:, None, :]) ** 2, axis=-1)
        if exclude_self:
            d2[cand == np.arange(len(anchors))[:, None]] = np.inf
        return d2

    if n * len(anchors) <= _BRUTE_FORCE_PAIRS:
        cand = np.broadcast_to(np.arange(n), (len(anchors), n)).copy()
        d2, cand = _sorted_rows(exact(cand), cand)
    else:
        m = min(n, k + _CANDIDATE_SLACK)
        _, cand = cKDTree(cloud).query(anchors, k=m)
        cand = np.asarray(cand, dtype=np.int64).reshape(len(anchors), m)
        d2, cand = _sorted_rows(exact(cand), cand)
        if m < n:
            # ties at the k-th distance may continue past the candidate list
            farthest = np.where(np.isfinite(d2), d2, -np.inf).max(axis=1)
            redo = np.flatnonzero(d2[:, k - 1] >= farthest)
            if len(redo):
                full = np.broadcast_to(np.arange(n), (len(redo), n)).copy()
                d2_full = np.sum((cloud[full] - anchors[redo, None, :]) ** 2, axis=-1)
                if exclude_self:
                    d2_full[full == redo[:, None]] = np.inf
                _, full = _sorted_rows(d2_full, full)
                cand = cand[:, :k].copy()
                cand[redo] = full[:, :k]

    indices = np.ascontiguousarray(cand[:, :k])
    offsets = cloud[indices] - anchors[:, None, :]
    return Neighborhood(indices, offsets)
