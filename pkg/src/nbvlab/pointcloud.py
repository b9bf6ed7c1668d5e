"""Point-cloud geometry: voxel downsampling, exact nearest-neighbour queries
and the thresholded intersection used by every gain and coverage metric.

Clouds are plain ``(n, 3)`` float64 arrays. Nothing here mutates its inputs.
"""

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_cloud, check_positive


def voxel_indices(cloud, voxel_size):
    """Integer voxel coordinates of each point, grid anchored at the origin."""
    return np.floor(cloud / voxel_size).astype(np.int64)


def voxel_downsample(cloud, voxel_size):
    """Replace the points of every occupied voxel by their centroid.

    Output points are ordered by voxel key, so the result is independent of
    the input point order up to floating-point summation.
    """
    voxel_size = check_positive(voxel_size, "voxel_size")
    cloud = check_cloud(cloud)
    if len(cloud) == 0:
        return cloud.copy()
    keys = voxel_indices(cloud, voxel_size)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    out = np.empty((len(counts), 3))
    for axis in range(3):
        out[:, axis] = np.bincount(inverse, weights=cloud[:, axis], minlength=len(counts))
    out /= counts[:, None]
    return out


class NNIndex:
    """Exact nearest-neighbour index over an immutable snapshot of a cloud."""

    def __init__(self, cloud):
        self.points = check_cloud(cloud, copy=True)
        self.points.setflags(write=False)
        self._tree = cKDTree(self.points) if len(self.points) else None

    def __len__(self):
        return len(self.points)

    def nearest_distance(self, queries):
        """Distance from each query to its nearest indexed point (``inf`` if empty)."""
        queries = check_cloud(queries, name="queries")
        if self._tree is None:
            return np.full(len(queries), np.inf)
        if len(queries) == 0:
            return np.empty(0)
        dist, _ = self._tree.query(queries, k=1)
        return dist

    def within(self, queries, delta):
        """Boolean mask of queries with a neighbour at distance ``<= delta``."""
        queries = check_cloud(queries, name="queries")
        if self._tree is None or len(queries) == 0:
            return np.zeros(len(queries), dtype=bool)
        # the upper bound is exclusive in cKDTree, so widen by one ulp and
        # settle the boundary with an explicit comparison
        dist, _ = self._tree.query(queries, k=1, distance_upper_bound=np.nextafter(delta, np.inf))
        return dist <= delta


def build_nn_index(cloud):
    return NNIndex(cloud)


def _as_index(reference):
    return reference if isinstance(reference, NNIndex) else NNIndex(reference)


def intersection_mask(query, reference, delta):
    """Mask over ``query``: True where some reference point is within ``delta``.

    ``reference`` may be a cloud or a prebuilt :class:`NNIndex`.
    """
    delta = check_positive(delta, "delta")
    query = check_cloud(query, name="query")
    return _as_index(reference).within(query, delta)


def threshold_intersection(query, reference, delta):
    """Points of ``query`` whose nearest reference point is at most ``delta`` away.

    Query order is preserved and duplicates count once per occurrence.
    """
    query = check_cloud(query, name="query")
    return query[intersection_mask(query, reference, delta)]


def set_difference(query, reference, delta):
    """Points of ``query`` farther than ``delta`` from every reference point."""
    query = check_cloud(query, name="query")
    return query[~intersection_mask(query, reference, delta)]


class VoxelDownsampler(TransformerMixin, BaseEstimator):
    """Voxel-grid filter as a stateless transformer.

    Parameters
    ----------
    voxel_size : float, default=0.003
        Edge length of the cubic voxels in metres.
    """

    def __init__(self, voxel_size=0.003):
        self.voxel_size = voxel_size

    def fit(self, X, y=None):
        check_positive(self.voxel_size, "voxel_size")
        check_cloud(X, name="X")
        return self

    def transform(self, X):
        return voxel_downsample(X, self.voxel_size)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags
