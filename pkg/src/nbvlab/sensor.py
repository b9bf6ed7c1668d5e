"""Simulated depth camera and the noise-filtering chain applied to its output."""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.pipeline import make_pipeline

from . import _kernels
from ._validation import check_cloud, check_int, check_non_negative, check_point, check_positive
from .pointcloud import VoxelDownsampler, voxel_downsample

_CHUNK = 16


class SmallCloudWarning(UserWarning):
    """Raised when a filter needs more points than the cloud has."""


@dataclass(frozen=True)
class CameraIntrinsics:
    h_fov: float = 60.0
    v_fov: float = 45.0
    width: int = 64
    height: int = 48
    min_range: float = 0.1
    max_range: float = 1.5

    def __post_init__(self):
        for name in ("h_fov", "v_fov"):
            fov = getattr(self, name)
            if not 0.0 < fov < 180.0:
                raise ValueError(f"{name} must lie in (0, 180), got {fov}")
        check_int(self.width, "width", minimum=1)
        check_int(self.height, "height", minimum=1)
        if not 0.0 <= self.min_range < self.max_range:
            raise ValueError("need 0 <= min_range < max_range")


@dataclass(frozen=True)
class Viewpoint:
    """Camera pose: position plus extrinsic x-y-z Euler angles in degrees.

    The optical axis is the body +x axis; +y is left and +z is up.
    """

    position: tuple
    orientation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in check_point(self.position, "position")))
        angles = np.asarray(self.orientation, dtype=np.float64).reshape(-1)
        if angles.shape != (3,) or not np.all(np.isfinite(angles)):
            raise ValueError("orientation must be three finite angles")
        object.__setattr__(self, "orientation", tuple(float(a) for a in angles))

    @property
    def rotation(self):
        return Rotation.from_euler("xyz", self.orientation, degrees=True).as_matrix()

    @property
    def forward(self):
        return self.rotation[:, 0]

    def as_vector(self):
        return np.array(self.position + self.orientation)


def camera_rays(intr):
    """Unit ray directions in the camera frame, row-major over pixels."""
    th = np.tan(np.deg2rad(intr.h_fov) / 2) * (1.0 - 2.0 * (np.arange(intr.width) + 0.5) / intr.width)
    tv = np.tan(np.deg2rad(intr.v_fov) / 2) * (1.0 - 2.0 * (np.arange(intr.height) + 0.5) / intr.height)
    left, up = np.meshgrid(th, tv)
    rays = np.stack([np.ones(left.size), left.ravel(), up.ravel()], axis=1)
    return rays / np.linalg.norm(rays, axis=1, keepdims=True)


def ray_directions(view, intr):
    """World-frame unit directions of every pixel ray of ``view``."""
    return camera_rays(intr) @ view.rotation.T


class MeshRaycaster:
    """Triangle soup prepared for repeated ray queries.

    Triangles are grouped in consecutive chunks with bounding boxes so rays
    can skip whole leaves at once.
    """

    def __init__(self, vertices, faces, ground_plane=False):
        tri = np.asarray(vertices, dtype=np.float64)[np.asarray(faces, dtype=np.int64)]
        self.v0 = np.ascontiguousarray(tri[:, 0])
        self.e1 = np.ascontiguousarray(tri[:, 1] - tri[:, 0])
        self.e2 = np.ascontiguousarray(tri[:, 2] - tri[:, 0])
        starts = np.arange(0, len(tri), _CHUNK)
        self.chunk_start = np.append(starts, len(tri)).astype(np.int64)
        boxes = [
            np.concatenate([tri[s:s + _CHUNK].reshape(-1, 3).min(0), tri[s:s + _CHUNK].reshape(-1, 3).max(0)])
            for s in starts
        ]
        self.chunk_box = np.array(boxes).reshape(-1, 6)
        self.ground_plane = bool(ground_plane)

    @classmethod
    def from_scene(cls, scene):
        return cls(scene.vertices, scene.faces, scene.ground_plane)

    def cast(self, origin, dirs, t_min, t_max):
        """Distance to the nearest valid hit per ray; ``inf`` on a miss."""
        t = _kernels.cast_mesh(
            np.asarray(origin, dtype=np.float64),
            np.ascontiguousarray(dirs, dtype=np.float64),
            self.v0, self.e1, self.e2, self.chunk_start, self.chunk_box,
            float(t_min), float(t_max), self.ground_plane,
        )
        t[t < 0] = np.inf  # ground hits occlude but are not reported
        return t


def render_depth(scene, view, intr, raycaster=None):
    """Range along every pixel ray (row-major); ``inf`` where nothing is hit."""
    raycaster = raycaster or MeshRaycaster.from_scene(scene)
    return raycaster.cast(np.asarray(view.position), ray_directions(view, intr), intr.min_range, intr.max_range)


def depth_to_points(depth, view, intr):
    dirs = ray_directions(view, intr)
    hit = np.isfinite(depth)
    return np.asarray(view.position) + depth[hit, None] * dirs[hit]


def render_points(scene, view, intr, raycaster=None):
    """Raw first-hit points, one per pixel ray that hits the plant."""
    return depth_to_points(render_depth(scene, view, intr, raycaster), view, intr)


def capture(scene, view, intr, resolution=0.003, raycaster=None):
    """Occlusion-aware partial cloud from ``view``, voxel-downsampled."""
    points = render_points(scene, view, intr, raycaster)
    if resolution is None:
        return points
    return voxel_downsample(points, resolution)


def range_filter(cloud, min_r, max_r, origin=(0.0, 0.0, 0.0)):
    """Keep points whose distance to ``origin`` lies in ``[min_r, max_r]``."""
    min_r = check_non_negative(min_r, "min_r")
    max_r = check_positive(max_r, "max_r")
    if not min_r < max_r:
        raise ValueError("need min_r < max_r")
    cloud = check_cloud(cloud)
    dist = np.linalg.norm(cloud - check_point(origin, "origin"), axis=1)
    return cloud[(dist >= min_r) & (dist <= max_r)]


def sor_statistic(cloud, k):
    """Mean distance of every point to its ``k`` nearest other points."""
    dist, _ = cKDTree(cloud).query(cloud, k=k + 1)
    return dist[:, 1:].mean(axis=1)


def sor_filter(cloud, k=8, std_mult=1.0):
    """Statistical outlier removal.

    Drops points whose mean k-NN distance is strictly greater than the global
    mean of that statistic plus ``std_mult`` standard deviations. Clouds with
    at most ``k`` points come back unchanged with a :class:`SmallCloudWarning`.
    """
    k = check_int(k, "k", minimum=1)
    std_mult = check_positive(std_mult, "std_mult")
    cloud = check_cloud(cloud)
    if len(cloud) <= k:
        warnings.warn(f"cloud has {len(cloud)} points, SOR needs more than k={k}", SmallCloudWarning)
        return cloud.copy()
    stat = sor_statistic(cloud, k)
    threshold = stat.mean() + std_mult * stat.std()
    # slack of a few ulps so rounding alone never removes a point
    threshold += 16 * np.finfo(np.float64).eps * stat.mean()
    return cloud[stat <= threshold]


def add_noise(cloud, sigma=0.0, dropout=0.0, seed=None):
    """Isotropic Gaussian jitter plus independent Bernoulli point dropout."""
    sigma = check_non_negative(sigma, "sigma")
    if not 0.0 <= dropout < 1.0:
        raise ValueError(f"dropout must lie in [0, 1), got {dropout}")
    cloud = check_cloud(cloud)
    rng = np.random.default_rng(seed)
    keep = rng.random(len(cloud)) >= dropout
    noisy = cloud + rng.normal(0.0, sigma, cloud.shape) if sigma > 0 else cloud.copy()
    return noisy[keep]


class _StatelessFilter(TransformerMixin, BaseEstimator):
    def fit(self, X, y=None):
        check_cloud(X, name="X")
        return self

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags


class RangeFilter(_StatelessFilter):
    def __init__(self, min_range=0.1, max_range=1.5, origin=(0.0, 0.0, 0.0)):
        self.min_range = min_range
        self.max_range = max_range
        self.origin = origin

    def transform(self, X):
        return range_filter(X, self.min_range, self.max_range, self.origin)


class StatisticalOutlierRemoval(_StatelessFilter):
    def __init__(self, k=8, std_mult=1.0):
        self.k = k
        self.std_mult = std_mult

    def transform(self, X):
        return sor_filter(X, self.k, self.std_mult)


class NoiseInjector(_StatelessFilter):
    def __init__(self, sigma=0.002, dropout=0.05, seed=None):
        self.sigma = sigma
        self.dropout = dropout
        self.seed = seed

    def transform(self, X):
        return add_noise(X, self.sigma, self.dropout, self.seed)


def make_denoise_pipeline(origin, min_range=0.1, max_range=1.5, k=8, std_mult=1.0, voxel_size=0.01):
    """Range filter, then SOR, then voxel grid, as one sklearn pipeline."""
    return make_pipeline(
        RangeFilter(min_range, max_range, tuple(origin)),
        StatisticalOutlierRemoval(k, std_mult),
        VoxelDownsampler(voxel_size),
    )
