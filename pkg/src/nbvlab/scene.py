"""Procedural plant-like meshes, randomized placement and ground-truth sampling."""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_int, check_positive
from .pointcloud import voxel_downsample

DEFAULT_PLANT_PARAMS = {"n_leaves": 8, "height": 0.5, "leaf_size": 0.15}

# leaf blade tessellation (along midrib, across blade)
_LEAF_SEGMENTS = 10
_LEAF_COLUMNS = 4
_STEM_SIDES = 8
_STEM_RINGS = 8
_MIN_TRIANGLE_AREA = 1e-12


@dataclass(frozen=True)
class PlantModel:
    vertices: np.ndarray
    faces: np.ndarray
    seed: int
    params: dict = field(default_factory=dict)

    @property
    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass(frozen=True)
class ScenePose:
    dx: float = 0.0
    dy: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.theta < 360.0:
            raise ValueError(f"theta must lie in [0, 360), got {self.theta}")


@dataclass(frozen=True)
class Scene:
    plant: PlantModel
    pose: ScenePose
    vertices: np.ndarray
    faces: np.ndarray
    ground_plane: bool = False

    @property
    def triangles(self):
        return self.vertices[self.faces]


def triangle_areas(vertices, faces):
    tri = np.asarray(vertices)[np.asarray(faces)]
    return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)


def _grid_faces(rows, cols, offset):
    """Two triangles per cell of a ``rows x cols`` vertex lattice."""
    faces = []
    for i in range(rows - 1):
        for j in range(cols - 1):
            a = offset + i * cols + j
            b, c, d = a + 1, a + cols, a + cols + 1
            faces.append((a, c, b))
            faces.append((b, c, d))
    return faces


def _stem(height, base_radius):
    z = np.linspace(0.0, height, _STEM_RINGS + 1)
    radius = base_radius * (1.0 - 0.5 * z / height)
    phi = np.linspace(0.0, 2 * np.pi, _STEM_SIDES, endpoint=False)
    verts = np.stack(
        [
            (radius[:, None] * np.cos(phi)).ravel(),
            (radius[:, None] * np.sin(phi)).ravel(),
            np.repeat(z, _STEM_SIDES),
        ],
        axis=1,
    )
    faces = []
    for i in range(_STEM_RINGS):
        for j in range(_STEM_SIDES):
            a = i * _STEM_SIDES + j
            b = i * _STEM_SIDES + (j + 1) % _STEM_SIDES
            c, d = a + _STEM_SIDES, b + _STEM_SIDES
            faces.append((a, b, c))
            faces.append((b, d, c))
    return verts, faces


def _leaf(base, azimuth, length, width, elevation, tip_elevation, roll):
    radial = np.array([np.cos(azimuth), np.sin(azimuth), 0.0])
    tangent = np.array([-np.sin(azimuth), np.cos(azimuth), 0.0])
    up = np.array([0.0, 0.0, 1.0])

    s = np.linspace(0.0, 1.0, _LEAF_SEGMENTS + 1)
    angle = elevation + (tip_elevation - elevation) * s
    step = length / _LEAF_SEGMENTS
    direction = np.cos(angle)[:, None] * radial + np.sin(angle)[:, None] * up
    midrib = base + np.vstack([np.zeros(3), np.cumsum(direction[:-1] * step, axis=0)])

    # blade axis across the midrib, twisted by the roll angle
    normal = np.cross(direction, tangent)
    across = np.cos(roll) * tangent + np.sin(roll) * normal
    across /= np.linalg.norm(across, axis=1, keepdims=True)

    s_clip = np.clip(s, 0.04, 0.96)
    half_width = 0.5 * width * np.sqrt(1.0 - (2.0 * s_clip - 1.0) ** 2)
    w = np.linspace(-1.0, 1.0, _LEAF_COLUMNS + 1)
    verts = midrib[:, None, :] + (half_width[:, None] * w[None, :])[:, :, None] * across[:, None, :]
    return verts.reshape(-1, 3)


def generate_plant(seed, params=None):
    """Build a deterministic stem-and-leaves mesh for ``seed``.

    ``params`` may override ``n_leaves``, ``height`` and ``leaf_size``.
    Leaves sit at distinct heights and golden-angle azimuths, tilt upward and
    droop toward the tip, so horizontal views occlude one another.
    """
    p = dict(DEFAULT_PLANT_PARAMS)
    p.update(params or {})
    n_leaves = check_int(p["n_leaves"], "n_leaves", minimum=1)
    height = check_positive(p["height"], "height")
    leaf_size = check_positive(p["leaf_size"], "leaf_size")
    rng = np.random.default_rng(seed)

    base_radius = max(0.004, 0.02 * height)
    verts, faces = _stem(height, base_radius)
    all_verts = [verts]
    n_verts = len(verts)

    lo, hi = 0.25 * height, 0.9 * height
    heights = np.linspace(lo, hi, n_leaves) if n_leaves > 1 else np.array([0.6 * height])
    heights = heights + rng.uniform(-0.02, 0.02, n_leaves) * height
    golden = np.deg2rad(137.5)
    for k in range(n_leaves):
        azimuth = k * golden + np.deg2rad(rng.uniform(-15.0, 15.0))
        length = leaf_size * rng.uniform(0.8, 1.2)
        width = length * rng.uniform(0.35, 0.5)
        elevation = np.deg2rad(rng.uniform(15.0, 45.0))
        tip = elevation - np.deg2rad(rng.uniform(30.0, 60.0))
        roll = np.deg2rad(rng.uniform(-30.0, 30.0))
        stem_r = base_radius * (1.0 - 0.5 * heights[k] / height)
        base = np.array([np.cos(azimuth), np.sin(azimuth), 0.0]) * (stem_r + 0.01)
        base[2] = heights[k]
        leaf = _leaf(base, azimuth, length, width, elevation, tip, roll)
        faces.extend(_grid_faces(_LEAF_SEGMENTS + 1, _LEAF_COLUMNS + 1, n_verts))
        all_verts.append(leaf)
        n_verts += len(leaf)

    vertices = np.vstack(all_verts)
    faces = np.asarray(faces, dtype=np.int64)
    keep = triangle_areas(vertices, faces) > _MIN_TRIANGLE_AREA
    return PlantModel(vertices=vertices, faces=faces[keep], seed=int(seed), params=p)


def place_plant(plant, pose, ground_plane=False):
    """Rotate the plant about z by ``pose.theta`` degrees, then translate."""
    t = np.deg2rad(pose.theta)
    c, s = np.cos(t), np.sin(t)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    vertices = plant.vertices @ rot.T + np.array([pose.dx, pose.dy, 0.0])
    return Scene(plant=plant, pose=pose, vertices=vertices, faces=plant.faces, ground_plane=ground_plane)


def pose_lattice(offset_range=0.1, offset_step=0.02, angle_step=20.0):
    """Discrete translation values and rotation angles a pose is drawn from."""
    n = int(round(2 * offset_range / offset_step))
    offsets = np.linspace(-offset_range, offset_range, n + 1)
    angles = np.arange(0.0, 360.0, angle_step)
    return offsets, angles


def sample_pose(rng, offset_range=0.1, offset_step=0.02, angle_step=20.0):
    offsets, angles = pose_lattice(offset_range, offset_step, angle_step)
    dx, dy = rng.choice(offsets, size=2)
    return ScenePose(dx=float(dx), dy=float(dy), theta=float(rng.choice(angles)))


def sample_surface(vertices, faces, n, rng):
    """Area-weighted uniform samples on a triangle mesh.

    Returns the points and the index of the triangle each came from.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    if len(faces) == 0:
        raise ValueError("cannot sample an empty mesh")
    areas = triangle_areas(vertices, faces)
    tri_ids = rng.choice(len(faces), size=n, p=areas / areas.sum())
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1.0
    u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
    tri = vertices[faces[tri_ids]]
    points = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
    return points, tri_ids


def sample_ground_truth(scene, resolution=0.003, seed=0, oversample=8.0):
    """Dense surface samples of the placed mesh, voxel-downsampled to ``resolution``."""
    resolution = check_positive(resolution, "resolution")
    if len(scene.faces) == 0:
        raise ValueError("scene mesh is empty")
    area = triangle_areas(scene.vertices, scene.faces).sum()
    n = max(1, int(np.ceil(oversample * area / resolution**2)))
    points, _ = sample_surface(scene.vertices, scene.faces, n, np.random.default_rng(seed))
    return voxel_downsample(points, resolution)


def scene_manifest(scene):
    return {
        "seed": scene.plant.seed,
        "params": dict(scene.plant.params),
        "pose": {"dx": scene.pose.dx, "dy": scene.pose.dy, "theta": scene.pose.theta},
        "ground_plane": scene.ground_plane,
    }


def scene_from_manifest(manifest):
    plant = generate_plant(manifest["seed"], manifest["params"])
    return place_plant(plant, ScenePose(**manifest["pose"]), ground_plane=manifest.get("ground_plane", False))
