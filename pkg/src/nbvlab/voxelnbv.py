"""Occupancy-grid baseline: log-odds integration and ray-cast view scoring."""

import json
import struct

import numpy as np
from scipy.ndimage import binary_dilation

from . import _kernels
from ._validation import check_cloud, check_point, check_positive
from .sensor import CameraIntrinsics, ray_directions
from .views import unvisited

FREE, OCCUPIED, UNKNOWN = 0, 1, 2

# plant envelope the grid must always contain, metres above the rig centre
_PLANT_Z = (0.0, 0.7)


class OccupancyGrid:
    """Dense log-odds voxel map.

    A voxel is unknown until a ray touches it; observed voxels with log-odds
    above ``occupied_threshold`` are occupied, the rest free.

    Parameters
    ----------
    origin : array-like of shape (3,)
        Minimum corner of the grid.
    resolution : float
        Voxel edge length in metres.
    dims : tuple of int
        Number of voxels along x, y, z.
    hit, miss : float
        Log-odds increments for endpoint and pass-through voxels.
    clamp : float or None
        Symmetric log-odds bound; ``None`` disables clamping.
    """

    def __init__(self, origin, resolution, dims, hit=0.85, miss=-0.4, clamp=3.5, occupied_threshold=0.0):
        self.origin = check_point(origin, "origin")
        self.resolution = check_positive(resolution, "resolution")
        self.dims = tuple(int(d) for d in dims)
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"dims must be three positive ints, got {dims}")
        self.hit = float(hit)
        self.miss = float(miss)
        self.clamp = None if clamp is None else float(clamp)
        self.occupied_threshold = float(occupied_threshold)
        self.logodds = np.zeros(self.dims)
        self.observed = np.zeros(self.dims, dtype=bool)

    @classmethod
    def around_rig(cls, rig, resolution=0.003, pad=0.1, **kwargs):
        """Grid covering the rig's bounding cylinder and the plant envelope, padded."""
        c = np.asarray(rig.center)
        half = rig.radius + pad
        z_lo = min(min(rig.heights), _PLANT_Z[0]) - pad
        z_hi = max(max(rig.heights), _PLANT_Z[1]) + pad
        origin = c + np.array([-half, -half, z_lo])
        extent = np.array([2 * half, 2 * half, z_hi - z_lo])
        dims = np.ceil(extent / resolution - 1e-9).astype(int)
        return cls(origin, resolution, dims, **kwargs)

    @property
    def upper(self):
        return self.origin + np.array(self.dims) * self.resolution

    def copy(self):
        other = OccupancyGrid(self.origin, self.resolution, self.dims, self.hit, self.miss, self.clamp,
                              self.occupied_threshold)
        other.logodds = self.logodds.copy()
        other.observed = self.observed.copy()
        return other

    def voxel_of(self, point):
        return tuple(np.floor((np.asarray(point) - self.origin) / self.resolution).astype(int))

    def state(self):
        """Per-voxel FREE / OCCUPIED / UNKNOWN labels."""
        out = np.full(self.dims, UNKNOWN, dtype=np.uint8)
        out[self.observed & (self.logodds > self.occupied_threshold)] = OCCUPIED
        out[self.observed & (self.logodds <= self.occupied_threshold)] = FREE
        return out

    def stats(self):
        n_occ = int(np.count_nonzero(self.observed & (self.logodds > self.occupied_threshold)))
        n_obs = int(np.count_nonzero(self.observed))
        return {"free": n_obs - n_occ, "occupied": n_occ, "unknown": int(self.observed.size - n_obs)}

    def integrate(self, cloud, sensor_origin, miss_directions=None, max_range=None):
        """Insert one scan taken from ``sensor_origin``.

        Every voxel crossed on the way to a point gets one free update and
        every voxel holding a point gets one occupied update; a voxel that is
        both counts as occupied. ``miss_directions`` are rays that returned
        nothing: they clear space out to ``max_range``. Each voxel changes at
        most once per scan, so the result does not depend on point order.
        """
        cloud = check_cloud(cloud)
        origin = check_point(sensor_origin, "sensor_origin")
        dims = np.array(self.dims, dtype=np.int64)
        free, ends = _kernels.trace_segments(self.origin, self.resolution, dims, origin, cloud, True)
        if miss_directions is not None and len(miss_directions):
            if max_range is None:
                raise ValueError("max_range is required with miss_directions")
            dirs = check_cloud(miss_directions, name="miss_directions")
            far = origin + float(max_range) * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
            extra, _ = _kernels.trace_segments(self.origin, self.resolution, dims, origin, far, False)
            free = np.concatenate([free, extra])
        occupied = np.unique(ends)
        free = np.setdiff1d(free, occupied)
        self._update(free, self.miss)
        self._update(occupied, self.hit)
        return self

    def _update(self, flat, delta):
        lo = self.logodds.reshape(-1)
        values = lo[flat] + delta
        if self.clamp is not None:
            np.clip(values, -self.clamp, self.clamp, out=values)
        lo[flat] = values
        self.observed.reshape(-1)[flat] = True

    def ray_counts(self, view, intr, roi=None):
        """Per-ray (unknown, traversed) voxel counts for ``view``.

        ``roi`` is an optional boolean grid restricting which voxels count.
        """
        dirs = np.ascontiguousarray(ray_directions(view, intr))
        if roi is None:
            mask, use = np.zeros((1, 1, 1), dtype=bool), False
        else:
            mask, use = np.asarray(roi, dtype=bool), True
            if mask.shape != self.dims:
                raise ValueError(f"roi shape {mask.shape} does not match grid {self.dims}")
        return _kernels.raycast_counts(
            self.logodds, self.observed, self.origin, self.resolution,
            np.asarray(view.position, dtype=np.float64), dirs,
            float(intr.max_range), self.occupied_threshold, mask, use,
        )

    def surface_roi(self, dilation=1):
        """Occupied voxels grown by ``dilation`` voxels (26-connected steps)."""
        occ = self.observed & (self.logodds > self.occupied_threshold)
        if dilation < 1 or not occ.any():
            return occ
        return binary_dilation(occ, structure=np.ones((3, 3, 3), dtype=bool), iterations=int(dilation))

    def dump(self, path):
        header = {
            "origin": self.origin.tolist(), "resolution": self.resolution, "dims": list(self.dims),
            "hit": self.hit, "miss": self.miss, "clamp": self.clamp,
            "occupied_threshold": self.occupied_threshold, "dtype": "<f8", "order": "C",
        }
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            fh.write(np.packbits(self.observed.ravel()).tobytes())
            fh.write(self.logodds.astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            (n,) = struct.unpack("<Q", fh.read(8))
            h = json.loads(fh.read(n))
            grid = cls(h["origin"], h["resolution"], h["dims"], h["hit"], h["miss"], h["clamp"],
                       h["occupied_threshold"])
            size = int(np.prod(grid.dims))
            bits = np.frombuffer(fh.read((size + 7) // 8), dtype=np.uint8)
            grid.observed = np.unpackbits(bits)[:size].astype(bool).reshape(grid.dims)
            grid.logodds = np.frombuffer(fh.read(8 * size), dtype="<f8").astype(np.float64).reshape(grid.dims)
        return grid


def integrate(grid, cloud, sensor_origin):
    return grid.integrate(cloud, sensor_origin)


def raycast_ig(grid, view, intr=None):
    """Unknown share of all voxels traversed by the view's rays, in [0, 1]."""
    unknown, traversed = grid.ray_counts(view, intr or CameraIntrinsics())
    total = traversed.sum()
    return float(unknown.sum()) / total if total else 0.0


def surface_unknown_count(grid, view, roi, intr=None):
    """Unknown voxels inside ``roi`` that the view's rays traverse (with repeats)."""
    unknown, _ = grid.ray_counts(view, intr or CameraIntrinsics(), roi)
    return int(unknown.sum())


def best_view_voxel(grid, candidates, state, intr=None, score="ratio", dilation=1):
    """Unvisited candidate with the highest ray-cast score; ties go to the lower index.

    ``score="ratio"`` ranks by :func:`raycast_ig`. ``score="surface"`` ranks
    by :func:`surface_unknown_count` within ``dilation`` voxels of the
    occupied surface, falling back to the ratio while nothing is occupied.
    """
    free = unvisited(state)
    if len(free) == 0:
        raise ValueError("every candidate has been visited")
    if score not in ("ratio", "surface"):
        raise ValueError(f"score must be 'ratio' or 'surface', got {score!r}")
    roi = grid.surface_roi(dilation) if score == "surface" else None
    if roi is None or not roi.any():
        scores = [raycast_ig(grid, candidates[i], intr) for i in free]
    else:
        scores = [surface_unknown_count(grid, candidates[i], roi, intr) for i in free]
    return int(free[int(np.argmax(scores))])
