"""Candidate viewpoint rigs and the per-cycle visited-view state."""

from dataclasses import dataclass

import numpy as np

from ._validation import check_int, check_point, check_positive
from .sensor import Viewpoint


@dataclass(frozen=True)
class CandidateSet:
    """Views on a cylinder around a vertical axis, all facing that axis.

    View ``i`` sits at angle ``i // n_heights`` and height ``i % n_heights``.
    """

    views: tuple
    radius: float
    heights: tuple
    n_angles: int
    span: float
    center: tuple

    def __len__(self):
        return len(self.views)

    def __getitem__(self, i):
        return self.views[i]

    @property
    def n_heights(self):
        return len(self.heights)

    def index(self, angle_index, height_index):
        return angle_index * self.n_heights + height_index

    def to_json(self):
        return {
            "radius": self.radius,
            "heights": list(self.heights),
            "n_angles": self.n_angles,
            "span": self.span,
            "center": list(self.center),
            "views": [{"position": list(v.position), "orientation": list(v.orientation)} for v in self.views],
        }


def rig_angles(n_angles, span):
    """Azimuths in degrees: the full circle drops its duplicate endpoint,
    an arc keeps both ends and is centred on 0."""
    if span >= 360.0:
        return np.arange(n_angles) * (360.0 / n_angles)
    if n_angles == 1:
        return np.zeros(1)
    return np.linspace(-span / 2.0, span / 2.0, n_angles)


def sample_cylinder(radius, heights, n_angles, span=360.0, center=(0.0, 0.0, 0.0)):
    radius = check_positive(radius, "radius")
    n_angles = check_int(n_angles, "n_angles", minimum=1)
    heights = tuple(float(h) for h in heights)
    if not heights:
        raise ValueError("heights must be non-empty")
    if not 0.0 < span <= 360.0:
        raise ValueError(f"span must lie in (0, 360], got {span}")
    c = check_point(center, "center")
    views = []
    for phi in np.deg2rad(rig_angles(n_angles, span)):
        x = c[0] + radius * np.cos(phi)
        y = c[1] + radius * np.sin(phi)
        # yaw pointing back at the axis
        yaw = float(np.rad2deg(np.arctan2(c[1] - y, c[0] - x)))
        for h in heights:
            views.append(Viewpoint((x, y, c[2] + h), (0.0, 0.0, yaw)))
    return CandidateSet(tuple(views), radius, heights, n_angles, float(span), tuple(c))


def s1_rig():
    """33-view full cylinder, radius 0.6 m."""
    return sample_cylinder(0.6, (0.04, 0.25, 0.46), 11, 360.0)


def s2_rig():
    return sample_cylinder(0.5, (0.04, 0.25, 0.46), 11, 360.0)


def semi_cylinder_rig():
    """33 views over a 120 degree arc, radius 0.45 m."""
    return sample_cylinder(0.45, (0.75, 1.0, 1.25), 11, 120.0)


_ZIGZAG_HEIGHTS = (0, 1, 2, 1, 0, 1, 2, 1, 0, 1, 2)


def zigzag_subset(rig):
    """One view per angle, heights alternating low-mid-high-mid-..."""
    if rig.n_angles != 11 or rig.n_heights != 3:
        raise ValueError(f"zigzag needs an 11 x 3 rig, got {rig.n_angles} x {rig.n_heights}")
    return [rig.index(a, h) for a, h in enumerate(_ZIGZAG_HEIGHTS)]


def initial_state(n_views):
    return np.zeros(check_int(n_views, "n_views", minimum=1), dtype=np.uint8)


def mark_visited(state, i):
    """Copy of ``state`` with view ``i`` set."""
    state = np.asarray(state, dtype=np.uint8)
    if not 0 <= i < len(state):
        raise IndexError(f"view index {i} out of range for {len(state)} views")
    out = state.copy()
    out[i] = 1
    return out


def unvisited(state):
    return np.flatnonzero(np.asarray(state) == 0)
