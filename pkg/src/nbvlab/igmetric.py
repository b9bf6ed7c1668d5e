"""Self-supervised gain labels, accumulated-cloud updates and coverage metrics."""

from dataclasses import dataclass

import numpy as np

from ._validation import check_cloud, check_positive
from .pointcloud import intersection_mask


class EmptyCaptureError(ValueError):
    """A capture returned no points, so its gain is undefined."""


@dataclass(frozen=True)
class TargetVector:
    """Gains for all candidates with a mask of which entries are labels."""

    values: np.ndarray
    mask: np.ndarray

    @classmethod
    def single(cls, n_views, index, gain):
        if not 0 <= index < n_views:
            raise IndexError(f"view index {index} out of range for {n_views} views")
        if not 0.0 <= gain <= 1.0:
            raise ValueError(f"gain must lie in [0, 1], got {gain}")
        values = np.zeros(n_views)
        mask = np.zeros(n_views)
        values[index] = gain
        mask[index] = 1.0
        return cls(values, mask)

    @classmethod
    def dense(cls, gains):
        gains = np.asarray(gains, dtype=np.float64)
        if gains.ndim != 1 or np.any((gains < 0.0) | (gains > 1.0)):
            raise ValueError("gains must be a vector of values in [0, 1]")
        return cls(gains.copy(), np.ones_like(gains))

    @property
    def n_labels(self):
        return int(self.mask.sum())


def novel_mask(accumulated, captured, delta):
    return ~intersection_mask(captured, accumulated, delta)


def ground_truth_ig(accumulated, captured, delta=0.003):
    """Fraction of ``captured`` farther than ``delta`` from ``accumulated``."""
    captured = check_cloud(captured, name="captured")
    if len(captured) == 0:
        raise EmptyCaptureError("captured cloud is empty")
    return float(novel_mask(accumulated, captured, delta).sum()) / len(captured)


def merge_accumulated(accumulated, captured, delta=0.003):
    """Append the novel part of ``captured`` to ``accumulated``."""
    accumulated = check_cloud(accumulated, name="accumulated")
    captured = check_cloud(captured, name="captured")
    if len(captured) == 0:
        return accumulated.copy()
    return np.vstack([accumulated, captured[novel_mask(accumulated, captured, delta)]])


def observe(accumulated, captured, delta=0.003):
    """Gain and merged cloud from one shared novelty test.

    Equivalent to calling :func:`ground_truth_ig` and
    :func:`merge_accumulated` on the same inputs.
    """
    accumulated = check_cloud(accumulated, name="accumulated")
    captured = check_cloud(captured, name="captured")
    if len(captured) == 0:
        raise EmptyCaptureError("captured cloud is empty")
    novel = novel_mask(accumulated, captured, delta)
    return float(novel.sum()) / len(captured), np.vstack([accumulated, captured[novel]])


def reconstruction_ratio(ground_truth, accumulated, delta=0.003):
    """Share of ground-truth points within ``delta`` of the accumulated cloud."""
    delta = check_positive(delta, "delta")
    ground_truth = check_cloud(ground_truth, name="ground_truth")
    if len(ground_truth) == 0:
        raise ValueError("ground truth cloud is empty")
    return float(intersection_mask(ground_truth, accumulated, delta).sum()) / len(ground_truth)


def views_to_threshold(ratios, tau):
    """1-based count of views until the ratio first reaches ``tau``, else None."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    for i, r in enumerate(ratios):
        if r >= tau:
            return i + 1
    return None
