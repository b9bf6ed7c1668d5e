"""Input validation helpers shared by the estimators and free functions."""

import numbers

import numpy as np
from sklearn.utils import check_array


def check_cloud(cloud, name="cloud", dtype=np.float64, copy=False):
    """Return ``cloud`` as a finite ``(n, 3)`` float array.

    Empty clouds are allowed and come back with shape ``(0, 3)``.
    """
    if cloud is None:
        return np.empty((0, 3), dtype=dtype)
    arr = np.asarray(cloud)
    if arr.size == 0:
        return np.empty((0, 3), dtype=dtype)
    if arr.ndim == 1 and arr.shape[0] == 3:
        arr = arr.reshape(1, 3)
    arr = check_array(
        arr,
        dtype=dtype,
        copy=copy,
        ensure_all_finite=True,
        input_name=name,
    )
    if arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {arr.shape}")
    return arr


def check_point(point, name="point"):
    arr = np.asarray(point, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have 3 coordinates, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_non_negative(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be a non-negative finite number, got {value!r}")
    return float(value)


def check_int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)
