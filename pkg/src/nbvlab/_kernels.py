"""Compiled loops: ray/mesh intersection, voxel traversal and max-pool argmax."""

import numpy as np
from numba import njit

DET_EPS = 1e-9


@njit(cache=True)
def _ray_box(ox, oy, oz, dx, dy, dz, box, t0, t1):
    # slab test; returns (hit, t_enter, t_exit) clipped to [t0, t1]
    for a in range(3):
        o = ox if a == 0 else (oy if a == 1 else oz)
        d = dx if a == 0 else (dy if a == 1 else dz)
        lo = box[a]
        hi = box[a + 3]
        if d == 0.0:
            if o < lo or o > hi:
                return False, t0, t1
        else:
            ta = (lo - o) / d
            tb = (hi - o) / d
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
            if t0 > t1:
                return False, t0, t1
    return True, t0, t1


@njit(cache=True)
def cast_mesh(origin, dirs, v0, e1, e2, chunk_start, chunk_box, t_min, t_max, ground):
    """Nearest intersection distance per ray within ``[t_min, t_max]``.

    Returns ``inf`` for misses and ``-1`` for rays whose nearest hit is the
    ground plane ``z = 0`` (occluder only, never reported as a point).
    """
    n = dirs.shape[0]
    n_chunks = chunk_box.shape[0]
    out = np.empty(n)
    ox, oy, oz = origin[0], origin[1], origin[2]
    for r in range(n):
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        best = t_max
        found = False
        for c in range(n_chunks):
            hit, _, _ = _ray_box(ox, oy, oz, dx, dy, dz, chunk_box[c], t_min, best)
            if not hit:
                continue
            for k in range(chunk_start[c], chunk_start[c + 1]):
                # Moller-Trumbore, double sided
                px = dy * e2[k, 2] - dz * e2[k, 1]
                py = dz * e2[k, 0] - dx * e2[k, 2]
                pz = dx * e2[k, 1] - dy * e2[k, 0]
                det = e1[k, 0] * px + e1[k, 1] * py + e1[k, 2] * pz
                if abs(det) < DET_EPS:
                    continue
                inv = 1.0 / det
                tx = ox - v0[k, 0]
                ty = oy - v0[k, 1]
                tz = oz - v0[k, 2]
                u = (tx * px + ty * py + tz * pz) * inv
                if u < 0.0 or u > 1.0:
                    continue
                qx = ty * e1[k, 2] - tz * e1[k, 1]
                qy = tz * e1[k, 0] - tx * e1[k, 2]
                qz = tx * e1[k, 1] - ty * e1[k, 0]
                v = (dx * qx + dy * qy + dz * qz) * inv
                if v < 0.0 or u + v > 1.0:
                    continue
                t = (e2[k, 0] * qx + e2[k, 1] * qy + e2[k, 2] * qz) * inv
                if t >= t_min and t <= best:
                    best = t
                    found = True
        if ground and dz < 0.0:
            tg = -oz / dz
            if tg >= t_min and tg <= best:
                out[r] = -1.0
                continue
        out[r] = best if found else np.inf
    return out


@njit(cache=True)
def _dda_setup(o, d, t, origin, res, dims):
    # voxel containing o + t*d and the DDA stepping state
    idx = np.empty(3, np.int64)
    step = np.empty(3, np.int64)
    t_next = np.empty(3)
    t_delta = np.empty(3)
    for a in range(3):
        p = o[a] + t * d[a]
        i = int(np.floor((p - origin[a]) / res))
        if i < 0:
            i = 0
        elif i >= dims[a]:
            i = dims[a] - 1
        idx[a] = i
        if d[a] > 0.0:
            step[a] = 1
            t_next[a] = (origin[a] + (i + 1) * res - o[a]) / d[a]
            t_delta[a] = res / d[a]
        elif d[a] < 0.0:
            step[a] = -1
            t_next[a] = (origin[a] + i * res - o[a]) / d[a]
            t_delta[a] = -res / d[a]
        else:
            step[a] = 0
            t_next[a] = np.inf
            t_delta[a] = np.inf
    return idx, step, t_next, t_delta


@njit(cache=True)
def _argmin3(v):
    if v[0] <= v[1] and v[0] <= v[2]:
        return 0
    if v[1] <= v[2]:
        return 1
    return 2


@njit(cache=True)
def _push(buf, n, value):
    if n == buf.shape[0]:
        grown = np.empty(2 * buf.shape[0], buf.dtype)
        grown[:n] = buf
        buf = grown
    buf[n] = value
    return buf


@njit(cache=True)
def trace_segments(origin, res, dims, sensor, points, end_hit):
    """Flat indices of voxels crossed by each sensor-to-point segment.

    Returns ``(free, ends)``. ``free`` lists every traversed voxel except
    the sensor's own voxel and, when ``end_hit`` is set, the endpoint voxel,
    which goes to ``ends`` instead. Both may contain repeats.
    """
    box = np.empty(6)
    for a in range(3):
        box[a] = origin[a]
        box[a + 3] = origin[a] + dims[a] * res
    sensor_idx = np.empty(3, np.int64)
    sensor_inside = True
    for a in range(3):
        sensor_idx[a] = int(np.floor((sensor[a] - origin[a]) / res))
        if sensor_idx[a] < 0 or sensor_idx[a] >= dims[a]:
            sensor_inside = False
    free = np.empty(1024, np.int64)
    n_free = 0
    ends = np.empty(max(points.shape[0], 1), np.int64)
    n_ends = 0
    d = np.empty(3)
    end_idx = np.empty(3, np.int64)
    for n in range(points.shape[0]):
        length = 0.0
        for a in range(3):
            d[a] = points[n, a] - sensor[a]
            length += d[a] * d[a]
        length = np.sqrt(length)
        if length == 0.0:
            continue
        for a in range(3):
            d[a] /= length
        end_inside = end_hit
        for a in range(3):
            end_idx[a] = int(np.floor((points[n, a] - origin[a]) / res))
            if end_idx[a] < 0 or end_idx[a] >= dims[a]:
                end_inside = False
        if end_inside:
            ends[n_ends] = (end_idx[0] * dims[1] + end_idx[1]) * dims[2] + end_idx[2]
            n_ends += 1
        ok, t0, t1 = _ray_box(sensor[0], sensor[1], sensor[2], d[0], d[1], d[2], box, 0.0, length)
        if not ok:
            continue
        idx, step, t_next, t_delta = _dda_setup(sensor, d, t0, origin, res, dims)
        first = True
        while True:
            if end_inside and idx[0] == end_idx[0] and idx[1] == end_idx[1] and idx[2] == end_idx[2]:
                break
            is_sensor = first and sensor_inside and idx[0] == sensor_idx[0] and idx[1] == sensor_idx[1] and idx[2] == sensor_idx[2]
            if not is_sensor:
                free = _push(free, n_free, (idx[0] * dims[1] + idx[1]) * dims[2] + idx[2])
                n_free += 1
            first = False
            a = _argmin3(t_next)
            if t_next[a] > t1:
                break
            idx[a] += step[a]
            if idx[a] < 0 or idx[a] >= dims[a]:
                break
            t_next[a] += t_delta[a]
    return free[:n_free], ends[:n_ends]


@njit(cache=True)
def raycast_counts(logodds, observed, origin, res, sensor, dirs, max_range, occ_threshold, roi, use_roi):
    """Per-ray counts of (unknown, traversed) voxels up to the first occupied voxel.

    With ``use_roi`` only voxels inside the boolean ``roi`` grid are counted;
    rays still stop at the first occupied voxel wherever it lies.
    """
    dims = np.array(logodds.shape, dtype=np.int64)
    box = np.empty(6)
    for a in range(3):
        box[a] = origin[a]
        box[a + 3] = origin[a] + dims[a] * res
    n = dirs.shape[0]
    unknown = np.zeros(n, np.int64)
    traversed = np.zeros(n, np.int64)
    d = np.empty(3)
    for r in range(n):
        for a in range(3):
            d[a] = dirs[r, a]
        ok, t0, t1 = _ray_box(sensor[0], sensor[1], sensor[2], d[0], d[1], d[2], box, 0.0, max_range)
        if not ok:
            continue
        idx, step, t_next, t_delta = _dda_setup(sensor, d, t0, origin, res, dims)
        while True:
            seen = observed[idx[0], idx[1], idx[2]]
            if not use_roi or roi[idx[0], idx[1], idx[2]]:
                traversed[r] += 1
                if not seen:
                    unknown[r] += 1
            if seen and logodds[idx[0], idx[1], idx[2]] > occ_threshold:
                break
            a = _argmin3(t_next)
            if t_next[a] > t1:
                break
            idx[a] += step[a]
            if idx[a] < 0 or idx[a] >= dims[a]:
                break
            t_next[a] += t_delta[a]
    return unknown, traversed


@njit(cache=True)
def argmax_axis1(Z):
    """``Z.argmax(axis=1)`` for a C-contiguous (B, P, C) array, first max wins."""
    B, P, C = Z.shape
    out = np.zeros((B, C), dtype=np.int64)
    best = np.empty(C, dtype=Z.dtype)
    for b in range(B):
        best[:] = Z[b, 0]
        idx = out[b]
        for p in range(1, P):
            row = Z[b, p]
            for c in range(C):
                if row[c] > best[c]:
                    best[c] = row[c]
                    idx[c] = p
    return out


@njit(cache=True)
def softmax_rows_backward(A, dA, scale):
    """In-place ``dA <- scale * A * (dA - rowsum(dA * A))``."""
    B, R, C = A.shape
    for b in range(B):
        for r in range(R):
            a = A[b, r]
            d = dA[b, r]
            s = 0.0
            for c in range(C):
                s += a[c] * d[c]
            for c in range(C):
                d[c] = scale * a[c] * (d[c] - s)
    return dA
