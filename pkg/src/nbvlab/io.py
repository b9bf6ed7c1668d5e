"""Readers and writers for PLY point clouds, OBJ meshes and JSON manifests."""

import json
from pathlib import Path

import numpy as np

from ._validation import check_cloud

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class PLYFormatError(ValueError):
    pass


def write_ply(path, cloud, binary=False):
    """Write ``cloud`` as a PLY ``vertex`` element with ``double`` x y z, so
    coordinates round-trip exactly."""
    cloud = check_cloud(cloud)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        "ply\n"
        f"format {fmt} 1.0\n"
        f"element vertex {len(cloud)}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(cloud.astype("<f8").tobytes())
        else:
            for x, y, z in cloud.tolist():
                fh.write(f"{x!r} {y!r} {z!r}\n".encode("ascii"))


def _parse_ply_header(fh):
    if fh.readline().strip() != b"ply":
        raise PLYFormatError("missing 'ply' magic")
    fmt = None
    elements = []
    while True:
        line = fh.readline()
        if not line:
            raise PLYFormatError("unterminated header")
        tokens = line.decode("ascii").split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "end_header":
            break
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            elements.append({"name": tokens[1], "count": int(tokens[2]), "props": []})
        elif tokens[0] == "property":
            if not elements:
                raise PLYFormatError("property before any element")
            if tokens[1] == "list":
                elements[-1]["props"].append((tokens[4], "list", tokens[2], tokens[3]))
            else:
                elements[-1]["props"].append((tokens[2], tokens[1]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise PLYFormatError(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def read_ply(path):
    """Read the ``x y z`` columns of the ``vertex`` element of a PLY file."""
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh)
        names = [e["name"] for e in elements]
        if "vertex" not in names:
            raise PLYFormatError("no vertex element")
        # only elements preceding 'vertex' need to be skipped
        if names.index("vertex") != 0:
            raise PLYFormatError("vertex must be the first element")
        vertex = elements[0]
        if any(p[1] == "list" for p in vertex["props"]):
            raise PLYFormatError("list properties on vertices are not supported")
        prop_names = [p[0] for p in vertex["props"]]
        for axis in "xyz":
            if axis not in prop_names:
                raise PLYFormatError(f"vertex has no '{axis}' property")
        if fmt == "ascii":
            rows = []
            for _ in range(vertex["count"]):
                rows.append(fh.readline().split())
            table = np.array(rows, dtype=np.float64).reshape(vertex["count"], len(prop_names))
            cols = [table[:, prop_names.index(a)] for a in "xyz"]
        else:
            dtype = np.dtype([(p[0], "<" + _PLY_TYPES[p[1]]) for p in vertex["props"]])
            raw = fh.read(dtype.itemsize * vertex["count"])
            if len(raw) != dtype.itemsize * vertex["count"]:
                raise PLYFormatError("truncated binary payload")
            data = np.frombuffer(raw, dtype=dtype)
            cols = [data[a].astype(np.float64) for a in "xyz"]
    return np.column_stack(cols) if vertex["count"] else np.empty((0, 3))


def write_obj(path, vertices, faces):
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    with open(path, "w") as fh:
        for x, y, z in vertices.tolist():
            fh.write(f"v {x!r} {y!r} {z!r}\n")
        for f in faces + 1:
            fh.write(f"f {f[0]} {f[1]} {f[2]}\n")


def read_obj(path):
    """Read ``v``/``f`` records; polygons are fan-triangulated."""
    vertices, faces = [], []
    with open(path) as fh:
        for line in fh:
            tokens = line.split()
            if not tokens:
                continue
            if tokens[0] == "v":
                vertices.append([float(t) for t in tokens[1:4]])
            elif tokens[0] == "f":
                idx = [int(t.split("/")[0]) for t in tokens[1:]]
                idx = [i - 1 if i > 0 else len(vertices) + i for i in idx]
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return (
        np.array(vertices, dtype=np.float64).reshape(-1, 3),
        np.array(faces, dtype=np.int64).reshape(-1, 3),
    )


def write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
