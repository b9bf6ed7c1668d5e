"""Network checkpoints: length-prefixed JSON header, then raw float64 tensors.

Layout::

    uint64 LE  header length in bytes
    bytes      UTF-8 JSON header
    bytes      for each name in header["order"]: weights, adam m, adam v,
               each little-endian float64 in C order
"""

import json
import struct

import numpy as np

from .params import IGNetworkParams, normalize_arch

FORMAT = "nbvlab-ignet/1"


def save_checkpoint(path, params, hyperparams=None):
    order = params.names
    header = {
        "format": FORMAT,
        "M": params.n_views,
        "step": params.step,
        "dtype": np.dtype(params.dtype).name,
        "arch": {k: list(v) if isinstance(v, tuple) else v for k, v in params.arch.items()},
        "order": order,
        "shapes": {n: list(params.weights[n].shape) for n in order},
        "hyperparams": hyperparams or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in order:
            for store in (params.weights, params.m, params.v):
                fh.write(np.ascontiguousarray(store[n], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Return ``(params, hyperparams)``."""
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n).decode("utf-8"))
        if header.get("format") != FORMAT:
            raise ValueError(f"unknown checkpoint format {header.get('format')!r}")
        dtype = np.dtype(header["dtype"])
        stores = ({}, {}, {})
        for name in header["order"]:
            shape = tuple(header["shapes"][name])
            size = int(np.prod(shape))
            for store in stores:
                raw = fh.read(8 * size)
                if len(raw) != 8 * size:
                    raise ValueError("truncated checkpoint payload")
                store[name] = np.frombuffer(raw, dtype="<f8").astype(dtype).reshape(shape)
    params = IGNetworkParams(normalize_arch(header["arch"]), *stores, step=header["step"])
    return params, header["hyperparams"]
