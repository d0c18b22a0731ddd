"""Binary network checkpoints.

Layout (all integers little-endian)::

    offset  size  content
    0       8     magic b"HYDRNET1"
    8       4     uint32 header length L
    12      L     UTF-8 JSON header (sorted keys)
    12+L    ...   float64 parameter blobs, little-endian, C order,
                  concatenated in the order of header["tensors"]

The header holds ``input_shape``, ``metadata_width``, ``layers`` (the layer
spec table, one object per layer), ``tensors`` (``[layer_index, name, shape]``
triples) and ``extra``, a free-form JSON object used for config hashes,
metadata means and similar provenance.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ._io import atomic_write_bytes
from .errors import DataError
from .micronet import LayerSpec, Network

MAGIC = b"HYDRNET1"


def encode_network(net, extra=None):
    tensors = []
    blobs = []
    for i, p in enumerate(net.params):
        for name in sorted(p):
            arr = p[name]
            tensors.append([i, name, list(arr.shape)])
            blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header = {
        "input_shape": list(net.input_shape),
        "metadata_width": net.metadata_width,
        "layers": [s.to_dict() for s in net.layers],
        "tensors": tensors,
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(hbytes)) + hbytes + b"".join(blobs)


def decode_network(data):
    if data[:8] != MAGIC:
        raise DataError("not a network checkpoint (bad magic bytes)")
    if len(data) < 12:
        raise DataError("truncated checkpoint header")
    (hlen,) = struct.unpack("<I", data[8:12])
    try:
        header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    except ValueError as exc:
        raise DataError(f"corrupt checkpoint header: {exc}") from None
    layers = [LayerSpec.from_dict(d) for d in header["layers"]]
    params = [{} for _ in layers]
    offset = 12 + hlen
    for i, name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise DataError("truncated checkpoint payload")
        params[i][name] = np.frombuffer(data[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(data):
        raise DataError("trailing bytes after checkpoint payload")
    net = Network(tuple(header["input_shape"]), layers, params, header["metadata_width"])
    return net, header.get("extra", {})


def save_network(net, path, extra=None):
    atomic_write_bytes(path, encode_network(net, extra))


def load_network(path):
    """Returns ``(network, extra)``."""
    return decode_network(Path(path).read_bytes())
