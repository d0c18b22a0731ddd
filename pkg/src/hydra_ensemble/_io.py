"""File helpers: atomic writes and the raw float tensor container."""
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import DataError

TENSOR_MAGIC = b"HYDRTNS1"


def atomic_write_bytes(path, data):
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_tensor(arr):
    """Raw tensor container.

    ``b"HYDRTNS1"``, uint32 rank, rank x uint32 dims, then float32
    little-endian values in C order.
    """
    arr = np.ascontiguousarray(arr, dtype="<f4")
    return TENSOR_MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape) + arr.tobytes()


def decode_tensor(data):
    if data[:8] != TENSOR_MAGIC:
        raise DataError("not a raw tensor file (bad magic bytes)")
    (ndim,) = struct.unpack("<I", data[8:12])
    dims = struct.unpack(f"<{ndim}I", data[12 : 12 + 4 * ndim])
    payload = data[12 + 4 * ndim :]
    if len(payload) != 4 * int(np.prod(dims)):
        raise DataError(f"raw tensor payload has {len(payload)} bytes, expected {4 * int(np.prod(dims))}")
    return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)


def save_tensor(path, arr):
    atomic_write_bytes(path, encode_tensor(arr))


def load_tensor(path):
    return decode_tensor(Path(path).read_bytes())
