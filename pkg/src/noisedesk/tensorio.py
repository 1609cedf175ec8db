"""Tiny binary tensor container.

Layout, all little-endian:

    4 bytes   magic ``NVT1``
    u8        element type: 1 = float32, 2 = float64
    u8        rank
    rank*u32  dimensions
    payload   row-major elements

Good enough to hand arrays between the CLI tools without pulling in a
serialization dependency; not meant as an interchange format.
"""

import struct

import numpy as np

from .errors import TensorFormatError

MAGIC = b"NVT1"

_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_FOR_KIND = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def write_tensor(path, array: np.ndarray):
    """Write ``array`` (float32 or float64) to ``path``."""
    array = np.asarray(array)
    dtype = np.dtype(array.dtype)
    if dtype not in _CODE_FOR_KIND:
        raise TensorFormatError(f"unsupported dtype {dtype}; use float32 or float64")
    if array.ndim > 255:
        raise TensorFormatError("rank exceeds 255")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", _CODE_FOR_KIND[dtype], array.ndim))
        fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
        fh.write(np.ascontiguousarray(array, dtype=dtype.newbyteorder("<")).tobytes())


def read_tensor(path) -> np.ndarray:
    """Read a tensor written by :func:`write_tensor`."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 6:
        raise TensorFormatError("file too short for a tensor header")
    if data[:4] != MAGIC:
        raise TensorFormatError(f"bad magic {data[:4]!r}; expected {MAGIC!r}")
    code, ndim = struct.unpack_from("<BB", data, 4)
    if code not in _DTYPE_CODES:
        raise TensorFormatError(f"unknown element type code {code}")
    header_end = 6 + 4 * ndim
    if len(data) < header_end:
        raise TensorFormatError("file truncated inside the dimension list")
    shape = struct.unpack_from(f"<{ndim}I", data, 6)
    dtype = _DTYPE_CODES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = data[header_end:]
    if len(payload) != expected:
        raise TensorFormatError(
            f"payload is {len(payload)} bytes, shape {shape} needs {expected}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
