"""Reader/writer for the FTA1 binary tensor format.

Layout (all little-endian)::

    0-3   magic b"FTA1"
    4     dtype code: 1 = float32, 2 = float64
    5     ndim
    6-7   reserved, zero
    8...  ndim unsigned 64-bit dims
    ...   row-major payload

Arrays are always returned as float64.
"""
import struct

import numpy as np

MAGIC = b"FTA1"
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}


class FormatError(ValueError):
    pass


def dumps(array, dtype="float64"):
    a = np.asarray(array)
    dt = np.dtype(dtype).newbyteorder("<")
    if dt not in CODES:
        raise FormatError(f"unsupported dtype {dtype}")
    header = MAGIC + struct.pack("<BBxx", CODES[dt], a.ndim)
    header += struct.pack(f"<{a.ndim}Q", *a.shape)
    return header + np.ascontiguousarray(a, dtype=dt).tobytes()


def loads(buf):
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise FormatError("bad magic, not an FTA1 tensor")
    code, ndim, reserved = struct.unpack_from("<BBH", buf, 4)
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    if reserved != 0:
        raise FormatError("reserved header bytes are not zero")
    off = 8 + 8 * ndim
    if len(buf) < off:
        raise FormatError("truncated header")
    shape = struct.unpack_from(f"<{ndim}Q", buf, 8)
    dt = DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    if len(buf) - off != expected:
        raise FormatError(f"payload is {len(buf) - off} bytes, expected {expected} for shape {shape}")
    return np.frombuffer(buf, dtype=dt, offset=off).reshape(shape).astype(np.float64)


def save(path, array, dtype="float64"):
    with open(path, "wb") as fh:
        fh.write(dumps(array, dtype))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
