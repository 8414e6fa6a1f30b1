"""Binary tensor interchange format.

Record layout, little-endian throughout:

    magic "RTNS" | u8 version (=1) | u8 rank | rank * u32 dims | f64 payload

Multiple records may be concatenated in one file (parameter sets do this).
Round-trips are bit-exact.
"""

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"RTNS"
VERSION = 1


def write_tensor(fh, array):
    # asarray, not ascontiguousarray: the latter promotes rank-0 to rank-1
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim > 255:
        raise FormatError(f"rank {arr.ndim} exceeds format limit")
    fh.write(MAGIC)
    fh.write(struct.pack("<BB", VERSION, arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(arr.astype("<f8").tobytes())


def read_tensor(fh):
    head = fh.read(6)
    if len(head) < 6:
        raise FormatError("truncated header")
    if head[:4] != MAGIC:
        raise FormatError(f"bad magic bytes {head[:4]!r}")
    version, rank = struct.unpack("<BB", head[4:6])
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    dims = []
    for _ in range(rank):
        raw = fh.read(4)
        if len(raw) < 4:
            raise FormatError("truncated dims")
        dims.append(struct.unpack("<I", raw)[0])
    count = 1
    for d in dims:
        count *= d
    payload = fh.read(8 * count)
    if len(payload) < 8 * count:
        raise FormatError("truncated payload")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)


def save_tensor(path, array):
    with open(path, "wb") as fh:
        write_tensor(fh, array)


def load_tensor(path):
    with open(path, "rb") as fh:
        return read_tensor(fh)
