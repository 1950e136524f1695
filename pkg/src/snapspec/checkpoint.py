"""Binary weight checkpoints.

Layout (all integers little-endian):
    magic   b"ERP1"
    u32     entry count
    per entry:
        u16     name length, then that many UTF-8 bytes
        u8      rank
        u32[r]  dims
        f32[.]  values, C order

Values are stored float32 regardless of the in-memory dtype.
"""

import struct

import numpy as np

MAGIC = b"ERP1"


def save_checkpoint(path, named_arrays):
    """Write named arrays (a dict or (name, array) iterable) to `path`."""
    items = list(named_arrays.items()) if hasattr(named_arrays, "items") else list(named_arrays)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(items)))
        for name, arr in items:
            # not ascontiguousarray: that would promote rank 0 to rank 1,
            # and tobytes() already serializes in C order
            arr = np.asarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            if len(nb) > 0xFFFF:
                raise ValueError(f"parameter name too long: {name!r}")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            if arr.ndim > 0xFF:
                raise ValueError("rank too large")
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Read a checkpoint into an ordered {name: float32 ndarray} dict."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise ValueError(f"{path}: truncated checkpoint")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = 1
        for s in shape:
            size *= s
        data = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).copy()
        if name in out:
            raise ValueError(f"{path}: duplicate parameter name {name!r}")
        out[name] = data
    if pos != len(blob):
        raise ValueError(f"{path}: trailing bytes after last entry")
    return out
