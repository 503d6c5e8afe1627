"""Binary tensor archive used for checkpoints.

Layout, all little-endian:

    magic  b"MSRA"
    u32    format version (1)
    u32    entry count
    entry: u16 name length, UTF-8 name bytes,
           u8 rank, u32 extents[rank],
           f32 payload[product(extents)]

Entries are written in sorted name order, so saving what was loaded
reproduces the file byte for byte.
"""

import struct

import numpy as np

from .errors import DataError

MAGIC = b"MSRA"
VERSION = 1


def save_archive(path, arrays):
    """Write a name -> array mapping; values are stored as float32."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(arrays)))
        for name in sorted(arrays):
            # asarray first: ascontiguousarray would promote rank 0 to rank 1
            arr = np.asarray(arrays[name], dtype="<f4")
            if arr.ndim:
                arr = np.ascontiguousarray(arr)
            nb = name.encode("utf-8")
            if len(nb) > 0xFFFF:
                raise DataError(f"entry name too long: {name[:32]}...")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            if arr.ndim:
                f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_archive(path):
    """Read an archive back as a name -> float32 array dict."""
    with open(path, "rb") as f:
        data = f.read()
    view = memoryview(data)
    if len(view) < 12 or bytes(view[:4]) != MAGIC:
        raise DataError(f"{path} is not a tensor archive (bad magic)")
    version, count = struct.unpack_from("<II", view, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported archive version {version}")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos:pos + name_len]).decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", view, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", view, pos) if rank else ()
            pos += 4 * rank
            n = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(view, dtype="<f4", count=n, offset=pos)
            pos += 4 * n
            out[name] = arr.reshape(shape).copy()
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated or corrupt archive") from exc
    if pos != len(view):
        raise DataError(f"{path}: {len(view) - pos} trailing bytes")
    return out
