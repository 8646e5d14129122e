"""``WTS1`` weight files.

Layout (little-endian): magic ``WTS1``, u32 entry count, then per entry
u16 name length, UTF-8 name, u8 rank, u32 dims, f32 data. An optional
trailer ``CFG1`` + u32 length + UTF-8 ``key=value`` lines carries the model
configuration.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"WTS1"
CFG_MAGIC = b"CFG1"


class FormatError(ValueError):
    pass


def dumps(arrays: dict, manifest: dict | None = None) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    if manifest:
        text = "".join(f"{k}={v}\n" for k, v in manifest.items()).encode("utf-8")
        parts += [CFG_MAGIC, struct.pack("<I", len(text)), text]
    return b"".join(parts)


def loads(buf: bytes) -> tuple[dict, dict]:
    if buf[:4] != MAGIC:
        raise FormatError("not a WTS1 weights file")
    (count,) = struct.unpack_from("<I", buf, 4)
    off = 8
    arrays = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off : off + n].decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<B", buf, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arrays[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(dims).copy()
            off += 4 * size
    except (struct.error, ValueError) as exc:
        raise FormatError(f"truncated weights file at byte {off}") from exc
    manifest = {}
    if buf[off : off + 4] == CFG_MAGIC:
        (n,) = struct.unpack_from("<I", buf, off + 4)
        text = buf[off + 8 : off + 8 + n].decode("utf-8")
        for line in text.splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                manifest[k] = v
    return arrays, manifest


def save(path, arrays: dict, manifest: dict | None = None) -> None:
    Path(path).write_bytes(dumps(arrays, manifest))


def load(path) -> tuple[dict, dict]:
    return loads(Path(path).read_bytes())
