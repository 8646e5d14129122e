"""On-disk formats: VOX1 voxel dumps, FLO1 flow fields, 8-bit PGM frames, metrics CSV."""
from __future__ import annotations

import csv
import math
import re
import struct
from pathlib import Path

import numpy as np

VOX_MAGIC = b"VOX1"
FLO_MAGIC = b"FLO1"


class FormatError(ValueError):
    pass


def write_voxel(path, values: np.ndarray) -> None:
    b, h, w = values.shape
    Path(path).write_bytes(VOX_MAGIC + struct.pack("<III", b, h, w) + np.asarray(values, dtype="<f4").tobytes())


def read_voxel(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != VOX_MAGIC:
        raise FormatError(f"{path}: not a VOX1 file")
    b, h, w = struct.unpack_from("<III", buf, 4)
    return np.frombuffer(buf, dtype="<f4", count=b * h * w, offset=16).reshape(b, h, w).copy()


def write_flow(path, flow: np.ndarray) -> None:
    _, h, w = flow.shape
    pairs = np.stack([flow[0], flow[1]], axis=-1).astype("<f4")
    Path(path).write_bytes(FLO_MAGIC + struct.pack("<II", h, w) + pairs.tobytes())


def read_flow(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != FLO_MAGIC:
        raise FormatError(f"{path}: not a FLO1 file")
    h, w = struct.unpack_from("<II", buf, 4)
    pairs = np.frombuffer(buf, dtype="<f4", count=2 * h * w, offset=12).reshape(h, w, 2)
    return np.ascontiguousarray(pairs.transpose(2, 0, 1)).astype(np.float64)


def quantize(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round half-up to 8 bits."""
    return np.floor(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path, img: np.ndarray) -> None:
    q = quantize(np.asarray(img).reshape(np.shape(img)[-2:]))
    h, w = q.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + q.tobytes())


_PGM_HEADER = re.compile(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def read_pgm(path) -> np.ndarray:
    """Read a P5 PGM as ``[1, H, W]`` float64 in [0, 1]."""
    buf = Path(path).read_bytes()
    m = _PGM_HEADER.match(buf)
    if not m:
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval > 255:
        raise FormatError(f"{path}: 16-bit PGM not supported")
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=m.end())
    return (data.reshape(1, h, w) / float(maxval)).astype(np.float64)


METRICS_HEADER = ("frame_index", "psnr_db", "ssim")


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf"
    return f"{v:.6f}"


def write_metrics_csv(path, rows) -> tuple[float, float]:
    """Write ``frame_index,psnr_db,ssim`` rows plus a ``mean`` summary row; returns the means."""
    rows = list(rows)
    psnrs = [r[1] for r in rows]
    ssims = [r[2] for r in rows]
    mean_psnr = float(np.mean(psnrs)) if rows else float("nan")
    mean_ssim = float(np.mean(ssims)) if rows else float("nan")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(METRICS_HEADER)
        for i, p, s in rows:
            wr.writerow([i, _fmt(p), _fmt(s)])
        wr.writerow(["mean", _fmt(mean_psnr) if rows else "nan", _fmt(mean_ssim) if rows else "nan"])
    return mean_psnr, mean_ssim
