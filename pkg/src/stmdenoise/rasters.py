"""On-disk formats for single images.

Raster: a 16-byte header (magic ``LDOS``, then little-endian u32 H, u32 W,
u32 reserved) followed by H*W little-endian float32 values, row-major.

Sidecar: UTF-8 text, one ``key = value`` per line, values JSON-encoded.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LDOS"
_HEADER = struct.Struct("<4sIII")


class RasterFormatError(ValueError):
    pass


def write_raster(path, values: np.ndarray) -> None:
    a = np.asarray(values)
    if a.ndim != 2:
        raise ValueError("raster must be 2D")
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, h, w, 0))
        f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_raster(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise RasterFormatError(f"{path}: truncated header")
    magic, h, w, _ = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise RasterFormatError(f"{path}: bad magic {magic!r}")
    body = data[_HEADER.size :]
    if len(body) != 4 * h * w:
        raise RasterFormatError(f"{path}: expected {h}x{w} floats, got {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float32)


def write_sidecar(path, meta: dict) -> None:
    lines = [f"{key} = {json.dumps(meta[key], sort_keys=True)}" for key in sorted(meta)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_sidecar(path) -> dict:
    meta = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise RasterFormatError(f"{path}:{lineno}: expected 'key = value'")
        meta[key.strip()] = json.loads(value)
    return meta


def write_preview(path, values: np.ndarray) -> None:
    """16-bit grayscale PNG of an image with values in [0, 1]."""
    from PIL import Image

    a = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    u16 = np.round(a * 65535.0).astype(np.uint16)
    Image.fromarray(u16).save(path, format="PNG")
