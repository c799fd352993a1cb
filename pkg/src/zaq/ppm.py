"""Binary PPM (P6) export of generated sample grids."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import ShapeError


def to_uint8(images: np.ndarray) -> np.ndarray:
    """Map [-1, 1] linearly to [0, 255] with rounding and clamping."""
    scaled = np.rint((images + 1.0) * 127.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def write_ppm_grid(images: np.ndarray, path, cols: int = 8) -> Path:
    """Tile (N, 3, H, W) images row-major into a grid and write a binary PPM."""
    if images.ndim != 4 or images.shape[1] != 3:
        raise ShapeError(f"expected (N, 3, H, W) images, got {images.shape}")
    n, _, h, w = images.shape
    rows = math.ceil(n / cols)
    canvas = np.zeros((rows * h, cols * w, 3), dtype=np.uint8)
    pixels = to_uint8(images).transpose(0, 2, 3, 1)  # N, H, W, C
    for i in range(n):
        r, c = divmod(i, cols)
        canvas[r * h:(r + 1) * h, c * w:(c + 1) * w] = pixels[i]
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{cols * w} {rows * h}\n255\n".encode("ascii"))
        fh.write(canvas.tobytes())
    return path


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM back as (H, W, 3) uint8 (for tests)."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ShapeError(f"{path}: not a binary PPM")
    w, h = (int(v) for v in parts[1].split())
    data = parts[3]
    return np.frombuffer(data[:w * h * 3], dtype=np.uint8).reshape(h, w, 3)
