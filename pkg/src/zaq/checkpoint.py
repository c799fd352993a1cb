"""Bit-exact binary container for named float32 tensors.

Layout (little-endian, no padding, no compression):
    magic "ZAQCKPT1" (8 bytes) | version u32 = 1 | entry count u32 |
    per entry: name length u16, name UTF-8 bytes, rank u8, dims u32 x rank,
    payload float32 values in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError, ModelError

MAGIC = b"ZAQCKPT1"
VERSION = 1


def save_tensors(path, entries: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(entries))
    for name, arr in entries.items():
        data = np.ascontiguousarray(arr, dtype=np.float32)
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", data.ndim)
        blob += struct.pack(f"<{data.ndim}I", *data.shape)
        blob += data.tobytes()
    path.write_bytes(bytes(blob))


def _take(buf: bytes, offset: int, count: int, path) -> tuple[bytes, int]:
    if offset + count > len(buf):
        raise IOError(f"{path}: truncated container (needed {count} bytes at offset {offset})")
    return buf[offset:offset + count], offset + count


def load_tensors(path) -> dict[str, np.ndarray]:
    path = Path(path)
    buf = path.read_bytes()
    chunk, off = _take(buf, 0, len(MAGIC), path)
    if chunk != MAGIC:
        raise FormatError(f"{path}: bad magic {chunk!r}, expected {MAGIC!r}")
    chunk, off = _take(buf, off, 8, path)
    version, count = struct.unpack("<II", chunk)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        chunk, off = _take(buf, off, 2, path)
        (name_len,) = struct.unpack("<H", chunk)
        chunk, off = _take(buf, off, name_len, path)
        name = chunk.decode("utf-8")
        chunk, off = _take(buf, off, 1, path)
        (rank,) = struct.unpack("<B", chunk)
        chunk, off = _take(buf, off, 4 * rank, path)
        dims = struct.unpack(f"<{rank}I", chunk)
        n = int(np.prod(dims)) if rank else 1
        chunk, off = _take(buf, off, 4 * n, path)
        entries[name] = np.frombuffer(chunk, dtype="<f4").reshape(dims).copy()
    return entries


# ---------------------------------------------------------------------------
# model state


def model_state(model) -> dict[str, np.ndarray]:
    """Named parameters and buffers of a ModelGraph, in layer order."""
    state: dict[str, np.ndarray] = {}
    for name, t in model.named_parameters():
        state[name] = t.data
    for name, b in model.named_buffers():
        state[name] = b
    return state


def load_state(model, entries: Mapping[str, np.ndarray]) -> None:
    """Fill a model's parameters and buffers from ``entries``, validating
    shapes against the architecture. Extra entry names (e.g. ``meta.*``) are
    ignored; the first missing or mismatched tensor raises."""
    for name, t in model.named_parameters():
        if name not in entries:
            raise ModelError(f"checkpoint is missing tensor {name!r}")
        val = entries[name]
        if tuple(val.shape) != t.shape:
            raise ModelError(
                f"tensor {name!r} has shape {tuple(val.shape)}, model expects {t.shape}")
        t.data = np.array(val, dtype=t.dtype)
    buffer_index = {}
    for i, layer in enumerate(model.layers):
        for bname, _ in layer.named_buffers():
            buffer_index[f"layers.{i}.{bname}"] = (layer, bname)
    for name, (layer, bname) in buffer_index.items():
        if name not in entries:
            raise ModelError(f"checkpoint is missing buffer {name!r}")
        current = dict(layer.named_buffers())[bname]
        val = entries[name]
        if tuple(val.shape) != current.shape:
            raise ModelError(
                f"buffer {name!r} has shape {tuple(val.shape)}, model expects {current.shape}")
        layer.load_buffer(bname, np.array(val, dtype=np.float32))


def save_model(path, model, meta: Mapping[str, float] | None = None) -> None:
    """Model state plus scalar ``meta.<key>`` entries (stored as one-element
    tensors) describing how to rebuild the architecture."""
    entries = dict(model_state(model))
    for key, value in (meta or {}).items():
        entries[f"meta.{key}"] = np.array([value], dtype=np.float32)
    save_tensors(path, entries)


def read_meta(entries: Mapping[str, np.ndarray]) -> dict[str, float]:
    return {name[len("meta."):]: float(arr.reshape(-1)[0])
            for name, arr in entries.items() if name.startswith("meta.")}
