"""Minimal binary netpbm reader/writer (P5 grayscale, P6 RGB, maxval 255).

Writing is canonical and byte-deterministic: a fixed single-line header per
field, no comments. Reading accepts any conforming header (whitespace and
``#`` comments between tokens).
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError

_MAXVAL = 255


def write_p5(path: str | Path, gray: np.ndarray) -> None:
    """Write a (h, w) uint8 array as binary PGM."""
    arr = np.ascontiguousarray(gray, dtype=np.uint8)
    if arr.ndim != 2:
        raise FormatError(f"P5 payload must be 2-D, got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (w, h, _MAXVAL))
        fh.write(arr.tobytes())


def write_p6(path: str | Path, rgb: np.ndarray) -> None:
    """Write a (h, w, 3) uint8 array as binary PPM."""
    arr = np.ascontiguousarray(rgb, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise FormatError(f"P6 payload must be (h, w, 3), got shape {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n%d\n" % (w, h, _MAXVAL))
        fh.write(arr.tobytes())


def read_p5(path: str | Path) -> np.ndarray:
    """Read a binary PGM file into a (h, w) uint8 array."""
    w, h, payload = _read_binary(path, b"P5", channels=1)
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()


def read_p6(path: str | Path) -> np.ndarray:
    """Read a binary PPM file into a (h, w, 3) uint8 array."""
    w, h, payload = _read_binary(path, b"P6", channels=3)
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()


def _read_binary(path: str | Path, magic: bytes, channels: int) -> tuple[int, int, bytes]:
    data = Path(path).read_bytes()
    if not data.startswith(magic):
        raise FormatError(f"{path}: expected {magic.decode()} magic, got {data[:2]!r}")
    pos = len(magic)
    fields = []
    for _ in range(3):
        value, pos = _next_int(data, pos, path)
        fields.append(value)
    w, h, maxval = fields
    if w < 1 or h < 1:
        raise FormatError(f"{path}: invalid dimensions {w}x{h}")
    if maxval != _MAXVAL:
        raise FormatError(f"{path}: unsupported maxval {maxval}, expected {_MAXVAL}")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    expected = w * h * channels
    payload = data[pos:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: raster payload is {len(payload)} bytes, expected {expected}"
        )
    return w, h, payload


def _next_int(data: bytes, pos: int, path: str | Path) -> tuple[int, int]:
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos : pos + 1].isdigit():
        pos += 1
    if start == pos:
        raise FormatError(f"{path}: malformed netpbm header")
    return int(data[start:pos]), pos
