"""Bit-exact binary PGM (P5) reading and writing, dependency-free."""

from __future__ import annotations

import numpy as np


class PgmError(ValueError):
    """Malformed PGM content."""


def write_pgm(path, image: np.ndarray) -> None:
    """Write a 2-D uint8 array as binary PGM with maxval 255."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise PgmError(f"PGM wants a 2-D image, got shape {img.shape}")
    if img.dtype != np.uint8:
        if img.min() < 0 or img.max() > 255:
            raise PgmError("pixel values outside [0,255]")
        img = img.astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (P5, maxval <= 255) into a uint8 (h, w) array."""
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(data):
            ch = data[pos : pos + 1]
            if ch == b"#":  # comment to end of line
                while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PgmError(f"truncated PGM header in {path}")
        return data[start:pos]

    magic = token()
    if magic != b"P5":
        raise PgmError(f"not a binary PGM (P5): magic {magic!r} in {path}")
    try:
        w, h, maxval = int(token()), int(token()), int(token())
    except ValueError as exc:
        raise PgmError(f"bad PGM header field in {path}: {exc}") from None
    if w < 1 or h < 1:
        raise PgmError(f"bad PGM dimensions {w}x{h} in {path}")
    if not 0 < maxval <= 255:
        raise PgmError(f"unsupported PGM maxval {maxval} in {path}")
    pos += 1  # single whitespace byte after maxval
    raster = data[pos : pos + w * h]
    if len(raster) != w * h:
        raise PgmError(f"truncated PGM raster in {path}: want {w * h} bytes, have {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


def read_pgm_size(path) -> tuple[int, int]:
    """Header-only read; returns (width, height)."""
    img = read_pgm(path)
    return img.shape[1], img.shape[0]
