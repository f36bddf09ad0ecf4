"""Grayscale image helpers and PGM (P5) input/output.

Images are float64 arrays of shape (height, width) with values in [0, 1].
Binary PGM with maxval 255 is the on-disk format of record; writing and
re-reading a file reproduces it byte for byte.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "check_image",
    "is_binary",
    "to_u8",
    "from_u8",
    "write_pgm",
    "read_pgm",
]


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("image must be a 2-D array")
    if img.size == 0:
        raise ValueError("image must be non-empty")
    if not np.isfinite(img).all() or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return img


def is_binary(img: np.ndarray) -> bool:
    return bool(((img == 0.0) | (img == 1.0)).all())


def to_u8(img: np.ndarray) -> np.ndarray:
    return np.rint(check_image(img) * 255.0).astype(np.uint8)


def from_u8(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 255.0


def write_pgm(img: np.ndarray, path) -> None:
    u8 = img if img.dtype == np.uint8 else to_u8(img)
    h, w = u8.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(u8).tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a maxval-255 P5 file back to a float image in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: expected maxval 255, got {maxval}")
    raw = np.frombuffer(data[pos : pos + w * h], dtype=np.uint8)
    if raw.size != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return from_u8(raw.reshape(h, w))
