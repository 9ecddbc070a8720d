"""16-bit binary PGM (P5, maxval 65535) reading and writing."""

from __future__ import annotations

from pathlib import Path

import numpy as np

MAXVAL = 65535


def quantize(img: np.ndarray) -> np.ndarray:
    """Snap intensities in [0, 1] onto the 16-bit grid used on disk."""
    return np.rint(np.clip(img, 0.0, 1.0) * MAXVAL) / MAXVAL


def encode(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM images are 2-D, got shape {img.shape}")
    h, w = img.shape
    data = np.rint(np.clip(img, 0.0, 1.0) * MAXVAL).astype(">u2")
    return f"P5\n{w} {h}\n{MAXVAL}\n".encode("ascii") + data.tobytes()


def decode(raw: bytes) -> np.ndarray:
    # header: magic, width, height, maxval separated by whitespace, comments allowed
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM (P5) file")
    w, h, maxval = (int(f) for f in fields[1:])
    pos += 1
    dtype = ">u2" if maxval > 255 else "u1"
    count = w * h
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    return data.reshape(h, w).astype(np.float64) / maxval


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode(img))


def read_pgm(path: str | Path) -> np.ndarray:
    return decode(Path(path).read_bytes())
