"""Binary ParamSet checkpoints.

Each record is ``uint32 name_length | name (utf-8) | uint32 rank | uint64 dims[rank] |
float64 values`` with every integer and float little-endian. ``write_params``
also drops a ``.txt`` sidecar listing names and shapes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .params import ParamSet


def encode_params(params: ParamSet) -> bytes:
    chunks = []
    for name, value in params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", value.ndim) + struct.pack(f"<{value.ndim}Q", *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return b"".join(chunks)


def decode_params(raw: bytes) -> ParamSet:
    entries = []
    pos = 0
    while pos < len(raw):
        (n,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}Q", raw, pos)
        pos += 8 * rank
        count = int(np.prod(dims)) if rank else 1
        value = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(dims)
        pos += 8 * count
        entries.append((name, value.astype(np.float64)))
    return ParamSet(entries)


def sidecar_text(params: ParamSet) -> str:
    return "".join(f"{name}\t{'x'.join(map(str, v.shape)) or 'scalar'}\n" for name, v in params.items())


def write_params(path: str | Path, params: ParamSet) -> None:
    path = Path(path)
    path.write_bytes(encode_params(params))
    path.with_suffix(path.suffix + ".txt").write_text(sidecar_text(params))


def read_params(path: str | Path) -> ParamSet:
    return decode_params(Path(path).read_bytes())
