"""Versioned binary checkpoint container.

Layout: the ASCII magic line, then one record per parameter:
  u32 name length | name bytes (UTF-8) | u32 rank | rank * u32 dims |
  prod(dims) * f32 little-endian values
Values are stored in 32-bit floats; loading returns float64 arrays.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ADPT-CKPT v1\n"


class CheckpointError(ValueError):
    """Malformed checkpoint file; message carries the byte offset."""


def save_checkpoint(path, named_arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    chunks = [MAGIC]
    for name, arr in named_arrays.items():
        data = np.asarray(arr, dtype="<f4")  # tobytes() copies in C order
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    path.write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"bad magic at offset 0 in {path}")
    pos = len(MAGIC)
    out: dict[str, np.ndarray] = {}

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"truncated {what} at offset {pos} in {path}")
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    while pos < len(raw):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        count = int(np.prod(dims)) if rank > 0 else 1
        values = np.frombuffer(take(4 * count, f"values of {name!r}"), dtype="<f4")
        arr = values.astype(np.float64).reshape(dims)
        if not np.isfinite(arr).all():
            raise CheckpointError(f"non-finite values in record {name!r}")
        if name in out:
            raise CheckpointError(f"duplicate record {name!r}")
        out[name] = arr
    return out


def filter_prefix(state: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    """Sub-dict of records under `prefix`, with the prefix stripped."""
    hits = {k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)}
    if not hits:
        raise KeyError(f"checkpoint has no records under prefix {prefix!r}")
    return hits
