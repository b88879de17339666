"""Flat binary tensor format and checkpoint bundles.

One record is:

    magic   4 bytes  b"MMT1"
    rank    u32 little-endian
    dims    rank x u32 little-endian
    data    prod(dims) x f32 little-endian, C order

A checkpoint file is a sequence of records; a JSON sidecar at
"<file>.json" lists the tensor names in record order plus whatever
metadata the caller wants to pin (config snapshot, best epoch, ...).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

from .errors import DataError
from .tensor import Tensor

MAGIC = b"MMT1"


def write_tensor(fh: BinaryIO, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float32, order="C")
    fh.write(MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.astype("<f4", copy=False).tobytes(order="C"))


def read_tensor(fh: BinaryIO) -> np.ndarray:
    head = fh.read(4)
    if head != MAGIC:
        raise DataError(f"bad tensor record magic: {head!r}")
    (rank,) = struct.unpack("<I", fh.read(4))
    if rank > 8:
        raise DataError(f"implausible tensor rank {rank}")
    dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise DataError("truncated tensor record")
    return np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)


def save_tensors(path: str | Path, tensors: Mapping[str, Tensor | np.ndarray],
                 metadata: dict | None = None) -> None:
    """Write named tensors as consecutive records, names in a JSON sidecar.

    Iteration order of `tensors` fixes the record order; the sidecar's
    "tensors" list makes the file self-describing.
    """
    path = Path(path)
    names = list(tensors)
    with open(path, "wb") as fh:
        for name in names:
            t = tensors[name]
            write_tensor(fh, t.data if isinstance(t, Tensor) else np.asarray(t))
    sidecar = {"tensors": names}
    if metadata:
        sidecar.update(metadata)
    with open(path.with_name(path.name + ".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Inverse of save_tensors: (name -> array, sidecar metadata)."""
    path = Path(path)
    sidecar_path = path.with_name(path.name + ".json")
    if not sidecar_path.exists():
        raise DataError(f"missing sidecar {sidecar_path}")
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    names = sidecar.get("tensors")
    if not isinstance(names, list):
        raise DataError(f"sidecar {sidecar_path} has no tensor name list")
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        for name in names:
            out[name] = read_tensor(fh)
        if fh.read(1):
            raise DataError(f"{path} has trailing bytes beyond the named records")
    return out, sidecar
