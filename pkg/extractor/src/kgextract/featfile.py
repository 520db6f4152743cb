"""Writer for the engine's binary feature-file format.

Little-endian: magic ``DSOMFEAT``, u32 version=1, u8 modality tag (0=visual,
1=textual), u64 entity count, u64 dim, presence bitmap of ceil(n/8) bytes
(bit i = entity i present, LSB-first), then n*d float32 values row-major.
Missing entities must be all-zero rows with a cleared presence bit.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DSOMFEAT"
VERSION = 1
MODALITY_TAGS = {"visual": 0, "textual": 1}


def write_feature_file(path: str | Path, modality: str, data: np.ndarray, present: np.ndarray) -> None:
    if modality not in MODALITY_TAGS:
        raise ValueError(f"unknown modality {modality!r}")
    data = np.ascontiguousarray(data, dtype="<f4")
    present = np.asarray(present, dtype=bool)
    if data.ndim != 2:
        raise ValueError(f"data must be 2-d, got shape {data.shape}")
    if present.shape != (data.shape[0],):
        raise ValueError("presence mask length must equal the number of rows")
    if not np.isfinite(data).all():
        raise ValueError("feature rows must be finite")
    if np.any(data[~present]):
        raise ValueError("absent entities must have all-zero rows")
    bitmap = np.packbits(present.astype(np.uint8), bitorder="little")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IB", VERSION, MODALITY_TAGS[modality]))
        f.write(struct.pack("<QQ", data.shape[0], data.shape[1]))
        f.write(bitmap.tobytes())
        f.write(data.tobytes())
