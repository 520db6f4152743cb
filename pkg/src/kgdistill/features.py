"""Fixed per-entity feature matrices: binary file IO, synthetic generation, masking.

File layout (all little-endian): magic ``DSOMFEAT``, u32 version=1, u8 modality
tag (0=visual, 1=textual), u64 num_entities, u64 dim, presence bitmap of
ceil(n/8) bytes (bit i = entity i present, LSB-first), then n*d float32 values
row-major.  Missing entities have all-zero rows and a cleared presence bit.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kg import Dataset

MAGIC = b"DSOMFEAT"
VERSION = 1
MODALITY_TAGS = {"visual": 0, "textual": 1}
TAG_MODALITIES = {v: k for k, v in MODALITY_TAGS.items()}


class FeatureFileError(ValueError):
    """Base class for feature-file format violations."""


class BadMagicError(FeatureFileError):
    pass


class VersionMismatchError(FeatureFileError):
    pass


class TruncatedFileError(FeatureFileError):
    pass


class NonFiniteValueError(FeatureFileError):
    pass


@dataclass
class FeatureMatrix:
    """Row i holds the (file-precision, float32) feature vector of entity id i."""

    modality: str
    data: np.ndarray  # (num_entities, dim) float32
    mask: np.ndarray  # (num_entities,) bool, False = missing

    @property
    def num_entities(self) -> int:
        return int(self.data.shape[0])

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])

    def validate(self) -> None:
        if self.modality not in MODALITY_TAGS:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.data.ndim != 2:
            raise ValueError(f"data must be 2-d, got shape {self.data.shape}")
        if self.mask.shape != (self.data.shape[0],):
            raise ValueError("mask length must equal the number of rows")
        if not np.isfinite(self.data).all():
            raise NonFiniteValueError(f"{self.modality} features contain non-finite values")
        missing = ~self.mask
        if missing.any() and np.any(self.data[missing]):
            raise ValueError("missing rows must be all-zero")


def write_feature_file(matrix: FeatureMatrix, path: str | Path) -> None:
    matrix.validate()
    data = np.ascontiguousarray(matrix.data, dtype="<f4")
    bitmap = np.packbits(matrix.mask.astype(np.uint8), bitorder="little")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IB", VERSION, MODALITY_TAGS[matrix.modality]))
        f.write(struct.pack("<QQ", matrix.num_entities, matrix.dim))
        f.write(bitmap.tobytes())
        f.write(data.tobytes())


def read_feature_file(path: str | Path) -> FeatureMatrix:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC):
        raise TruncatedFileError(f"{path}: shorter than the magic header")
    if blob[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {blob[:len(MAGIC)]!r}")
    header = struct.Struct("<IBQQ")
    off = len(MAGIC)
    if len(blob) < off + header.size:
        raise TruncatedFileError(f"{path}: truncated header")
    version, tag, n, d = header.unpack_from(blob, off)
    if version != VERSION:
        raise VersionMismatchError(f"{path}: version {version}, expected {VERSION}")
    if tag not in TAG_MODALITIES:
        raise FeatureFileError(f"{path}: unknown modality tag {tag}")
    off += header.size
    bitmap_len = (n + 7) // 8
    payload_len = n * d * 4
    if len(blob) < off + bitmap_len + payload_len:
        raise TruncatedFileError(
            f"{path}: expected {off + bitmap_len + payload_len} bytes, got {len(blob)}"
        )
    bitmap = np.frombuffer(blob, dtype=np.uint8, count=bitmap_len, offset=off)
    mask = np.unpackbits(bitmap, count=n, bitorder="little").astype(bool) if n else np.zeros(0, bool)
    off += bitmap_len
    data = np.frombuffer(blob, dtype="<f4", count=n * d, offset=off).reshape(n, d).copy()
    if not np.isfinite(data).all():
        raise NonFiniteValueError(f"{path}: payload contains non-finite values")
    data[~mask] = 0.0
    return FeatureMatrix(modality=TAG_MODALITIES[tag], data=data, mask=mask.copy())


def apply_missing_mask(matrix: FeatureMatrix, missing_rate: float, seed: int) -> FeatureMatrix:
    """Zero a uniform random floor(rate*n) subset of rows and clear their mask bits."""
    if not 0.0 <= missing_rate <= 1.0:
        raise ValueError(f"missing_rate must be in [0, 1], got {missing_rate}")
    n = matrix.num_entities
    k = int(np.floor(missing_rate * n))
    rng = np.random.default_rng(seed)
    drop = rng.choice(n, size=k, replace=False) if k else np.zeros(0, dtype=int)
    data = matrix.data.copy()
    mask = matrix.mask.copy()
    data[drop] = 0.0
    mask[drop] = False
    return FeatureMatrix(modality=matrix.modality, data=data, mask=mask)


def _relation_profiles(dataset: Dataset) -> np.ndarray:
    """Per-entity participation counts over augmented relations, L2-normalized rows.

    In a generated clustered KG the relations an entity participates in identify
    its cluster, so a linear map of these profiles carries the cluster signal.
    Used when no explicit latent structure is available.
    """
    n = dataset.num_entities
    width = 2 * dataset.num_relations
    profile = np.zeros((n, width))
    for h, r, _t in dataset.train_aug:
        profile[h, r] += 1.0
    norms = np.linalg.norm(profile, axis=1, keepdims=True)
    np.maximum(norms, 1.0, out=norms)
    return profile / norms


_HARMONICS = 4


def _structure_basis(dataset: Dataset, structure, system: int) -> np.ndarray:
    """Linear basis a signal modality embeds: cluster code plus position harmonics."""
    if structure is None:
        return _relation_profiles(dataset)
    clusters = np.asarray(structure.clusters)
    pos = np.asarray(structure.positions[system], dtype=np.float64)
    sizes = np.asarray(structure.cluster_sizes, dtype=np.float64)[clusters]
    angles = 2.0 * np.pi * pos / sizes
    onehot = np.eye(int(clusters.max()) + 1)[clusters]
    harmonics = [np.c_[np.cos(h * angles), np.sin(h * angles)] for h in range(1, _HARMONICS + 1)]
    return np.hstack([onehot, *harmonics])


def synth_features(
    dataset: Dataset,
    dim: int,
    signal_modality_count: int,
    noise_seed: int,
    structure=None,
) -> tuple[FeatureMatrix, FeatureMatrix]:
    """Deterministic synthetic visual/textual features for desk-scale runs.

    The first ``signal_modality_count`` of (visual, textual) embed entity
    cluster structure correlated with the generated KG's relations: given the
    generator's latent ``structure``, modality i encodes the cluster code and
    position system i; otherwise relation-participation profiles of the
    training graph.  The remaining modalities are i.i.d. standard normal noise.
    """
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    if signal_modality_count not in (0, 1, 2):
        raise ValueError("signal_modality_count must be 0, 1, or 2")
    rng = np.random.default_rng(noise_seed)
    n = dataset.num_entities

    out = []
    for i, modality in enumerate(("visual", "textual")):
        if i < signal_modality_count:
            basis = _structure_basis(dataset, structure, system=i)
            mix = rng.normal(size=(basis.shape[1], dim))
            data = basis @ mix + 0.05 * rng.normal(size=(n, dim))
        else:
            data = rng.normal(size=(n, dim))
        out.append(
            FeatureMatrix(
                modality=modality,
                data=data.astype(np.float32),
                mask=np.ones(n, dtype=bool),
            )
        )
    return out[0], out[1]
