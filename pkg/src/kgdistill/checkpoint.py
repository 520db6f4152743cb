"""Binary checkpoints: single scoring model, teacher ensemble, policy, logit cache.

Model layout (little-endian): magic ``DSOMCKPT``, u32 version, u64 entity
count, u64 augmented relation count, u64 complex dim, then the entity and
relation tables' real/imaginary matrices as float64 row-major.  The ensemble
file prefixes a length-framed JSON manifest and concatenates the three model
blocks (projected entity tables stored materialized) plus the raw projection
matrices so training can resume.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import ComplexEmbeddingTable, KgeModel, Projection
from .policy import NUM_ACTIONS, PolicyNet
from .teachers import MODALITIES, TeacherEnsemble

MODEL_MAGIC = b"DSOMCKPT"
ENSEMBLE_MAGIC = b"DSOMTENS"
POLICY_MAGIC = b"DSOMPOLI"
CACHE_MAGIC = b"DSOMTLCH"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_array(f, arr: np.ndarray) -> None:
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(f, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    raw = f.read(count * 8)
    if len(raw) != count * 8:
        raise CheckpointError("truncated checkpoint payload")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def _check_magic(f, magic: bytes, what: str) -> None:
    got = f.read(len(magic))
    if got != magic:
        raise CheckpointError(f"bad {what} magic {got!r}")
    (version,) = struct.unpack("<I", f.read(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported {what} version {version}")


def write_model(f, model: KgeModel) -> None:
    ent, rel = model.entities, model.relations
    f.write(MODEL_MAGIC)
    f.write(struct.pack("<I", VERSION))
    f.write(struct.pack("<QQQ", ent.count, rel.count, ent.dim))
    for arr in (ent.re, ent.im, rel.re, rel.im):
        _write_array(f, arr)


def read_model(f) -> KgeModel:
    _check_magic(f, MODEL_MAGIC, "model")
    n, r, d = struct.unpack("<QQQ", f.read(24))
    ent = ComplexEmbeddingTable(_read_array(f, (n, d)), _read_array(f, (n, d)))
    rel = ComplexEmbeddingTable(_read_array(f, (r, d)), _read_array(f, (r, d)))
    return KgeModel(entities=ent, relations=rel)


def save_model(path: str | Path, model: KgeModel) -> None:
    with open(path, "wb") as f:
        write_model(f, model)


def load_model(path: str | Path) -> KgeModel:
    with open(path, "rb") as f:
        return read_model(f)


@dataclass
class EnsembleManifest:
    modalities: tuple[str, ...]
    dim: int
    num_entities: int
    num_rels_aug: int
    feature_dims: dict[str, int]
    best_epoch: dict[str, int]
    best_val_mrr: dict[str, float]
    standardize_state: bool


def save_ensemble(
    path: str | Path, ensemble: TeacherEnsemble, manifest: EnsembleManifest
) -> None:
    header = {
        "modalities": list(manifest.modalities),
        "dim": manifest.dim,
        "num_entities": manifest.num_entities,
        "num_rels_aug": manifest.num_rels_aug,
        "feature_dims": manifest.feature_dims,
        "best_epoch": manifest.best_epoch,
        "best_val_mrr": manifest.best_val_mrr,
        "standardize_state": manifest.standardize_state,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(ENSEMBLE_MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for model in ensemble.models:
            write_model(f, model)
        for model in ensemble.models:
            proj = model.projection
            if proj is None:
                f.write(struct.pack("<QQ", 0, 0))
            else:
                f.write(struct.pack("<QQ", proj.out_dim, proj.in_dim))
                _write_array(f, proj.weights)


def load_ensemble(path: str | Path) -> tuple[TeacherEnsemble, EnsembleManifest]:
    """Load with materialized entity tables; feature files are not needed again."""
    with open(path, "rb") as f:
        _check_magic(f, ENSEMBLE_MAGIC, "ensemble")
        (blob_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(blob_len).decode("utf-8"))
        models = [read_model(f) for _ in header["modalities"]]
        for model in models:
            out_dim, in_dim = struct.unpack("<QQ", f.read(16))
            if out_dim:
                model.projection = Projection(_read_array(f, (out_dim, in_dim)))
                # entities stay as stored (materialized); features not retained
                model.features = None
    manifest = EnsembleManifest(
        modalities=tuple(header["modalities"]),
        dim=header["dim"],
        num_entities=header["num_entities"],
        num_rels_aug=header["num_rels_aug"],
        feature_dims={k: int(v) for k, v in header["feature_dims"].items()},
        best_epoch={k: int(v) for k, v in header["best_epoch"].items()},
        best_val_mrr={k: float(v) for k, v in header["best_val_mrr"].items()},
        standardize_state=bool(header["standardize_state"]),
    )
    if manifest.modalities != MODALITIES:
        raise CheckpointError(f"unexpected modality order {manifest.modalities}")
    ensemble = TeacherEnsemble(models, manifest.modalities)
    return ensemble, manifest


def save_policy(path: str | Path, policy: PolicyNet) -> None:
    with open(path, "wb") as f:
        f.write(POLICY_MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<QQQB", policy.in_dim, policy.hidden, NUM_ACTIONS, int(policy.standardize_state)))
        for arr in (policy.w1, policy.b1, policy.w2, policy.b2):
            _write_array(f, arr)


def load_policy(path: str | Path) -> PolicyNet:
    with open(path, "rb") as f:
        _check_magic(f, POLICY_MAGIC, "policy")
        in_dim, hidden, actions, standardize = struct.unpack("<QQQB", f.read(25))
        if actions != NUM_ACTIONS:
            raise CheckpointError(f"policy has {actions} actions, expected {NUM_ACTIONS}")
        return PolicyNet(
            w1=_read_array(f, (hidden, in_dim)),
            b1=_read_array(f, (hidden,)),
            w2=_read_array(f, (actions, hidden)),
            b2=_read_array(f, (actions,)),
            standardize_state=bool(standardize),
        )


def save_logit_cache(path: str | Path, queries: np.ndarray, logits: np.ndarray) -> None:
    """Cache of per-query teacher score vectors: queries (Q, 2), logits (Q, M, n)."""
    queries = np.ascontiguousarray(queries, dtype="<u8")
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<QQQ", logits.shape[0], logits.shape[1], logits.shape[2]))
        f.write(queries.tobytes())
        _write_array(f, logits)


def load_logit_cache(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as f:
        _check_magic(f, CACHE_MAGIC, "logit cache")
        q, m, n = struct.unpack("<QQQ", f.read(24))
        raw = f.read(q * 2 * 8)
        if len(raw) != q * 2 * 8:
            raise CheckpointError("truncated logit cache")
        queries = np.frombuffer(raw, dtype="<u8").reshape(q, 2).astype(np.int64)
        logits = _read_array(f, (q, m, n))
    return queries, logits
