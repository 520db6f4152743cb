"""Extraction orchestration: assets + vocabulary -> binary feature file.

Rows follow vocabulary id order.  Entities without usable assets get an
all-zero row and a cleared presence bit; unreadable images are logged and
treated as missing; multiple images of one entity are encoder-pooled then
averaged.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .assets import EntityAssets, read_vocab, unresolved_names
from .encoders import TextualEncoder, VisualEncoder, build_textual_encoder, build_visual_encoder
from .featfile import write_feature_file

log = logging.getLogger(__name__)


@dataclass
class ExtractionReport:
    modality: str
    rows: int
    dim: int
    present: int
    unresolved: list[str] = field(default_factory=list)
    failed_images: list[str] = field(default_factory=list)


def _load_image(path: Path) -> Image.Image | None:
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except (OSError, UnidentifiedImageError) as exc:
        log.warning("unreadable image %s: %s", path, exc)
        return None


def extract_visual(
    assets: EntityAssets,
    vocab_path: str | Path,
    out_path: str | Path,
    encoder: VisualEncoder | None = None,
    backend: str = "hf",
    batch_size: int = 16,
) -> ExtractionReport:
    vocab = read_vocab(vocab_path)
    encoder = encoder or build_visual_encoder(backend)
    report = ExtractionReport(
        modality="visual", rows=len(vocab), dim=encoder.dim, present=0,
        unresolved=unresolved_names(assets, vocab),
    )

    data = np.zeros((len(vocab), encoder.dim), dtype=np.float32)
    present = np.zeros(len(vocab), dtype=bool)
    pending: list[tuple[int, Image.Image]] = []
    sums = np.zeros_like(data)
    counts = np.zeros(len(vocab), dtype=np.int64)

    def flush() -> None:
        if not pending:
            return
        vectors = encoder.encode([img for _, img in pending])
        for (row, _), vec in zip(pending, vectors):
            sums[row] += vec
            counts[row] += 1
        pending.clear()

    for row, name in enumerate(vocab):
        for path in assets.images.get(name, []):
            img = _load_image(path)
            if img is None:
                report.failed_images.append(str(path))
                continue
            pending.append((row, img))
            if len(pending) >= batch_size:
                flush()
    flush()

    covered = counts > 0
    data[covered] = sums[covered] / counts[covered, None]
    present[covered] = True
    report.present = int(present.sum())
    write_feature_file(out_path, "visual", data, present)
    if report.unresolved:
        log.warning("manifest names not in the vocabulary: %s", ", ".join(report.unresolved))
    return report


def extract_textual(
    assets: EntityAssets,
    vocab_path: str | Path,
    out_path: str | Path,
    encoder: TextualEncoder | None = None,
    backend: str = "hf",
    batch_size: int = 32,
) -> ExtractionReport:
    vocab = read_vocab(vocab_path)
    encoder = encoder or build_textual_encoder(backend)
    report = ExtractionReport(
        modality="textual", rows=len(vocab), dim=encoder.dim, present=0,
        unresolved=unresolved_names(assets, vocab),
    )

    data = np.zeros((len(vocab), encoder.dim), dtype=np.float32)
    present = np.zeros(len(vocab), dtype=bool)
    rows = [(i, assets.descriptions[name]) for i, name in enumerate(vocab)
            if assets.descriptions.get(name, "").strip()]
    for start in range(0, len(rows), batch_size):
        chunk = rows[start : start + batch_size]
        vectors = encoder.encode([text for _, text in chunk])
        for (row, _), vec in zip(chunk, vectors):
            data[row] = vec
            present[row] = True

    report.present = int(present.sum())
    write_feature_file(out_path, "textual", data, present)
    if report.unresolved:
        log.warning("manifest names not in the vocabulary: %s", ", ".join(report.unresolved))
    return report
