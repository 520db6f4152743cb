from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

from kgextract.encoders import build_textual_encoder, build_visual_encoder

ENTITIES = [f"e{i:02d}" for i in range(10)]


@pytest.fixture(scope="session")
def visual_encoder():
    return build_visual_encoder("tiny")


@pytest.fixture(scope="session")
def textual_encoder():
    return build_textual_encoder("tiny")


@pytest.fixture(scope="session")
def smoke_corpus(tmp_path_factory):
    """10-entity corpus: 7 images (one entity has two), 8 descriptions,
    1 corrupt image file, 1 manifest name outside the vocabulary."""
    root = tmp_path_factory.mktemp("corpus")
    images = root / "images"
    images.mkdir()
    rng = np.random.default_rng(7)

    vocab_path = root / "entities.tsv"
    vocab_path.write_text(
        "".join(f"{i}\t{name}\n" for i, name in enumerate(ENTITIES)), encoding="utf-8"
    )

    rows = []
    for i, name in enumerate(ENTITIES):
        img_field = ""
        if i < 7:
            path = images / f"{name}.png"
            Image.fromarray((rng.random((24, 30, 3)) * 255).astype("uint8")).save(path)
            img_field = f"images/{name}.png"
            if i == 0:  # multiple images for one entity
                extra = images / f"{name}_b.png"
                Image.fromarray((rng.random((18, 18, 3)) * 255).astype("uint8")).save(extra)
                img_field += f";images/{name}_b.png"
        if i == 6:  # corrupt image: readable path, not an image
            broken = images / "broken.png"
            broken.write_bytes(b"this is not a png")
            img_field = "images/broken.png"
        desc_field = f"entity {name} belongs to group {i % 3}" if i < 8 else ""
        rows.append(f"{name}\t{img_field}\t{desc_field}")
    rows.append("ghost\timages/e00.png\tnot in the vocabulary")

    manifest_path = root / "manifest.tsv"
    manifest_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return root, vocab_path, manifest_path
