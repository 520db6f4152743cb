"""Entity asset manifests and vocabulary dumps.

The vocabulary dump is the engine's ``id<TAB>name`` format; feature rows are
written in its id order.  The asset manifest is a TSV with three columns:
``entity<TAB>images<TAB>description`` where ``images`` is a ``;``-separated
list of paths (either field may be empty).  Repeated entity rows accumulate
images and concatenate descriptions.  Manifest names missing from the
vocabulary are reported, never silently dropped.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path


class ManifestError(ValueError):
    pass


@dataclass
class EntityAssets:
    images: dict[str, list[Path]] = field(default_factory=dict)
    descriptions: dict[str, str] = field(default_factory=dict)

    def add_row(self, name: str, images: str, description: str, base: Path) -> None:
        for part in filter(None, (p.strip() for p in images.split(";"))):
            path = Path(part)
            if not path.is_absolute():
                path = base / path
            self.images.setdefault(name, []).append(path)
        description = description.strip()
        if description:
            existing = self.descriptions.get(name)
            self.descriptions[name] = f"{existing} {description}" if existing else description


def read_vocab(path: str | Path) -> list[str]:
    names: list[str] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ManifestError(f"{path}:{lineno}: expected 'id<TAB>name'")
            if int(parts[0]) != len(names):
                raise ManifestError(f"{path}:{lineno}: non-contiguous id {parts[0]}")
            names.append(parts[1])
    if not names:
        raise ManifestError(f"{path}: empty vocabulary")
    return names


def read_manifest(path: str | Path) -> EntityAssets:
    path = Path(path)
    assets = EntityAssets()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ManifestError(
                    f"{path}:{lineno}: expected 'entity<TAB>images<TAB>description'"
                )
            assets.add_row(parts[0], parts[1], parts[2], base=path.parent)
    return assets


def unresolved_names(assets: EntityAssets, vocab: list[str]) -> list[str]:
    known = set(vocab)
    mentioned = set(assets.images) | set(assets.descriptions)
    return sorted(mentioned - known)
