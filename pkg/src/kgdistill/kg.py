"""Knowledge-graph data model: vocabularies, triples, reverse augmentation, and indexes.

Triple files are UTF-8 text, one ``head<TAB>relation<TAB>tail`` per line.
Head prediction is folded into tail prediction by augmenting every training
triple (h, r, t) with a reversed twin (t, r + num_rels, h), so relation ids
0..num_rels-1 are the originals and num_rels..2*num_rels-1 their reverses.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

log = logging.getLogger(__name__)


class ParseError(ValueError):
    """A triple line did not have exactly three TAB-separated fields."""

    def __init__(self, path: str | Path, lineno: int, line: str):
        self.path = str(path)
        self.lineno = lineno
        self.line = line
        super().__init__(f"{path}:{lineno}: expected 3 TAB-separated fields, got {line!r}")


class InvalidDatasetError(ValueError):
    pass


class Triple(NamedTuple):
    head: int
    rel: int
    tail: int


@dataclass
class Vocab:
    """Dense string-to-id mapping; ids are assigned in first-appearance order."""

    names: list[str] = field(default_factory=list)
    index: dict[str, int] = field(default_factory=dict)

    def add(self, name: str) -> int:
        idx = self.index.get(name)
        if idx is None:
            idx = len(self.names)
            self.names.append(name)
            self.index[name] = idx
        return idx

    def lookup(self, name: str) -> int:
        return self.index[name]

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self.index


@dataclass
class Dataset:
    entities: Vocab
    relations: Vocab
    train: list[Triple]
    valid: list[Triple]
    test: list[Triple]
    train_aug: list[Triple]

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        """Number of un-augmented relations."""
        return len(self.relations)


def add_reverse(triples: list[Triple], num_rels: int) -> list[Triple]:
    """Append (t, r + num_rels, h) for every (h, r, t), preserving input order."""
    for t in triples:
        if t.rel >= num_rels:
            raise ValueError(f"relation id {t.rel} out of range for num_rels={num_rels}")
    return list(triples) + [Triple(t.tail, t.rel + num_rels, t.head) for t in triples]


def _parse_lines(path: str | Path) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(path, lineno, line)
            rows.append((parts[0], parts[1], parts[2]))
    return rows


def load_dataset(train_path: str | Path, valid_path: str | Path, test_path: str | Path) -> Dataset:
    """Read the three splits, build vocabularies, and reverse-augment the train split.

    Vocabulary ids follow first appearance across train, then valid, then test,
    which keeps ids (and therefore checkpoints) reproducible for a given file
    content.  Duplicate triples within a split are kept: they reweight the
    training loss.
    """
    raw = {
        "train": _parse_lines(train_path),
        "valid": _parse_lines(valid_path),
        "test": _parse_lines(test_path),
    }
    if not raw["train"]:
        raise InvalidDatasetError(f"train split {train_path} contains no triples")

    entities = Vocab()
    relations = Vocab()
    splits: dict[str, list[Triple]] = {}
    for name in ("train", "valid", "test"):
        triples = []
        seen: set[tuple[str, str, str]] = set()
        dup = 0
        for row in raw[name]:
            h, r, t = row
            triples.append(Triple(entities.add(h), relations.add(r), entities.add(t)))
            if row in seen:
                dup += 1
            seen.add(row)
        if dup:
            log.warning("%s split contains %d duplicate triples (kept)", name, dup)
        splits[name] = triples

    return Dataset(
        entities=entities,
        relations=relations,
        train=splits["train"],
        valid=splits["valid"],
        test=splits["test"],
        train_aug=add_reverse(splits["train"], len(relations)),
    )


NeighborIndex = dict[tuple[int, int], frozenset[int]]
FilterIndex = dict[tuple[int, int], frozenset[int]]


def build_neighbor_index(train_aug: Iterable[Triple]) -> NeighborIndex:
    """Map each augmented training query (h, r) to the set of its known tails.

    Lookups for absent queries should use ``index.get(key, frozenset())``; an
    unseen query has an empty neighbor set, not a KeyError.
    """
    acc: dict[tuple[int, int], set[int]] = {}
    for h, r, t in train_aug:
        acc.setdefault((h, r), set()).add(t)
    return {k: frozenset(v) for k, v in acc.items()}


def build_filter_index(all_splits_aug: Iterable[Iterable[Triple]]) -> FilterIndex:
    """Union the tails of every split (all reverse-augmented) per query."""
    acc: dict[tuple[int, int], set[int]] = {}
    for split in all_splits_aug:
        for h, r, t in split:
            acc.setdefault((h, r), set()).add(t)
    return {k: frozenset(v) for k, v in acc.items()}


def dataset_filter_index(dataset: Dataset) -> FilterIndex:
    """Filter index over train+valid+test, both directions."""
    num_rels = dataset.num_relations
    return build_filter_index(
        [
            dataset.train_aug,
            add_reverse(dataset.valid, num_rels),
            add_reverse(dataset.test, num_rels),
        ]
    )


def triples_to_names(triples: Iterable[Triple], dataset: Dataset) -> list[tuple[str, str, str]]:
    ents, rels = dataset.entities.names, dataset.relations.names
    return [(ents[h], rels[r], ents[t]) for h, r, t in triples]


def write_triples(path: str | Path, rows: Iterable[tuple[str, str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for h, r, t in rows:
            f.write(f"{h}\t{r}\t{t}\n")


def write_vocab(path: str | Path, vocab: Vocab) -> None:
    """Dump as ``id<TAB>name`` lines in id order."""
    with open(path, "w", encoding="utf-8") as f:
        for i, name in enumerate(vocab.names):
            f.write(f"{i}\t{name}\n")


def read_vocab(path: str | Path) -> Vocab:
    vocab = Vocab()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(path, lineno, line)
            idx = int(parts[0])
            got = vocab.add(parts[1])
            if got != idx:
                raise InvalidDatasetError(f"{path}:{lineno}: non-contiguous vocab id {idx} (expected {got})")
    return vocab
