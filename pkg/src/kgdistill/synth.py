"""Deterministic clustered random KGs for desk-scale experiments.

Entities are split into clusters and carry two independent within-cluster
position systems.  Each relation links one ordered cluster pair and maps a
head to a short window of tails by one of the two position systems: half the
relations follow the first system (the one visual features encode), half the
second (hidden unless textual features are signal).  Modality relevance thus
varies per triple, so excluding a modality can genuinely help or hurt, and an
entity's true answers form small neighbor sets.  Triples are sampled uniformly
without replacement from the feasible pool and split 80/10/10.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kg import Dataset, Triple, Vocab, add_reverse


class InfeasibleError(ValueError):
    pass


@dataclass
class EntityStructure:
    """Latent layout of a generated KG, indexed by vocabulary entity id."""

    clusters: np.ndarray  # (n,) cluster id
    positions: np.ndarray  # (2, n) within-cluster positions per system
    cluster_sizes: np.ndarray  # (num_clusters,)


@dataclass
class SynthKg:
    dataset: Dataset
    structure: EntityStructure
    relation_groups: np.ndarray  # (num_relations,) 0 or 1: which position system
    splits_named: dict[str, list[tuple[str, str, str]]]

    @property
    def clusters(self) -> np.ndarray:
        return self.structure.clusters


def _entity_name(i: int) -> str:
    return f"e{i:04d}"


def _relation_name(i: int) -> str:
    return f"r{i:02d}"


def generate_kg(
    num_entities: int,
    num_relations: int,
    num_triples: int,
    num_clusters: int,
    seed: int,
    window: int = 4,
) -> SynthKg:
    if num_clusters < 1 or num_clusters > num_entities:
        raise InfeasibleError(f"need 1 <= clusters <= entities, got {num_clusters}")
    if num_triples < 3:
        raise InfeasibleError("need at least 3 triples to populate all splits")
    if window < 1:
        raise InfeasibleError(f"window must be >= 1, got {window}")
    if num_triples > num_entities**2 * num_relations:
        raise InfeasibleError(
            f"{num_triples} triples requested but only "
            f"{num_entities ** 2 * num_relations} are possible"
        )
    rng = np.random.default_rng(seed)

    perm = rng.permutation(num_entities)
    members = [perm[c::num_clusters] for c in range(num_clusters)]
    cluster_of = np.zeros(num_entities, dtype=np.int64)
    pos = np.zeros((2, num_entities), dtype=np.int64)
    for c, mem in enumerate(members):
        cluster_of[mem] = c
        pos[0, mem] = np.arange(len(mem))
        pos[1, mem] = rng.permutation(len(mem))

    src = rng.integers(0, num_clusters, size=num_relations)
    dst = rng.integers(0, num_clusters, size=num_relations)
    offsets = rng.integers(0, max(len(m) for m in members), size=num_relations)
    groups = np.arange(num_relations) % 2

    pool: list[tuple[int, int, int]] = []
    for r in range(num_relations):
        dmem = members[dst[r]]
        g = groups[r]
        dst_by_pos = dmem[np.argsort(pos[g, dmem])]
        span = min(window, len(dmem))
        for h in members[src[r]]:
            p = pos[g, h]
            for j in range(span):
                t = dst_by_pos[(p + offsets[r] + j) % len(dmem)]
                pool.append((int(h), r, int(t)))
    if num_triples > len(pool):
        raise InfeasibleError(
            f"{num_triples} triples requested but the cluster wiring admits only {len(pool)}"
        )
    picked = [pool[i] for i in rng.permutation(len(pool))[:num_triples]]

    n_valid = max(1, num_triples // 10)
    n_test = max(1, num_triples // 10)
    n_train = num_triples - n_valid - n_test
    named = [(_entity_name(h), _relation_name(r), _entity_name(t)) for h, r, t in picked]
    splits_named = {
        "train": named[:n_train],
        "valid": named[n_train : n_train + n_valid],
        "test": named[n_train + n_valid :],
    }

    entities = Vocab()
    relations = Vocab()
    splits: dict[str, list[Triple]] = {}
    for name in ("train", "valid", "test"):
        splits[name] = [
            Triple(entities.add(h), relations.add(r), entities.add(t))
            for h, r, t in splits_named[name]
        ]
    dataset = Dataset(
        entities=entities,
        relations=relations,
        train=splits["train"],
        valid=splits["valid"],
        test=splits["test"],
        train_aug=add_reverse(splits["train"], len(relations)),
    )
    ids = np.array([int(name[1:]) for name in entities.names])
    structure = EntityStructure(
        clusters=cluster_of[ids],
        positions=pos[:, ids],
        cluster_sizes=np.array([len(m) for m in members]),
    )
    rel_groups = np.array([groups[int(name[1:])] for name in relations.names])
    return SynthKg(
        dataset=dataset,
        structure=structure,
        relation_groups=rel_groups,
        splits_named=splits_named,
    )
