"""Filtered link-prediction evaluation: per-query target ranks and MRR/MR/Hits@K.

Head prediction is evaluated through the reversed query (t, r + num_rels) so
both directions reduce to tail ranking.  Known-true competitors other than the
target are filtered out before ranking; score ties contribute half a rank,
floored ("half_floor" policy), so constant scorers get mid ranks instead of
inflated Hits@1.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .kg import FilterIndex, Triple

TIE_POLICY = "half_floor"

HITS_KS = (1, 3, 10)


@dataclass
class Metrics:
    mrr: float
    mr: float
    hits: dict[int, float]
    count: int

    def to_dict(self) -> dict:
        return {
            "mrr": self.mrr,
            "mr": self.mr,
            "hits1": self.hits[1],
            "hits3": self.hits[3],
            "hits10": self.hits[10],
            "count": self.count,
            "tie_policy": TIE_POLICY,
        }


class RankRecord(NamedTuple):
    head: int
    rel: int
    tail: int
    direction: str  # "tail" or "head" prediction
    rank: int


def filtered_rank(scores: np.ndarray, target: int, known_true: Iterable[int]) -> int:
    """Rank of the target among entities not known to be true answers.

    rank = 1 + #{competitors scoring above target} + floor(#{ties} / 2), where
    competitors exclude the target itself and every other known-true entity.
    """
    scores = np.asarray(scores)
    n = scores.shape[0]
    if not 0 <= target < n:
        raise IndexError(f"target {target} out of range for {n} entities")
    competitor = np.ones(n, dtype=bool)
    for e in known_true:
        competitor[e] = False
    competitor[target] = False
    target_score = scores[target]
    above = int(np.count_nonzero(competitor & (scores > target_score)))
    ties = int(np.count_nonzero(competitor & (scores == target_score)))
    return 1 + above + ties // 2


def metrics_from_ranks(ranks: Sequence[int]) -> Metrics:
    arr = np.asarray(ranks, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("no ranks to aggregate")
    return Metrics(
        mrr=float(np.mean(1.0 / arr)),
        mr=float(np.mean(arr)),
        hits={k: float(np.mean(arr <= k)) for k in HITS_KS},
        count=int(arr.size),
    )


def evaluate(
    scorer: Callable[[int, int], np.ndarray],
    triples: Sequence[Triple],
    filter_index: FilterIndex,
    num_rels: int,
    collect_ranks: bool = False,
) -> Metrics | tuple[Metrics, list[RankRecord]]:
    """Average tail- and head-prediction metrics over a split.

    ``scorer(head_id, rel_id)`` must return the score vector over all entities;
    ``num_rels`` is the un-augmented relation count used to form reverse ids.
    """
    if len(triples) == 0:
        raise ValueError("cannot evaluate an empty split")
    empty: frozenset[int] = frozenset()
    ranks: list[int] = []
    records: list[RankRecord] = []
    for h, r, t in triples:
        tail_rank = filtered_rank(scorer(h, r), t, filter_index.get((h, r), empty))
        head_rank = filtered_rank(
            scorer(t, r + num_rels), h, filter_index.get((t, r + num_rels), empty)
        )
        ranks.append(tail_rank)
        ranks.append(head_rank)
        if collect_ranks:
            records.append(RankRecord(h, r, t, "tail", tail_rank))
            records.append(RankRecord(h, r, t, "head", head_rank))
    metrics = metrics_from_ranks(ranks)
    if collect_ranks:
        return metrics, records
    return metrics
