"""The three modality teachers: joint pre-training and frozen scoring.

The structural teacher owns a free entity table; the visual and textual
teachers derive entity embeddings by projecting fixed feature matrices.  All
three own free relation tables over the augmented relation vocabulary.  Their
losses sum but their parameters are disjoint, so each modality is stepped
independently.  After pre-training the ensemble is frozen: during student
training teacher logits are constants.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .backbone import (
    KgeModel,
    OptimizerState,
    ce_loss_and_grads,
    init_free_model,
    init_projected_model,
    model_scores,
    optimizer_step,
    score_all,
    softmax,
)
from .config import TrainConfig
from .evaluation import Metrics, evaluate
from .features import FeatureMatrix
from .kg import Dataset, FilterIndex, Triple

log = logging.getLogger(__name__)

MODALITIES = ("structural", "visual", "textual")


@dataclass
class TeacherEnsemble:
    """Per-modality scoring models, in the fixed (structural, visual, textual) order.

    The order is part of the contract: action bitmasks index into it.
    """

    models: list[KgeModel]
    modalities: tuple[str, ...] = MODALITIES

    @property
    def num_entities(self) -> int:
        return self.models[0].entities.count

    def copy(self) -> "TeacherEnsemble":
        return TeacherEnsemble([m.copy() for m in self.models], self.modalities)


def build_ensemble(
    dataset: Dataset,
    visual: FeatureMatrix,
    textual: FeatureMatrix,
    dim: int,
    rng: np.random.Generator,
) -> TeacherEnsemble:
    n = dataset.num_entities
    num_rels_aug = 2 * dataset.num_relations
    for feats in (visual, textual):
        if feats.num_entities != n:
            raise ValueError(
                f"{feats.modality} features cover {feats.num_entities} entities, dataset has {n}"
            )
    models = [
        init_free_model(n, num_rels_aug, dim, rng),
        init_projected_model(visual.data.astype(np.float64), num_rels_aug, dim, rng),
        init_projected_model(textual.data.astype(np.float64), num_rels_aug, dim, rng),
    ]
    return TeacherEnsemble(models)


def teacher_logits(ensemble: TeacherEnsemble, head_id: int, rel_id: int) -> list[np.ndarray]:
    """Per-modality score vectors over all entities for one query."""
    return [score_all(head_id, rel_id, m.entities, m.relations) for m in ensemble.models]


def teacher_logits_batch(
    ensemble: TeacherEnsemble, heads: Sequence[int], rels: Sequence[int]
) -> np.ndarray:
    """(num_modalities, B, n) score tensor for a batch of queries."""
    return np.stack([model_scores(m, heads, rels)[0] for m in ensemble.models])


def pretrain_epoch(
    ensemble: TeacherEnsemble,
    train_aug: Sequence[Triple],
    config: TrainConfig,
    opt_states: list[OptimizerState],
    rng: np.random.Generator,
) -> list[float]:
    """One shuffled pass; each modality's loss is computed and stepped independently."""
    order = rng.permutation(len(train_aug))
    mean_ce = [0.0 for _ in ensemble.models]
    for start in range(0, len(order), config.batch_size):
        batch = [train_aug[i] for i in order[start : start + config.batch_size]]
        for mi, model in enumerate(ensemble.models):
            loss, grads = ce_loss_and_grads(batch, model)
            if config.l2_weight > 0.0:
                params = model.params()
                for name, g in grads.items():
                    g += 2.0 * config.l2_weight * params[name]
            optimizer_step(model.params(), grads, opt_states[mi])
            model.materialize()
            mean_ce[mi] += loss * len(batch)
    return [s / len(train_aug) for s in mean_ce]


@dataclass
class PretrainHistory:
    epoch_losses: list[list[float]] = field(default_factory=list)  # per epoch, per modality
    val_metrics: list[list[Metrics | None]] = field(default_factory=list)
    best_epoch: dict[str, int] = field(default_factory=dict)
    best_val_mrr: dict[str, float] = field(default_factory=dict)


def pretrain(
    ensemble: TeacherEnsemble,
    dataset: Dataset,
    filter_index: FilterIndex,
    config: TrainConfig,
    rng: np.random.Generator,
) -> tuple[TeacherEnsemble, PretrainHistory]:
    """Train all teachers for config.epochs, keeping each modality's best-validation state."""
    opt_states = [OptimizerState(lr=config.learning_rate) for _ in ensemble.models]
    history = PretrainHistory()
    best_models = [m.copy() for m in ensemble.models]
    best_mrr = [-1.0 for _ in ensemble.models]
    best_epoch = [0 for _ in ensemble.models]

    for epoch in range(1, config.epochs + 1):
        losses = pretrain_epoch(ensemble, dataset.train_aug, config, opt_states, rng)
        history.epoch_losses.append(losses)
        evaluate_now = epoch % config.eval_every == 0 or epoch == config.epochs
        val_row: list[Metrics | None] = [None] * len(ensemble.models)
        if evaluate_now and dataset.valid:
            for mi, model in enumerate(ensemble.models):
                scorer = lambda h, r, m=model: score_all(h, r, m.entities, m.relations)
                metrics = evaluate(scorer, dataset.valid, filter_index, dataset.num_relations)
                val_row[mi] = metrics
                if metrics.mrr > best_mrr[mi]:
                    best_mrr[mi] = metrics.mrr
                    best_epoch[mi] = epoch
                    best_models[mi] = model.copy()
        history.val_metrics.append(val_row)
        log.info("pretrain epoch %d: ce=%s", epoch, ["%.4f" % l for l in losses])

    if config.epochs == 0 or not dataset.valid:
        best_models = [m.copy() for m in ensemble.models]
        best_epoch = [config.epochs] * len(ensemble.models)
        best_mrr = [float("nan")] * len(ensemble.models)
    history.best_epoch = dict(zip(ensemble.modalities, best_epoch))
    history.best_val_mrr = dict(zip(ensemble.modalities, best_mrr))
    return TeacherEnsemble(best_models, ensemble.modalities), history


def teacher_average_scorer(ensemble: TeacherEnsemble):
    """Scorer ranking by the mean of the teachers' softmaxed score vectors."""

    def scorer(head_id: int, rel_id: int) -> np.ndarray:
        vectors = teacher_logits(ensemble, head_id, rel_id)
        return np.mean([softmax(v) for v in vectors], axis=0)

    return scorer


@dataclass
class TeacherLogitCache:
    """Precomputed per-query teacher score vectors (compute-light mode).

    Holds one (num_modalities, n) block per unique (head, rel) training query;
    lookups assemble batches by row gather.  The disk form lives in the
    checkpoint module and mirrors its layout.
    """

    queries: np.ndarray  # (Q, 2) int64
    logits: np.ndarray  # (Q, M, n)
    index: dict[tuple[int, int], int]

    @classmethod
    def build(cls, ensemble: TeacherEnsemble, triples: Sequence[Triple]) -> "TeacherLogitCache":
        unique = sorted({(t.head, t.rel) for t in triples})
        heads = [h for h, _ in unique]
        rels = [r for _, r in unique]
        logits = teacher_logits_batch(ensemble, heads, rels).transpose(1, 0, 2)
        queries = np.array(unique, dtype=np.int64)
        return cls(queries=queries, logits=logits, index={q: i for i, q in enumerate(unique)})

    @classmethod
    def from_arrays(cls, queries: np.ndarray, logits: np.ndarray) -> "TeacherLogitCache":
        index = {(int(h), int(r)): i for i, (h, r) in enumerate(queries)}
        return cls(queries=queries, logits=logits, index=index)

    def lookup(self, heads: Sequence[int], rels: Sequence[int]) -> np.ndarray:
        rows = [self.index[(int(h), int(r))] for h, r in zip(heads, rels)]
        return self.logits[rows].transpose(1, 0, 2)
