"""Desk-scale end-to-end experiment: distilled students vs the teacher average.

Per seed: generate a 200-entity synthetic MKG (two signal modalities counting
the structural one, one noise modality), pre-train the teachers once, train
one student with the neighbor-decoupled loss and one with vanilla KD (both
with reinforced combination), and evaluate everything on the test split.
Medians over the seeds are the quantities of interest; the reward trend is
checked on each neighbor-decoupled run.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import KdVariant, Strategy, TrainConfig
from .evaluation import evaluate
from .features import synth_features
from .kg import dataset_filter_index
from .synth import generate_kg
from .teachers import build_ensemble, pretrain, teacher_average_scorer
from .training import train_student, student_scorer

log = logging.getLogger(__name__)

DESK_SEEDS = (11, 12, 13)


@dataclass
class DeskScaleSetup:
    """Generation and training knobs for the desk-scale run."""

    entities: int = 200
    relations: int = 10
    triples: int = 1800
    clusters: int = 4
    window: int = 4
    feature_dim: int = 48
    signal_modalities: int = 1
    dim: int = 32
    learning_rate: float = 1e-2
    batch_size: int = 256
    pretrain_epochs: int = 25
    student_epochs: int = 50
    policy_lr: float = 3e-3
    l2_weight: float = 1e-4
    eval_every: int = 3
    seeds: tuple[int, ...] = DESK_SEEDS

    def train_config(self, seed: int, epochs: int, kd_variant: KdVariant) -> TrainConfig:
        return TrainConfig(
            dim=self.dim,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=epochs,
            seed=seed,
            policy_lr=self.policy_lr,
            l2_weight=self.l2_weight,
            eval_every=self.eval_every,
            strategy=Strategy.REINFORCED,
            kd_variant=kd_variant,
        )


@dataclass
class SeedOutcome:
    seed: int
    teacher_avg_mrr: float
    ndkd_mrr: float
    vanilla_mrr: float
    first_quartile_delta: float
    last_quartile_delta: float

    @property
    def reward_trend_up(self) -> bool:
        return self.last_quartile_delta > self.first_quartile_delta


@dataclass
class DeskScaleResult:
    outcomes: list[SeedOutcome] = field(default_factory=list)
    elapsed_seconds: float = 0.0

    def median(self, attr: str) -> float:
        return float(np.median([getattr(o, attr) for o in self.outcomes]))

    @property
    def trend_up_count(self) -> int:
        return sum(o.reward_trend_up for o in self.outcomes)

    def summary(self) -> dict:
        return {
            "per_seed": [
                {
                    "seed": o.seed,
                    "teacher_avg_mrr": o.teacher_avg_mrr,
                    "ndkd_mrr": o.ndkd_mrr,
                    "vanilla_mrr": o.vanilla_mrr,
                    "reward_trend_up": o.reward_trend_up,
                }
                for o in self.outcomes
            ],
            "median_teacher_avg_mrr": self.median("teacher_avg_mrr"),
            "median_ndkd_mrr": self.median("ndkd_mrr"),
            "median_vanilla_mrr": self.median("vanilla_mrr"),
            "trend_up_count": self.trend_up_count,
            "elapsed_seconds": self.elapsed_seconds,
        }


def run_seed(setup: DeskScaleSetup, seed: int) -> SeedOutcome:
    synth = generate_kg(
        num_entities=setup.entities,
        num_relations=setup.relations,
        num_triples=setup.triples,
        num_clusters=setup.clusters,
        seed=seed,
        window=setup.window,
    )
    dataset = synth.dataset
    visual, textual = synth_features(
        dataset, setup.feature_dim, setup.signal_modalities, noise_seed=seed,
        structure=synth.structure,
    )
    filter_index = dataset_filter_index(dataset)

    pre_cfg = setup.train_config(seed, setup.pretrain_epochs, KdVariant.NDKD)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    ensemble = build_ensemble(dataset, visual, textual, setup.dim, rng)
    teachers, _ = pretrain(ensemble, dataset, filter_index, pre_cfg, rng)
    avg_mrr = evaluate(
        teacher_average_scorer(teachers), dataset.test, filter_index, dataset.num_relations
    ).mrr

    ndkd_cfg = setup.train_config(seed, setup.student_epochs, KdVariant.NDKD)
    ndkd_run = train_student(dataset, teachers, ndkd_cfg, filter_index)
    ndkd_mrr = evaluate(
        student_scorer(ndkd_run.student), dataset.test, filter_index, dataset.num_relations
    ).mrr

    vanilla_cfg = setup.train_config(seed, setup.student_epochs, KdVariant.VANILLA)
    vanilla_run = train_student(dataset, teachers, vanilla_cfg, filter_index)
    vanilla_mrr = evaluate(
        student_scorer(vanilla_run.student), dataset.test, filter_index, dataset.num_relations
    ).mrr

    deltas = ndkd_run.epoch_mean_delta
    q = max(1, len(deltas) // 4)
    outcome = SeedOutcome(
        seed=seed,
        teacher_avg_mrr=avg_mrr,
        ndkd_mrr=ndkd_mrr,
        vanilla_mrr=vanilla_mrr,
        first_quartile_delta=float(np.mean(deltas[:q])),
        last_quartile_delta=float(np.mean(deltas[-q:])),
    )
    log.info(
        "seed %d: teacher_avg %.4f ndkd %.4f vanilla %.4f trend %s",
        seed, avg_mrr, ndkd_mrr, vanilla_mrr, outcome.reward_trend_up,
    )
    return outcome


def run_desk_scale(setup: DeskScaleSetup | None = None) -> DeskScaleResult:
    setup = setup or DeskScaleSetup()
    start = time.monotonic()
    result = DeskScaleResult()
    for seed in setup.seeds:
        result.outcomes.append(run_seed(setup, seed))
    result.elapsed_seconds = time.monotonic() - start
    return result
