"""Student training: per-triple teacher combination, rewards, and distillation.

Per minibatch the loop (1) scores the batch under the frozen teachers and the
current student, (2) picks a teacher subset per triple according to the
configured strategy (sampling from the policy when reinforced), (3) computes
rewards against the all-teacher-mean baseline, and (4) takes one Adam step on
the student and, for the reinforced strategy, one on the policy.  The best
student by validation MRR is retained.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .backbone import (
    KgeModel,
    OptimizerState,
    init_free_model,
    log_softmax,
    model_scores,
    optimizer_step,
    score_all,
    softmax,
)
from .config import Strategy, TrainConfig
from .distill import PolicyBatch, student_total_loss
from .evaluation import Metrics, evaluate
from .kg import Dataset, FilterIndex, build_neighbor_index
from .policy import (
    NUM_ACTIONS,
    Action,
    PolicyNet,
    build_state,
    policy_forward,
    sample_actions,
)
from .teachers import TeacherEnsemble, TeacherLogitCache, teacher_logits_batch

log = logging.getLogger(__name__)


@dataclass
class EpochTrace:
    epoch: int
    ce: float
    rc: float
    nekd: float
    nnkd: float
    kd_total: float


@dataclass
class RewardPoint:
    step: int
    mean_delta: float


@dataclass
class StrategyStats:
    epoch: int
    fractions: np.ndarray  # (NUM_ACTIONS,)


@dataclass
class StudentTrainResult:
    student: KgeModel  # best-validation state
    final_student: KgeModel
    policy: PolicyNet
    loss_trace: list[EpochTrace]
    reward_curve: list[RewardPoint]
    strategy_stats: list[StrategyStats]
    epoch_mean_delta: list[float]
    val_mrr: list[float]
    best_epoch: int
    best_val_mrr: float


def _rows_ce(matrix: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-row cross-entropy of targets under plain softmax."""
    logp = log_softmax(matrix, axis=1)
    return -logp[np.arange(matrix.shape[0]), targets]


_SUBSETS = [Action(i).subset for i in range(NUM_ACTIONS)]
ALL_TEACHERS_ACTION = Action.from_subset(range(3)).index


def _combine_by_actions(tea: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Mean the selected modality score vectors row by row; tea is (M, B, n)."""
    combined = np.empty(tea.shape[1:])
    for a in np.unique(actions):
        rows = actions == a
        combined[rows] = tea[list(_SUBSETS[a])][:, rows].mean(axis=0)
    return combined


def choose_actions(
    tea: np.ndarray,
    stu_ce: np.ndarray,
    tails: np.ndarray,
    config: TrainConfig,
    policy: PolicyNet | None,
    action_rng: np.random.Generator | None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Per-triple action indices for the configured strategy.

    Returns (actions, states); states are only built for the reinforced
    strategy, where actions are sampled from the policy.
    """
    batch = tea.shape[1]
    if config.strategy is Strategy.REINFORCED:
        states = build_state([tea[0], tea[1], tea[2]], standardize=policy.standardize_state)
        probs = policy_forward(policy, states)
        return sample_actions(probs, action_rng), states
    if config.strategy is Strategy.TEACHER_AVG:
        return np.full(batch, ALL_TEACHERS_ACTION, dtype=np.intp), None
    if config.strategy is Strategy.CONF_TEACHER:
        max_prob = np.stack([softmax(tea[m], axis=1).max(axis=1) for m in range(3)])
        chosen = max_prob.argmax(axis=0)
        return np.array([Action.from_subset([m]).index for m in chosen], dtype=np.intp), None
    if config.strategy is Strategy.BEST_TEACHER:
        ces = np.stack([_rows_ce(tea[m], tails) for m in range(3)])
        chosen = ces.argmin(axis=0)
        return np.array([Action.from_subset([m]).index for m in chosen], dtype=np.intp), None
    if config.strategy is Strategy.BEST_STRATEGY:
        ces = np.stack(
            [_rows_ce(tea[list(subset)].mean(axis=0), tails) for subset in _SUBSETS]
        )
        return ces.argmin(axis=0).astype(np.intp), None
    raise ValueError(f"unknown strategy {config.strategy}")


def train_student(
    dataset: Dataset,
    teachers: TeacherEnsemble,
    config: TrainConfig,
    filter_index: FilterIndex,
) -> StudentTrainResult:
    n = dataset.num_entities
    num_rels_aug = 2 * dataset.num_relations
    seeds = np.random.SeedSequence(config.seed).spawn(4)
    init_rng = np.random.default_rng(seeds[0])
    shuffle_rng = np.random.default_rng(seeds[1])
    action_rng = np.random.default_rng(seeds[2])

    student = init_free_model(n, num_rels_aug, config.dim, init_rng)
    policy = PolicyNet.init(3 * n, config.policy_hidden, init_rng, config.standardize_state)
    neighbor_index = build_neighbor_index(dataset.train_aug)
    stu_opt = OptimizerState(lr=config.learning_rate)
    pol_opt = OptimizerState(lr=config.policy_lr)
    reinforced = config.strategy is Strategy.REINFORCED

    loss_trace: list[EpochTrace] = []
    reward_curve: list[RewardPoint] = []
    strategy_stats: list[StrategyStats] = []
    epoch_mean_delta: list[float] = []
    val_mrr: list[float] = []
    best = student.copy()
    best_mrr, best_epoch = -1.0, 0
    step = 0
    train_aug = dataset.train_aug

    if config.cache_teacher_logits:
        cache_store = TeacherLogitCache.build(teachers, train_aug)
        get_teacher_logits = cache_store.lookup
    else:
        get_teacher_logits = lambda heads, rels: teacher_logits_batch(teachers, heads, rels)

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train_aug))
        sums = np.zeros(5)  # ce, rc, nekd, nnkd, kd_total weighted by batch size
        action_counts = np.zeros(NUM_ACTIONS)
        deltas_epoch: list[float] = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_aug[i] for i in order[start : start + config.batch_size]]
            heads = np.fromiter((t.head for t in batch), dtype=np.intp, count=len(batch))
            rels = np.fromiter((t.rel for t in batch), dtype=np.intp, count=len(batch))
            tails = np.fromiter((t.tail for t in batch), dtype=np.intp, count=len(batch))

            tea = get_teacher_logits(heads, rels)  # (3, B, n), frozen
            stu_scores, cache = model_scores(student, heads, rels)
            stu_ce = _rows_ce(stu_scores, tails)

            actions, states = choose_actions(tea, stu_ce, tails, config, policy, action_rng)
            combined = _combine_by_actions(tea, actions)

            tea_ce = _rows_ce(combined, tails)
            base_ce = _rows_ce(tea.mean(axis=0), tails)
            rewards = np.where(tea_ce < stu_ce, config.reward_pos, config.reward_neg)
            baselines = np.where(base_ce < stu_ce, config.reward_pos, config.reward_neg)
            advantages = rewards - baselines

            policy_batch = (
                PolicyBatch(states=states, actions=actions, advantages=advantages)
                if reinforced
                else None
            )
            result = student_total_loss(
                batch,
                student,
                combined,
                neighbor_index,
                policy if reinforced else None,
                policy_batch,
                config,
                precomputed=(stu_scores, cache),
            )
            grads = result.student_grads
            if config.l2_weight > 0.0:
                params = student.params()
                for name, g in grads.items():
                    g += 2.0 * config.l2_weight * params[name]
            optimizer_step(student.params(), grads, stu_opt)
            if reinforced and result.policy_grads is not None:
                optimizer_step(policy.params(), result.policy_grads, pol_opt)

            step += 1
            mean_delta = float(advantages.mean())
            reward_curve.append(RewardPoint(step=step, mean_delta=mean_delta))
            deltas_epoch.extend(advantages.tolist())
            action_counts += np.bincount(actions, minlength=NUM_ACTIONS)
            parts = result.parts
            sums += np.array([parts.ce, parts.rc, parts.nekd, parts.nnkd, parts.kd_total]) * len(batch)

        total = len(train_aug)
        loss_trace.append(
            EpochTrace(
                epoch=epoch,
                ce=sums[0] / total,
                rc=sums[1] / total,
                nekd=sums[2] / total,
                nnkd=sums[3] / total,
                kd_total=sums[4] / total,
            )
        )
        strategy_stats.append(StrategyStats(epoch=epoch, fractions=action_counts / total))
        epoch_mean_delta.append(float(np.mean(deltas_epoch)))

        if dataset.valid and (epoch % config.eval_every == 0 or epoch == config.epochs):
            scorer = lambda h, r: score_all(h, r, student.entities, student.relations)
            metrics = evaluate(scorer, dataset.valid, filter_index, dataset.num_relations)
            val_mrr.append(metrics.mrr)
            if metrics.mrr > best_mrr:
                best_mrr, best_epoch = metrics.mrr, epoch
                best = student.copy()
            log.info(
                "student epoch %d: ce=%.4f kd=%.4f delta=%.3f val_mrr=%.4f",
                epoch, loss_trace[-1].ce, loss_trace[-1].kd_total, epoch_mean_delta[-1], metrics.mrr,
            )

    if best_mrr < 0:  # no validation data: keep the final state
        best, best_mrr, best_epoch = student.copy(), float("nan"), config.epochs
    return StudentTrainResult(
        student=best,
        final_student=student,
        policy=policy,
        loss_trace=loss_trace,
        reward_curve=reward_curve,
        strategy_stats=strategy_stats,
        epoch_mean_delta=epoch_mean_delta,
        val_mrr=val_mrr,
        best_epoch=best_epoch,
        best_val_mrr=best_mrr,
    )


def student_scorer(student: KgeModel):
    def scorer(head_id: int, rel_id: int) -> np.ndarray:
        return score_all(head_id, rel_id, student.entities, student.relations)

    return scorer
