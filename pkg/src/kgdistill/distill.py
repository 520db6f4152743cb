"""Distillation losses: vanilla KL, target-decoupled, and neighbor-decoupled.

The neighbor-decoupled loss splits a temperature-scaled distribution into (1)
the binary pair [mean neighbor probability, 1 - mean neighbor probability] and
(2) the renormalized distribution over non-neighbors, and sums an
alpha-weighted KL on the former with a beta-weighted KL on the latter.  With a
single neighbor it coincides with the classic target-decoupled loss.  All
gradients are taken with respect to the *raw* student logits and are exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backbone import (
    KgeModel,
    NumericalError,
    ScoreCache,
    log_softmax,
    model_backward,
    model_scores,
)
from .config import KdVariant, TrainConfig
from .kg import NeighborIndex, Triple
from .policy import PolicyNet, rc_loss_and_grads

_NEG_INF = -np.inf


class DegenerateNeighborsError(ValueError):
    """The neighbor set covers every entity, leaving no non-neighbor mass."""


@dataclass
class ScaledDistribution:
    """Temperature-scaled softmax of a logit vector (log-probs kept for stability)."""

    probs: np.ndarray
    log_probs: np.ndarray
    tau: float


def temp_scale(logits: np.ndarray, tau: float) -> ScaledDistribution:
    if tau <= 0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    logits = np.asarray(logits, dtype=np.float64)
    logp = log_softmax(logits / tau)
    return ScaledDistribution(probs=np.exp(logp), log_probs=logp, tau=tau)


def _kl_term(p: np.ndarray | float, log_p, log_q) -> np.ndarray | float:
    """p * (log_p - log_q) with the 0*log0 = 0 convention."""
    return np.where(np.asarray(p) > 0.0, np.asarray(p) * (np.asarray(log_p) - np.asarray(log_q)), 0.0)


def vanilla_kd(tea: ScaledDistribution, stu: ScaledDistribution) -> tuple[float, np.ndarray]:
    """KL(teacher || student) and its gradient w.r.t. raw student logits."""
    if tea.probs.shape != stu.probs.shape:
        raise ValueError("teacher/student distributions must have equal length")
    if tea.tau != stu.tau:
        raise ValueError("teacher/student must share the temperature")
    loss = float(np.sum(_kl_term(tea.probs, tea.log_probs, stu.log_probs)))
    grad = (stu.probs - tea.probs) / stu.tau
    return loss, grad


@dataclass
class DecoupledView:
    """A scaled distribution split at a neighbor set.

    ``neighbor_binary`` is [mean neighbor probability, complement];
    ``non_neighbor`` is the renormalized probability vector over the
    complement of the neighbor set, in entity order.
    """

    neighbor_binary: np.ndarray  # (2,)
    non_neighbor: np.ndarray  # (n - |N|,)
    neighbor_mask: np.ndarray  # (n,) bool
    probs: np.ndarray  # full scaled distribution
    log_probs: np.ndarray
    tau: float


def decouple(dist: ScaledDistribution, neighbors: Sequence[int]) -> DecoupledView:
    n = dist.probs.shape[0]
    idx = np.asarray(sorted(set(int(e) for e in neighbors)), dtype=np.intp)
    if idx.size == 0:
        raise ValueError("neighbor set must be non-empty")
    if idx.size >= n:
        raise DegenerateNeighborsError("neighbor set covers all entities")
    if idx[0] < 0 or idx[-1] >= n:
        raise IndexError("neighbor id out of range")
    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    p_bar = float(dist.probs[mask].mean())
    rest = dist.probs[~mask]
    rest_mass = float(rest.sum())
    non_neighbor = rest / rest_mass if rest_mass > 0 else np.full(rest.shape, 1.0 / rest.size)
    return DecoupledView(
        neighbor_binary=np.array([p_bar, 1.0 - p_bar]),
        non_neighbor=non_neighbor,
        neighbor_mask=mask,
        probs=dist.probs,
        log_probs=dist.log_probs,
        tau=dist.tau,
    )


def _binary_kl(pt: float, ps: float) -> float:
    eps = 1e-300
    term1 = pt * (np.log(max(pt, eps)) - np.log(max(ps, eps))) if pt > 0 else 0.0
    term2 = (1 - pt) * (np.log(max(1 - pt, eps)) - np.log(max(1 - ps, eps))) if pt < 1 else 0.0
    return float(term1 + term2)


def ndkd_loss(
    tea_view: DecoupledView, stu_view: DecoupledView, alpha: float, beta: float
) -> tuple[float, np.ndarray, tuple[float, float]]:
    """alpha * KL(neighbor binaries) + beta * KL(non-neighbor distributions).

    Returns (loss, gradient w.r.t. raw student logits, (nekd, nnkd)) where the
    component values are unweighted.
    """
    if not np.array_equal(tea_view.neighbor_mask, stu_view.neighbor_mask):
        raise ValueError("views must be built from the same neighbor set")
    if tea_view.tau != stu_view.tau:
        raise ValueError("views must share the temperature")
    mask = stu_view.neighbor_mask
    tau = stu_view.tau
    size = int(mask.sum())

    pt_bar = float(tea_view.neighbor_binary[0])
    ps_bar = float(stu_view.neighbor_binary[0])
    nekd = _binary_kl(pt_bar, ps_bar)
    nnkd = float(
        np.sum(
            _kl_term(
                tea_view.non_neighbor,
                np.log(np.maximum(tea_view.non_neighbor, 1e-300)),
                np.log(np.maximum(stu_view.non_neighbor, 1e-300)),
            )
        )
    )

    ps = stu_view.probs
    eps = 1e-300
    g = (1.0 - pt_bar) / max(1.0 - ps_bar, eps) - pt_bar / max(ps_bar, eps)
    grad_nekd = (g / tau) * ps * (mask / size - ps_bar)
    grad_nnkd = np.zeros_like(ps)
    grad_nnkd[~mask] = (stu_view.non_neighbor - tea_view.non_neighbor) / tau

    loss = alpha * nekd + beta * nnkd
    return loss, alpha * grad_nekd + beta * grad_nnkd, (nekd, nnkd)


# --- batched internals used by the training loop ------------------------------


def batch_vanilla_kd(
    tea_logits: np.ndarray, stu_logits: np.ndarray, tau: float
) -> tuple[float, np.ndarray]:
    """Mean KL over batch rows; gradient includes the 1/B factor."""
    log_pt = log_softmax(tea_logits / tau, axis=1)
    log_ps = log_softmax(stu_logits / tau, axis=1)
    pt, ps = np.exp(log_pt), np.exp(log_ps)
    loss = float(np.sum(_kl_term(pt, log_pt, log_ps)) / pt.shape[0])
    grad = (ps - pt) / (tau * pt.shape[0])
    return loss, grad


def batch_decoupled_kd(
    tea_logits: np.ndarray,
    stu_logits: np.ndarray,
    neighbor_mask: np.ndarray,
    tau: float,
    alpha: float,
    beta: float,
) -> tuple[float, float, np.ndarray]:
    """Row-wise neighbor-decoupled KD, averaged over the batch.

    Returns (mean nekd, mean nnkd, gradient w.r.t. raw student logits with the
    alpha/beta weights and the 1/B factor folded in).
    """
    batch, n = stu_logits.shape
    counts = neighbor_mask.sum(axis=1)
    if np.any(counts == 0):
        raise ValueError("every row needs a non-empty neighbor set")
    if np.any(counts == n):
        raise DegenerateNeighborsError("neighbor set covers all entities")
    inv = ~neighbor_mask

    log_pt = log_softmax(tea_logits / tau, axis=1)
    log_ps = log_softmax(stu_logits / tau, axis=1)
    pt, ps = np.exp(log_pt), np.exp(log_ps)

    pt_bar = (pt * neighbor_mask).sum(axis=1) / counts
    ps_bar = (ps * neighbor_mask).sum(axis=1) / counts
    eps = 1e-300
    nekd_rows = _kl_term(pt_bar, np.log(np.maximum(pt_bar, eps)), np.log(np.maximum(ps_bar, eps)))
    nekd_rows = nekd_rows + _kl_term(
        1.0 - pt_bar, np.log(np.maximum(1.0 - pt_bar, eps)), np.log(np.maximum(1.0 - ps_bar, eps))
    )

    log_mt = _masked_logsumexp(log_pt, inv)
    log_ms = _masked_logsumexp(log_ps, inv)
    pt_tilde = np.where(inv, np.exp(log_pt - log_mt[:, None]), 0.0)
    ps_tilde = np.where(inv, np.exp(log_ps - log_ms[:, None]), 0.0)
    nnkd_rows = np.sum(
        _kl_term(pt_tilde, log_pt - log_mt[:, None], log_ps - log_ms[:, None]) * inv, axis=1
    )

    g = (1.0 - pt_bar) / np.maximum(1.0 - ps_bar, eps) - pt_bar / np.maximum(ps_bar, eps)
    grad_nekd = (g / tau)[:, None] * ps * (neighbor_mask / counts[:, None] - ps_bar[:, None])
    grad_nnkd = (ps_tilde - pt_tilde) / tau

    grad = (alpha * grad_nekd + beta * grad_nnkd) / batch
    return float(nekd_rows.mean()), float(nnkd_rows.mean()), grad


def _masked_logsumexp(log_p: np.ndarray, mask: np.ndarray) -> np.ndarray:
    vals = np.where(mask, log_p, _NEG_INF)
    top = vals.max(axis=1)
    return top + np.log(np.sum(np.exp(vals - top[:, None]), axis=1))


def neighbor_mask_for_batch(
    batch: Sequence[Triple], neighbor_index: NeighborIndex, num_entities: int
) -> np.ndarray:
    mask = np.zeros((len(batch), num_entities), dtype=bool)
    empty: frozenset[int] = frozenset()
    for i, (h, r, t) in enumerate(batch):
        neighbors = neighbor_index.get((h, r), empty)
        if neighbors:
            mask[i, list(neighbors)] = True
        mask[i, t] = True  # the target is always a true answer of its own query
    return mask


# --- combined student objective ------------------------------------------------


@dataclass
class PolicyBatch:
    states: np.ndarray  # (B, 3n)
    actions: np.ndarray  # (B,)
    advantages: np.ndarray  # (B,)


@dataclass
class LossParts:
    ce: float
    rc: float
    nekd: float
    nnkd: float
    kd_total: float

    @property
    def total(self) -> float:
        return self.ce + self.rc + self.kd_total  # kd_total already gamma-weighted


@dataclass
class StudentLossResult:
    parts: LossParts
    student_grads: dict[str, np.ndarray]
    policy_grads: dict[str, np.ndarray] | None


def student_total_loss(
    batch: Sequence[Triple],
    student: KgeModel,
    combined_teacher_logits: np.ndarray | None,
    neighbor_index: NeighborIndex,
    policy: PolicyNet | None,
    policy_batch: PolicyBatch | None,
    config: TrainConfig,
    precomputed: tuple[np.ndarray, ScoreCache] | None = None,
) -> StudentLossResult:
    """Hard-label CE + REINFORCE term + gamma-weighted distillation, with all gradients.

    Teacher logits are constants (no gradient); the REINFORCE term touches only
    the policy parameters and the CE/distillation terms only the student.
    """
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    heads = np.fromiter((t.head for t in batch), dtype=np.intp, count=len(batch))
    tails = np.fromiter((t.tail for t in batch), dtype=np.intp, count=len(batch))
    if precomputed is not None:
        stu_scores, cache = precomputed
    else:
        rels = np.fromiter((t.rel for t in batch), dtype=np.intp, count=len(batch))
        stu_scores, cache = model_scores(student, heads, rels)

    rows = np.arange(len(batch))
    logp = log_softmax(stu_scores, axis=1)
    nll = -logp[rows, tails]
    if not np.all(np.isfinite(nll)):
        bad = int(np.flatnonzero(~np.isfinite(nll))[0])
        raise NumericalError("non-finite student cross-entropy", Triple(*batch[bad]))
    loss_ce = float(nll.mean())
    d_scores = np.exp(logp)
    d_scores[rows, tails] -= 1.0
    d_scores /= len(batch)

    loss_rc = 0.0
    policy_grads = None
    if policy is not None and policy_batch is not None:
        loss_rc, policy_grads = rc_loss_and_grads(
            policy, policy_batch.states, policy_batch.actions, policy_batch.advantages
        )

    nekd = nnkd = kd_total = 0.0
    if config.kd_variant is not KdVariant.NONE and config.gamma > 0.0:
        if combined_teacher_logits is None:
            raise ValueError("combined teacher logits required for distillation")
        scale = config.tau**2 if config.temperature_sq_scale else 1.0
        if config.kd_variant is KdVariant.VANILLA:
            kd, d_kd = batch_vanilla_kd(combined_teacher_logits, stu_scores, config.tau)
            kd_total = kd * scale
        else:
            if config.kd_variant is KdVariant.DKD:
                mask = np.zeros_like(d_scores, dtype=bool)
                mask[rows, tails] = True
            else:
                mask = neighbor_mask_for_batch(batch, neighbor_index, stu_scores.shape[1])
            alpha = config.alpha if config.kd_variant is not KdVariant.NNKD_ONLY else 0.0
            beta = config.beta if config.kd_variant is not KdVariant.NEKD_ONLY else 0.0
            nekd, nnkd, d_kd = batch_decoupled_kd(
                combined_teacher_logits, stu_scores, mask, config.tau, alpha, beta
            )
            kd_total = (alpha * nekd + beta * nnkd) * scale
        d_scores = d_scores + (config.gamma * scale) * d_kd

    student_grads = model_backward(student, cache, d_scores)
    parts = LossParts(ce=loss_ce, rc=loss_rc, nekd=nekd, nnkd=nnkd, kd_total=config.gamma * kd_total)
    return StudentLossResult(parts=parts, student_grads=student_grads, policy_grads=policy_grads)
