"""Teacher-combination agent: 7-way subset policy trained by REINFORCE.

States concatenate the three per-modality score vectors; actions index the
non-empty subsets of {structural, visual, textual} via bitmask = index + 1
(bit 0 = structural, bit 1 = visual, bit 2 = textual).  Rewards compare the
aggregated teachers' per-triple cross-entropy against the student's; the
baseline is the reward of the all-teacher mean, so the advantage is 0 or
+/-(reward_pos - reward_neg).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backbone import log_softmax, softmax
from .config import TrainConfig

NUM_MODALITIES = 3
NUM_ACTIONS = 2**NUM_MODALITIES - 1  # no empty subset


@dataclass(frozen=True)
class Action:
    index: int

    def __post_init__(self) -> None:
        if not 0 <= self.index < NUM_ACTIONS:
            raise ValueError(f"action index {self.index} out of [0, {NUM_ACTIONS})")

    @property
    def subset(self) -> tuple[int, ...]:
        mask = self.index + 1
        return tuple(m for m in range(NUM_MODALITIES) if mask & (1 << m))

    @staticmethod
    def from_subset(modalities: Sequence[int]) -> "Action":
        mask = 0
        for m in modalities:
            mask |= 1 << m
        if mask == 0:
            raise ValueError("subset must be non-empty")
        return Action(mask - 1)


@dataclass
class RewardRecord:
    reward: float
    baseline: float
    action: Action
    tea_ce: float
    stu_ce: float

    @property
    def advantage(self) -> float:
        return self.reward - self.baseline


@dataclass
class PolicyNet:
    """One-hidden-layer ReLU perceptron over concatenated teacher scores."""

    w1: np.ndarray  # (hidden, in_dim)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (NUM_ACTIONS, hidden)
    b2: np.ndarray  # (NUM_ACTIONS,)
    standardize_state: bool = True

    @classmethod
    def init(
        cls, in_dim: int, hidden: int, rng: np.random.Generator, standardize_state: bool = True
    ) -> "PolicyNet":
        lim1 = np.sqrt(6.0 / (in_dim + hidden))
        lim2 = np.sqrt(6.0 / (hidden + NUM_ACTIONS))
        return cls(
            w1=rng.uniform(-lim1, lim1, size=(hidden, in_dim)),
            b1=np.zeros(hidden),
            w2=rng.uniform(-lim2, lim2, size=(NUM_ACTIONS, hidden)),
            b2=np.zeros(NUM_ACTIONS),
            standardize_state=standardize_state,
        )

    @property
    def in_dim(self) -> int:
        return int(self.w1.shape[1])

    @property
    def hidden(self) -> int:
        return int(self.w1.shape[0])

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def copy(self) -> "PolicyNet":
        return PolicyNet(
            self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(), self.standardize_state
        )


def build_state(teacher_vectors: Sequence[np.ndarray], standardize: bool = True) -> np.ndarray:
    """Concatenate per-modality score vectors in fixed modality order."""
    if len(teacher_vectors) != NUM_MODALITIES:
        raise ValueError(f"expected {NUM_MODALITIES} vectors, got {len(teacher_vectors)}")
    length = teacher_vectors[0].shape[-1]
    for v in teacher_vectors:
        if v.shape[-1] != length:
            raise ValueError("teacher vectors must have equal length")
    parts = []
    for v in teacher_vectors:
        v = np.asarray(v, dtype=np.float64)
        if standardize:
            std = v.std(axis=-1, keepdims=True)
            v = (v - v.mean(axis=-1, keepdims=True)) / np.maximum(std, 1e-12)
        parts.append(v)
    return np.concatenate(parts, axis=-1)


def policy_forward(policy: PolicyNet, states: np.ndarray) -> np.ndarray:
    """softmax(W2 relu(W1 s + b1) + b2) for a single state or a batch of rows."""
    states = np.asarray(states, dtype=np.float64)
    if states.shape[-1] != policy.in_dim:
        raise ValueError(f"state width {states.shape[-1]} != policy input {policy.in_dim}")
    pre = states @ policy.w1.T + policy.b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ policy.w2.T + policy.b2
    return softmax(logits, axis=-1)


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> Action:
    return Action(int(sample_actions(probs[None, :], rng)[0]))


def sample_actions(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorized categorical draws, one per row, by inverse CDF."""
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])
    idx = (cum < u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def aggregate_teachers(teacher_vectors: Sequence[np.ndarray], subset: Sequence[int]) -> np.ndarray:
    """Arithmetic mean of the selected modality score vectors."""
    if len(subset) == 0:
        raise ValueError("teacher subset must be non-empty")
    return np.mean([teacher_vectors[m] for m in subset], axis=0)


def per_triple_ce(score_vector: np.ndarray, target: int) -> float:
    """Plain (temperature-free) cross-entropy of the target under the vector."""
    return float(-log_softmax(np.asarray(score_vector, dtype=np.float64))[target])


def compute_reward(tea_ce: float, stu_ce: float, config: TrainConfig) -> float:
    return config.reward_pos if tea_ce < stu_ce else config.reward_neg


def baseline_reward(
    teacher_vectors: Sequence[np.ndarray], target: int, stu_ce: float, config: TrainConfig
) -> float:
    """Reward the all-teacher mean aggregation would receive."""
    mean_ce = per_triple_ce(aggregate_teachers(teacher_vectors, range(NUM_MODALITIES)), target)
    return compute_reward(mean_ce, stu_ce, config)


def rc_loss_and_grads(
    policy: PolicyNet,
    states: np.ndarray,
    actions: np.ndarray,
    advantages: np.ndarray,
) -> tuple[float, dict[str, np.ndarray]]:
    """REINFORCE loss -mean(advantage * log pi(a|s)) with exact gradients.

    Advantages are constants: no gradient flows through the rewards.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.asarray(actions, dtype=np.intp)
    advantages = np.asarray(advantages, dtype=np.float64)
    batch = states.shape[0]
    if batch == 0:
        raise ValueError("batch must be non-empty")

    pre = states @ policy.w1.T + policy.b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ policy.w2.T + policy.b2
    logp = log_softmax(logits, axis=1)
    picked = logp[np.arange(batch), actions]
    loss = float(-(advantages * picked).mean())
    if not np.isfinite(loss):
        raise ArithmeticError("non-finite policy loss")

    d_logits = np.exp(logp)  # softmax probabilities
    onehot_scale = np.zeros_like(d_logits)
    onehot_scale[np.arange(batch), actions] = 1.0
    d_logits = (advantages / batch)[:, None] * (d_logits - onehot_scale)

    d_w2 = d_logits.T @ hidden
    d_b2 = d_logits.sum(axis=0)
    d_hidden = d_logits @ policy.w2
    d_pre = d_hidden * (pre > 0.0)
    d_w1 = d_pre.T @ states
    d_b1 = d_pre.sum(axis=0)
    return loss, {"w1": d_w1, "b1": d_b1, "w2": d_w2, "b2": d_b2}
