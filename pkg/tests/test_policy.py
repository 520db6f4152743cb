"""Action encoding, policy forward/backward, rewards, and REINFORCE gradients."""
from __future__ import annotations

import numpy as np
import pytest

from conftest import assert_grads_close, finite_difference_grads
from kgdistill.backbone import OptimizerState, optimizer_step, softmax
from kgdistill.config import TrainConfig
from kgdistill.policy import (
    NUM_ACTIONS,
    Action,
    PolicyNet,
    aggregate_teachers,
    baseline_reward,
    build_state,
    compute_reward,
    per_triple_ce,
    policy_forward,
    rc_loss_and_grads,
    sample_action,
    sample_actions,
)


class TestActionEncoding:
    def test_bijection(self):
        seen = set()
        for i in range(NUM_ACTIONS):
            subset = Action(i).subset
            assert subset, "subset never empty"
            assert Action.from_subset(subset).index == i
            seen.add(subset)
        assert len(seen) == NUM_ACTIONS

    def test_known_encodings(self):
        assert Action(3).subset == (2,)  # bitmask 4 -> textual only
        assert Action(6).subset == (0, 1, 2)  # bitmask 7 -> all three
        assert Action(0).subset == (0,)  # bitmask 1 -> structural

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            Action(7)
        with pytest.raises(ValueError):
            Action.from_subset([])


class TestBuildState:
    def test_concatenation_order(self):
        vecs = [np.array([1.0, 2.0]), np.array([3.0, 4.0]), np.array([5.0, 6.0])]
        np.testing.assert_array_equal(build_state(vecs, standardize=False), [1, 2, 3, 4, 5, 6])

    def test_zero_vectors(self):
        vecs = [np.zeros(3)] * 3
        np.testing.assert_array_equal(build_state(vecs, standardize=False), np.zeros(9))
        # standardization guards the zero-variance case
        assert np.all(np.isfinite(build_state(vecs, standardize=True)))

    def test_modality_order_matters(self):
        vecs = [np.array([1.0]), np.array([2.0]), np.array([3.0])]
        a = build_state(vecs, standardize=False)
        b = build_state(vecs[::-1], standardize=False)
        assert not np.array_equal(a, b)

    def test_standardization_per_modality(self):
        vecs = [np.array([1.0, 3.0]), np.array([10.0, 20.0]), np.array([-1.0, 1.0])]
        s = build_state(vecs, standardize=True)
        for chunk in s.reshape(3, 2):
            assert chunk.mean() == pytest.approx(0.0, abs=1e-12)
            assert chunk.std() == pytest.approx(1.0, rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            build_state([np.zeros(2), np.zeros(3), np.zeros(2)])


class TestPolicyForward:
    def test_zero_weights_give_uniform(self):
        policy = PolicyNet(np.zeros((4, 6)), np.zeros(4), np.zeros((NUM_ACTIONS, 4)), np.zeros(NUM_ACTIONS))
        probs = policy_forward(policy, np.ones(6))
        np.testing.assert_allclose(probs, np.full(NUM_ACTIONS, 1 / NUM_ACTIONS), atol=1e-12)

    def test_logit_shift_invariance(self, rng):
        policy = PolicyNet.init(6, 5, rng)
        state = rng.normal(size=6)
        base = policy_forward(policy, state)
        policy.b2 += 3.7
        np.testing.assert_allclose(policy_forward(policy, state), base, atol=1e-12)

    def test_matches_hand_rolled_oracle(self, rng):
        policy = PolicyNet.init(8, 5, rng)
        state = rng.normal(size=8)
        probs = policy_forward(policy, state)
        hidden = np.maximum(policy.w1 @ state + policy.b1, 0.0)
        logits = policy.w2 @ hidden + policy.b2
        exp = np.exp(logits - logits.max())
        np.testing.assert_allclose(probs, exp / exp.sum(), atol=1e-10)
        assert np.all(probs > 0)
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)

    def test_dimension_mismatch(self, rng):
        policy = PolicyNet.init(8, 4, rng)
        with pytest.raises(ValueError):
            policy_forward(policy, np.zeros(5))


class TestSampling:
    def test_degenerate_categorical(self, rng):
        probs = np.zeros(NUM_ACTIONS)
        probs[3] = 1.0
        for _ in range(20):
            assert sample_action(probs, rng).index == 3

    def test_uniform_frequencies(self):
        rng = np.random.default_rng(2024)
        probs = np.full((70_000, NUM_ACTIONS), 1 / NUM_ACTIONS)
        draws = sample_actions(probs, rng)
        freqs = np.bincount(draws, minlength=NUM_ACTIONS) / len(draws)
        np.testing.assert_allclose(freqs, 1 / NUM_ACTIONS, atol=0.01)

    def test_deterministic_given_rng_state(self):
        probs = softmax(np.arange(NUM_ACTIONS, dtype=float))
        a = sample_actions(np.tile(probs, (100, 1)), np.random.default_rng(9))
        b = sample_actions(np.tile(probs, (100, 1)), np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)


class TestAggregation:
    def test_singleton_identity(self, rng):
        vecs = [rng.normal(size=5) for _ in range(3)]
        np.testing.assert_array_equal(aggregate_teachers(vecs, [1]), vecs[1])

    def test_all_equal(self):
        v = np.array([1.0, -2.0, 3.0])
        np.testing.assert_allclose(aggregate_teachers([v, v, v], [0, 1, 2]), v, atol=1e-15)

    def test_mean(self):
        vecs = [np.array([2.0, 0.0]), np.array([0.0, 2.0]), np.zeros(2)]
        np.testing.assert_array_equal(aggregate_teachers(vecs, [0, 1]), [1.0, 1.0])

    def test_empty_subset_rejected(self):
        with pytest.raises(ValueError):
            aggregate_teachers([np.zeros(2)] * 3, [])


class TestRewards:
    def test_truth_table(self):
        cfg = TrainConfig()
        assert compute_reward(0.5, 0.7, cfg) == 1.0
        assert compute_reward(0.9, 0.1, cfg) == -10.0
        assert compute_reward(0.3, 0.3, cfg) == -10.0  # tie -> strict inequality fails
        assert compute_reward(0.0, 1e-12, cfg) == 1.0

    def test_advantage_algebra_exhaustive(self):
        cfg = TrainConfig()
        deltas = set()
        for tea_beats in (True, False):
            for base_beats in (True, False):
                r = cfg.reward_pos if tea_beats else cfg.reward_neg
                rb = cfg.reward_pos if base_beats else cfg.reward_neg
                deltas.add(r - rb)
        assert deltas == {0.0, 11.0, -11.0}

    def test_baseline_uses_all_teacher_mean(self, rng):
        cfg = TrainConfig()
        vecs = [rng.normal(size=6) for _ in range(3)]
        target = 2
        stu_ce = 1.0
        mean_ce = per_triple_ce(np.mean(vecs, axis=0), target)
        expected = cfg.reward_pos if mean_ce < stu_ce else cfg.reward_neg
        assert baseline_reward(vecs, target, stu_ce, cfg) == expected

    def test_delta_scenarios(self, rng):
        cfg = TrainConfig()
        # both beat the student -> delta 0; subset wins where mean fails -> +11
        assert (cfg.reward_pos - cfg.reward_pos) == 0.0
        assert (cfg.reward_pos - cfg.reward_neg) == 11.0
        assert (cfg.reward_neg - cfg.reward_neg) == 0.0


class TestRcLoss:
    def test_zero_advantage_zero_loss_and_grads(self, rng):
        policy = PolicyNet.init(6, 4, rng)
        states = rng.normal(size=(5, 6))
        actions = np.array([0, 1, 2, 3, 4])
        loss, grads = rc_loss_and_grads(policy, states, actions, np.zeros(5))
        assert loss == 0.0
        for g in grads.values():
            assert np.all(g == 0.0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        policy = PolicyNet.init(9, 6, rng)
        states = rng.normal(size=(4, 9))
        actions = np.array([1, 6, 3, 0])
        advantages = np.array([11.0, -11.0, 0.0, 11.0])
        _, grads = rc_loss_and_grads(policy, states, actions, advantages)
        numeric = finite_difference_grads(
            lambda: rc_loss_and_grads(policy, states, actions, advantages)[0], policy.params()
        )
        assert_grads_close(grads, numeric, rel_tol=1e-4)

    def test_positive_advantage_increases_action_probability(self, rng):
        policy = PolicyNet.init(6, 4, rng)
        state = rng.normal(size=(1, 6))
        action = np.array([2])
        before = policy_forward(policy, state[0])[2]
        _, grads = rc_loss_and_grads(policy, state, action, np.array([11.0]))
        for name, p in policy.params().items():
            p -= 1e-3 * grads[name]
        after = policy_forward(policy, state[0])[2]
        assert after > before

    def test_duplicated_entries_leave_mean_unchanged(self, rng):
        policy = PolicyNet.init(5, 3, rng)
        states = rng.normal(size=(3, 5))
        actions = np.array([0, 2, 5])
        adv = np.array([11.0, -11.0, 0.0])
        loss_once, _ = rc_loss_and_grads(policy, states, actions, adv)
        loss_twice, _ = rc_loss_and_grads(
            policy, np.vstack([states, states]), np.tile(actions, 2), np.tile(adv, 2)
        )
        assert loss_once == pytest.approx(loss_twice, rel=1e-12)


class TestBanditSmoke:
    def test_policy_concentrates_on_rewarded_action(self):
        """One subset always wins (+11), the rest lose (-11): the policy finds it."""
        rng = np.random.default_rng(5)
        policy = PolicyNet.init(12, 16, rng)
        state_rng = np.random.default_rng(6)
        opt = OptimizerState(lr=1e-3)
        good = 4
        for _ in range(2000):
            states = state_rng.normal(size=(8, 12))
            probs = policy_forward(policy, states)
            actions = sample_actions(probs, rng)
            adv = np.where(actions == good, 11.0, -11.0)
            _, grads = rc_loss_and_grads(policy, states, actions, adv)
            optimizer_step(policy.params(), grads, opt)
        check = policy_forward(policy, state_rng.normal(size=(64, 12)))
        assert check[:, good].mean() > 0.9
