"""Temperature scaling and the KD loss family vs independent oracles."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import assert_grads_close, finite_difference_grads, make_dataset
from kgdistill.backbone import init_free_model, model_scores, softmax
from kgdistill.config import KdVariant, Strategy, TrainConfig
from kgdistill.distill import (
    DegenerateNeighborsError,
    PolicyBatch,
    batch_decoupled_kd,
    batch_vanilla_kd,
    decouple,
    ndkd_loss,
    neighbor_mask_for_batch,
    student_total_loss,
    temp_scale,
    vanilla_kd,
)
from kgdistill.kg import Triple, build_neighbor_index
from kgdistill.policy import PolicyNet


def oracle_decoupled(tea_logits, stu_logits, neighbors, tau, alpha, beta):
    """Independent transcription of the neighbor-decoupled objective."""
    pt = softmax(np.asarray(tea_logits) / tau)
    ps = softmax(np.asarray(stu_logits) / tau)
    n_idx = sorted(neighbors)
    rest = [e for e in range(len(pt)) if e not in neighbors]
    pt_bar, ps_bar = pt[n_idx].mean(), ps[n_idx].mean()
    bt = np.array([pt_bar, 1 - pt_bar])
    bs = np.array([ps_bar, 1 - ps_bar])
    nekd = float(np.sum(bt * np.log(bt / bs)))
    pt_tilde = pt[rest] / pt[rest].sum()
    ps_tilde = ps[rest] / ps[rest].sum()
    nnkd = float(np.sum(pt_tilde * np.log(pt_tilde / ps_tilde)))
    return alpha * nekd + beta * nnkd, nekd, nnkd


class TestTempScale:
    def test_large_temperature_is_uniform(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=9) * 5
        dist = temp_scale(logits, 1e6)
        np.testing.assert_allclose(dist.probs, 1 / 9, atol=1e-5)

    def test_tau_one_is_plain_softmax(self, rng):
        logits = rng.normal(size=6)
        np.testing.assert_allclose(temp_scale(logits, 1.0).probs, softmax(logits), atol=1e-15)

    def test_hand_value(self):
        dist = temp_scale(np.array([2.0, 0.0]), 2.0)
        e = np.e
        np.testing.assert_allclose(dist.probs, [e / (e + 1), 1 / (e + 1)], atol=1e-12)

    def test_invalid_temperature(self):
        with pytest.raises(ValueError):
            temp_scale(np.zeros(3), 0.0)

    @given(
        arrays(np.float64, 8, elements=st.floats(-20, 20, allow_nan=False)),
        st.floats(0.5, 32.0),
        st.floats(1.05, 4.0),
    )
    def test_entropy_nondecreasing_in_temperature(self, logits, tau, factor):
        def entropy(dist):
            p = np.maximum(dist.probs, 1e-300)
            return float(-(p * np.log(p)).sum())

        assert entropy(temp_scale(logits, tau * factor)) >= entropy(temp_scale(logits, tau)) - 1e-9


class TestVanillaKd:
    def test_identical_distributions_zero(self, rng):
        logits = rng.normal(size=7)
        d = temp_scale(logits, 2.0)
        loss, grad = vanilla_kd(d, d)
        assert loss == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    @given(
        arrays(np.float64, 6, elements=st.floats(-10, 10, allow_nan=False)),
        arrays(np.float64, 6, elements=st.floats(-10, 10, allow_nan=False)),
    )
    def test_gibbs_nonnegativity(self, a, b):
        loss, _ = vanilla_kd(temp_scale(a, 4.0), temp_scale(b, 4.0))
        assert loss >= -1e-12

    def test_hand_value(self):
        # scalar oracle: 0.7 ln 1.4 + 0.3 ln 0.6 = 0.0822828...
        tea_logits = np.log(np.array([0.7, 0.3]))
        stu_logits = np.log(np.array([0.5, 0.5]))
        loss, _ = vanilla_kd(temp_scale(tea_logits, 1.0), temp_scale(stu_logits, 1.0))
        expected = 0.7 * np.log(1.4) + 0.3 * np.log(0.6)
        assert loss == pytest.approx(expected, abs=1e-12)
        assert loss == pytest.approx(0.08228, abs=5e-6)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        tea = rng.normal(size=6)
        stu = {"z": rng.normal(size=6)}
        tau = 4.0
        _, grad = vanilla_kd(temp_scale(tea, tau), temp_scale(stu["z"], tau))
        numeric = finite_difference_grads(
            lambda: vanilla_kd(temp_scale(tea, tau), temp_scale(stu["z"], tau))[0], stu
        )
        assert_grads_close({"z": grad}, numeric, rel_tol=1e-4)

    def test_temperature_mismatch_rejected(self, rng):
        with pytest.raises(ValueError):
            vanilla_kd(temp_scale(rng.normal(size=3), 2.0), temp_scale(rng.normal(size=3), 4.0))


class TestDecouple:
    def test_hand_example(self):
        dist = temp_scale(np.log(np.array([0.5, 0.3, 0.1, 0.1])), 1.0)
        view = decouple(dist, {0, 1})
        np.testing.assert_allclose(view.neighbor_binary, [0.4, 0.6], atol=1e-12)
        np.testing.assert_allclose(view.non_neighbor, [0.5, 0.5], atol=1e-12)

    def test_singleton_reduces_to_target_pair(self, rng):
        dist = temp_scale(rng.normal(size=5), 4.0)
        view = decouple(dist, {3})
        np.testing.assert_allclose(
            view.neighbor_binary, [dist.probs[3], 1 - dist.probs[3]], atol=1e-12
        )

    def test_uniform_distribution(self):
        dist = temp_scale(np.zeros(4), 1.0)
        view = decouple(dist, {1, 2})
        np.testing.assert_allclose(view.neighbor_binary, [0.25, 0.75], atol=1e-12)
        np.testing.assert_allclose(view.non_neighbor, [0.5, 0.5], atol=1e-12)

    def test_degenerate_neighbors(self, rng):
        dist = temp_scale(rng.normal(size=4), 1.0)
        with pytest.raises(DegenerateNeighborsError):
            decouple(dist, {0, 1, 2, 3})
        with pytest.raises(ValueError):
            decouple(dist, set())

    @given(
        arrays(np.float64, 8, elements=st.floats(-8, 8, allow_nan=False)),
        st.sets(st.integers(0, 7), min_size=1, max_size=7),
    )
    def test_mass_conservation(self, logits, neighbors):
        dist = temp_scale(logits, 4.0)
        view = decouple(dist, neighbors)
        neighbor_mass = view.neighbor_binary[0] * len(neighbors)
        rest_mass = dist.probs[~view.neighbor_mask].sum()
        assert neighbor_mass + rest_mass == pytest.approx(1.0, abs=1e-9)
        assert view.non_neighbor.sum() == pytest.approx(1.0, abs=1e-9)


class TestNdkdLoss:
    def test_identical_views_zero(self, rng):
        dist = temp_scale(rng.normal(size=6), 4.0)
        view = decouple(dist, {1, 4})
        loss, grad, _ = ndkd_loss(view, view, 1.0, 1.0)
        assert loss == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_alpha_only_singleton_is_binary_kl(self, rng):
        tea = temp_scale(rng.normal(size=5), 4.0)
        stu = temp_scale(rng.normal(size=5), 4.0)
        t = 2
        loss, _, (nekd, _) = ndkd_loss(decouple(tea, {t}), decouple(stu, {t}), 1.0, 0.0)
        pt, ps = tea.probs[t], stu.probs[t]
        expected = pt * np.log(pt / ps) + (1 - pt) * np.log((1 - pt) / (1 - ps))
        assert loss == pytest.approx(expected, abs=1e-12)
        assert nekd == pytest.approx(expected, abs=1e-12)

    def test_matches_literal_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            tea_logits = rng.normal(size=6) * 2
            stu_logits = rng.normal(size=6) * 2
            neighbors = {1, 4}
            tea = decouple(temp_scale(tea_logits, 4.0), neighbors)
            stu = decouple(temp_scale(stu_logits, 4.0), neighbors)
            loss, _, _ = ndkd_loss(tea, stu, 1.0, 1.0)
            oracle, _, _ = oracle_decoupled(tea_logits, stu_logits, neighbors, 4.0, 1.0, 1.0)
            assert loss == pytest.approx(oracle, abs=1e-10)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(18)
        tea_logits = rng.normal(size=7)
        stu = {"z": rng.normal(size=7)}
        neighbors = {0, 5, 6}
        tau, alpha, beta = 4.0, 1.3, 0.7
        tea_view = decouple(temp_scale(tea_logits, tau), neighbors)
        _, grad, _ = ndkd_loss(tea_view, decouple(temp_scale(stu["z"], tau), neighbors), alpha, beta)
        numeric = finite_difference_grads(
            lambda: ndkd_loss(
                tea_view, decouple(temp_scale(stu["z"], tau), neighbors), alpha, beta
            )[0],
            stu,
        )
        assert_grads_close({"z": grad}, numeric, rel_tol=1e-4)

    def test_ndkd_equals_dkd_for_single_neighbor(self):
        rng = np.random.default_rng(19)
        for _ in range(100):
            tea_logits, stu_logits = rng.normal(size=5), rng.normal(size=5)
            t = int(rng.integers(5))
            tea_dist, stu_dist = temp_scale(tea_logits, 4.0), temp_scale(stu_logits, 4.0)
            ndkd, _, _ = ndkd_loss(decouple(tea_dist, {t}), decouple(stu_dist, {t}), 1.0, 1.0)
            # independent target-decoupled evaluation
            dkd, _, _ = oracle_decoupled(tea_logits, stu_logits, {t}, 4.0, 1.0, 1.0)
            assert ndkd == pytest.approx(dkd, abs=1e-12)

    def test_mismatched_views_rejected(self, rng):
        tea = temp_scale(rng.normal(size=5), 4.0)
        stu = temp_scale(rng.normal(size=5), 4.0)
        with pytest.raises(ValueError):
            ndkd_loss(decouple(tea, {0}), decouple(stu, {1}), 1.0, 1.0)


class TestBatchedKd:
    def test_batch_vanilla_matches_per_row(self, rng):
        tea = rng.normal(size=(4, 6))
        stu = rng.normal(size=(4, 6))
        tau = 4.0
        loss, grad = batch_vanilla_kd(tea, stu, tau)
        per_row = [vanilla_kd(temp_scale(t, tau), temp_scale(s, tau)) for t, s in zip(tea, stu)]
        assert loss == pytest.approx(np.mean([l for l, _ in per_row]), abs=1e-12)
        np.testing.assert_allclose(grad, np.stack([g for _, g in per_row]) / 4, atol=1e-12)

    def test_batch_decoupled_matches_per_row(self, rng):
        tea = rng.normal(size=(5, 7))
        stu = rng.normal(size=(5, 7))
        mask = np.zeros((5, 7), dtype=bool)
        neighbor_sets = [{0}, {1, 2}, {3, 4, 5}, {6}, {0, 6}]
        for i, s in enumerate(neighbor_sets):
            mask[i, list(s)] = True
        tau, alpha, beta = 4.0, 1.0, 2.0
        nekd, nnkd, grad = batch_decoupled_kd(tea, stu, mask, tau, alpha, beta)
        losses, grads = [], []
        for i, s in enumerate(neighbor_sets):
            l, g, parts = ndkd_loss(
                decouple(temp_scale(tea[i], tau), s), decouple(temp_scale(stu[i], tau), s), alpha, beta
            )
            losses.append(parts)
            grads.append(g)
        assert nekd == pytest.approx(np.mean([p[0] for p in losses]), abs=1e-12)
        assert nnkd == pytest.approx(np.mean([p[1] for p in losses]), abs=1e-12)
        np.testing.assert_allclose(grad, np.stack(grads) / 5, atol=1e-12)

    def test_degenerate_row_rejected(self, rng):
        tea, stu = rng.normal(size=(1, 3)), rng.normal(size=(1, 3))
        with pytest.raises(DegenerateNeighborsError):
            batch_decoupled_kd(tea, stu, np.ones((1, 3), dtype=bool), 4.0, 1.0, 1.0)


class TestStudentTotalLoss:
    def setup_method(self):
        self.rng = np.random.default_rng(23)
        triples = [(0, 0, 1), (1, 0, 2), (2, 1, 3), (3, 1, 0), (0, 1, 2)]
        self.ds = make_dataset(triples, num_entities=5, num_relations=2)
        self.neighbor_index = build_neighbor_index(self.ds.train_aug)
        self.student = init_free_model(5, 4, 3, self.rng)
        self.teachers = self.rng.normal(size=(len(self.ds.train_aug), 5))

    def test_gamma_zero_reduces_to_plain_ce(self):
        cfg = TrainConfig(gamma=0.0, strategy=Strategy.TEACHER_AVG, dim=3)
        batch = self.ds.train_aug[:4]
        res = student_total_loss(
            batch, self.student, self.teachers[:4], self.neighbor_index, None, None, cfg
        )
        assert res.parts.kd_total == 0.0 and res.parts.rc == 0.0
        from kgdistill.backbone import ce_loss_and_grads

        ce, ce_grads = ce_loss_and_grads(batch, self.student)
        assert res.parts.ce == pytest.approx(ce, abs=1e-12)
        for name, g in ce_grads.items():
            np.testing.assert_allclose(res.student_grads[name], g, atol=1e-12)

    def test_kd_variant_wiring(self):
        batch = self.ds.train_aug[:4]
        seen = {}
        for variant in KdVariant:
            cfg = TrainConfig(kd_variant=variant, dim=3)
            res = student_total_loss(
                batch, self.student, self.teachers[:4], self.neighbor_index, None, None, cfg
            )
            seen[variant] = res.parts
        assert seen[KdVariant.NONE].kd_total == 0.0
        assert seen[KdVariant.NEKD_ONLY].nnkd == seen[KdVariant.NDKD].nnkd  # recorded either way
        assert seen[KdVariant.NEKD_ONLY].kd_total == pytest.approx(
            2.0 * seen[KdVariant.NDKD].nekd, abs=1e-12
        )
        assert seen[KdVariant.NNKD_ONLY].kd_total == pytest.approx(
            2.0 * seen[KdVariant.NDKD].nnkd, abs=1e-12
        )
        assert seen[KdVariant.VANILLA].kd_total > 0.0
        assert seen[KdVariant.DKD].kd_total > 0.0

    def test_combined_gradient_matches_finite_differences(self):
        cfg = TrainConfig(kd_variant=KdVariant.NDKD, gamma=2.0, tau=4.0, dim=3)
        batch = self.ds.train_aug[:5]
        tea = self.teachers[:5]

        def total():
            res = student_total_loss(
                batch, self.student, tea, self.neighbor_index, None, None, cfg
            )
            return res.parts.ce + res.parts.kd_total

        res = student_total_loss(batch, self.student, tea, self.neighbor_index, None, None, cfg)
        numeric = finite_difference_grads(total, self.student.params())
        assert_grads_close(res.student_grads, numeric, rel_tol=1e-4)

    def test_policy_and_student_gradients_are_isolated(self):
        cfg = TrainConfig(kd_variant=KdVariant.NDKD, dim=3, policy_hidden=8)
        policy = PolicyNet.init(15, 8, self.rng)
        batch = self.ds.train_aug[:4]
        pb = PolicyBatch(
            states=self.rng.normal(size=(4, 15)),
            actions=np.array([0, 3, 6, 2]),
            advantages=np.array([11.0, -11.0, 0.0, 11.0]),
        )
        res = student_total_loss(
            batch, self.student, self.teachers[:4], self.neighbor_index, policy, pb, cfg
        )
        assert set(res.policy_grads) == {"w1", "b1", "w2", "b2"}
        assert set(res.student_grads) == {"entities.re", "entities.im", "relations.re", "relations.im"}
        # the REINFORCE term does not move when gamma changes, and vice versa
        res2 = student_total_loss(
            batch, self.student, self.teachers[:4], self.neighbor_index, policy, pb,
            cfg.replace(gamma=0.0),
        )
        for name in res.policy_grads:
            np.testing.assert_array_equal(res.policy_grads[name], res2.policy_grads[name])
        assert res.parts.rc == pytest.approx(res2.parts.rc, abs=1e-15)

    def test_temperature_sq_scale_flag(self):
        batch = self.ds.train_aug[:3]
        base = student_total_loss(
            batch, self.student, self.teachers[:3], self.neighbor_index, None, None,
            TrainConfig(kd_variant=KdVariant.VANILLA, dim=3),
        )
        scaled = student_total_loss(
            batch, self.student, self.teachers[:3], self.neighbor_index, None, None,
            TrainConfig(kd_variant=KdVariant.VANILLA, dim=3, temperature_sq_scale=True),
        )
        assert scaled.parts.kd_total == pytest.approx(base.parts.kd_total * 16.0, rel=1e-12)

    def test_neighbor_mask_always_includes_target(self):
        mask = neighbor_mask_for_batch(self.ds.train_aug[:4], {}, 5)
        for i, (_, _, t) in enumerate(self.ds.train_aug[:4]):
            assert mask[i, t]
