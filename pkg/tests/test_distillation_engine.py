"""Tests for the composite losses and the three training procedures."""

import numpy as np
import pytest

from cqkd import data_pipeline as dp
from cqkd import distillation_engine as de
from cqkd import prob_math as pm
from cqkd.nn_core import grad_check, init_model, model_bytes

RNG = np.random.default_rng(1234)


def small_desk(n_train=48, n_val=16, num_classes=4, h=8, sigma=0.1, factor=1, seed=0):
    train = dp.make_pairs(
        dp.generate_synthetic(n_train, num_classes, h, sigma, 2 * seed, "train"), factor)
    val = dp.make_pairs(
        dp.generate_synthetic(n_val, num_classes, h, sigma, 2 * seed + 1, "validation"),
        factor)
    return train, val


class TestCqkdLoss:
    def test_alpha_zero_limit_is_cross_entropy(self):
        z_s = RNG.normal(size=5)
        z_t = RNG.normal(size=5)
        loss, _ = de.cqkd_loss(z_s, z_t, 3, alpha=0.0, tau=10.0)
        expected = pm.cross_entropy(3, pm.softmax_tau(z_s, 1.0))
        assert loss == pytest.approx(expected, abs=1e-15)

    def test_alpha_one_limit_is_divergence(self):
        z_s = RNG.normal(size=5)
        z_t = RNG.normal(size=5)
        loss, _ = de.cqkd_loss(z_s, z_t, 0, alpha=1.0, tau=20.0)
        expected = pm.kl_divergence(pm.softmax_tau(z_t, 20.0), pm.softmax_tau(z_s, 20.0))
        assert loss == pytest.approx(expected, abs=1e-15)

    def test_decomposes_into_independent_terms(self):
        for _ in range(20):
            k = int(RNG.integers(2, 9))
            z_s = RNG.normal(scale=3, size=k)
            z_t = RNG.normal(scale=3, size=k)
            y = int(RNG.integers(0, k))
            loss, _ = de.cqkd_loss(z_s, z_t, y, alpha=0.5, tau=10.0)
            label = pm.cross_entropy(y, pm.softmax_tau(z_s, 1.0))
            div = pm.kl_divergence(pm.softmax_tau(z_t, 10.0), pm.softmax_tau(z_s, 10.0))
            assert abs(loss - (0.5 * label + 0.5 * div)) <= 1e-12

    def test_affine_in_alpha(self):
        z_s = RNG.normal(size=6)
        z_t = RNG.normal(size=6)
        losses = [de.cqkd_loss(z_s, z_t, 2, alpha=a, tau=10.0)[0]
                  for a in (0.0, 0.5, 1.0)]
        assert losses[1] == pytest.approx((losses[0] + losses[2]) / 2, abs=1e-12)

    def test_optional_temperature_square_rescale(self):
        z_s = RNG.normal(size=4)
        z_t = RNG.normal(size=4)
        tau = 10.0
        plain, g_plain = de.cqkd_loss(z_s, z_t, 1, alpha=1.0, tau=tau)
        scaled, g_scaled = de.cqkd_loss(z_s, z_t, 1, alpha=1.0, tau=tau,
                                        rescale_tau_sq=True)
        assert scaled == pytest.approx(tau * tau * plain, rel=1e-12)
        np.testing.assert_allclose(g_scaled, tau * tau * g_plain, rtol=1e-12)

    def test_gradient_matches_finite_differences(self):
        h = 1e-6
        for tau in (1.0, 10.0, 20.0):
            z_s = RNG.normal(scale=2, size=6)
            z_t = RNG.normal(scale=2, size=6)
            _, grad = de.cqkd_loss(z_s, z_t, 4, alpha=0.5, tau=tau)
            for i in range(6):
                e = np.zeros(6)
                e[i] = h
                plus, _ = de.cqkd_loss(z_s + e, z_t, 4, alpha=0.5, tau=tau)
                minus, _ = de.cqkd_loss(z_s - e, z_t, 4, alpha=0.5, tau=tau)
                numeric = (plus - minus) / (2 * h)
                rel = abs(grad[i] - numeric) / max(abs(grad[i]), abs(numeric), 1e-8)
                assert rel < 1e-6

    def test_rejects_invalid_arguments(self):
        z = RNG.normal(size=4)
        with pytest.raises(ValueError):
            de.cqkd_loss(z, z, 0, alpha=-0.1, tau=10.0)
        with pytest.raises(ValueError):
            de.cqkd_loss(z, z, 0, alpha=1.1, tau=10.0)
        with pytest.raises(ValueError):
            de.cqkd_loss(z, z, 0, alpha=0.5, tau=0.0)
        with pytest.raises(ValueError):
            de.cqkd_loss(z, RNG.normal(size=5), 0, alpha=0.5, tau=1.0)


class TestDmlLoss:
    def test_two_identical_members_reduce_to_label_loss(self):
        p = pm.softmax_tau(RNG.normal(size=5), 1.0)
        loss, _ = de.dml_loss([p, p.copy()], 0, 2)
        assert loss == pytest.approx(pm.cross_entropy(2, p), abs=1e-15)

    def test_identical_cohort_of_any_size(self):
        p = pm.softmax_tau(RNG.normal(size=4), 1.0)
        for m in (2, 3, 5):
            loss, _ = de.dml_loss([p.copy() for _ in range(m)], m - 1, 1)
            assert loss == pytest.approx(pm.cross_entropy(1, p), abs=1e-14)

    def test_decomposes_into_label_and_peer_terms(self):
        ps = [pm.softmax_tau(RNG.normal(scale=2, size=6), 1.0) for _ in range(3)]
        loss, _ = de.dml_loss(ps, 1, 4)
        expected = pm.cross_entropy(4, ps[1]) + 0.5 * (
            pm.kl_divergence(ps[0], ps[1]) + pm.kl_divergence(ps[2], ps[1]))
        assert abs(loss - expected) <= 1e-12

    def test_gradient_matches_finite_differences(self):
        h = 1e-6
        z = RNG.normal(scale=2, size=5)
        peers = [pm.softmax_tau(RNG.normal(scale=2, size=5), 1.0) for _ in range(2)]

        def loss_of(zv):
            probs = [peers[0], pm.softmax_tau(zv, 1.0), peers[1]]
            return de.dml_loss(probs, 1, 3)

        _, grad = loss_of(z)
        for i in range(5):
            e = np.zeros(5)
            e[i] = h
            numeric = (loss_of(z + e)[0] - loss_of(z - e)[0]) / (2 * h)
            rel = abs(grad[i] - numeric) / max(abs(grad[i]), abs(numeric), 1e-8)
            assert rel < 1e-6

    def test_rejects_bad_arguments(self):
        p = pm.softmax_tau(RNG.normal(size=4), 1.0)
        with pytest.raises(ValueError):
            de.dml_loss([p], 0, 0)
        with pytest.raises(ValueError):
            de.dml_loss([p, p], 2, 0)
        with pytest.raises(ValueError):
            de.dml_loss([p, pm.softmax_tau(RNG.normal(size=3), 1.0)], 0, 0)


class TestGradientFidelityThroughNetworks:
    def test_cqkd_loss_through_student(self):
        model = init_model([16, 12, 10, 4], seed=6)
        x = RNG.normal(size=(3, 16))
        teacher_logits = RNG.normal(scale=2, size=(3, 4))
        labels = [0, 2, 3]

        def loss_fn(logits):
            z = np.atleast_2d(logits)
            pairs = [de.cqkd_loss(z[i], teacher_logits[i], labels[i], 0.5, 10.0)
                     for i in range(len(z))]
            return (float(np.mean([p[0] for p in pairs])),
                    np.stack([p[1] for p in pairs]) / len(z))

        assert grad_check(model, x, loss_fn) < 1e-5

    def test_dml_loss_through_student(self):
        model = init_model([16, 12, 10, 4], seed=7)
        x = RNG.normal(size=(3, 16))
        peers = [[pm.softmax_tau(RNG.normal(scale=2, size=4), 1.0) for _ in range(2)]
                 for _ in range(3)]
        labels = [1, 0, 2]

        def loss_fn(logits):
            z = np.atleast_2d(logits)
            vals, grads = [], []
            for i in range(len(z)):
                probs = [peers[i][0], pm.softmax_tau(z[i], 1.0), peers[i][1]]
                v, g = de.dml_loss(probs, 1, labels[i])
                vals.append(v)
                grads.append(g)
            return float(np.mean(vals)), np.stack(grads) / len(z)

        assert grad_check(model, x, loss_fn) < 1e-5


class TestTrainSupervised:
    def test_zero_epochs_returns_initial_model(self):
        train, val = small_desk()
        cfg = de.TrainConfig(epochs=0, seed=3, factor=1, student_arch=(64, 8, 4))
        model, metrics = de.train_supervised(cfg, train, val)
        assert metrics == []
        assert model_bytes(model) == model_bytes(init_model((64, 8, 4), 3))

    def test_overfits_small_dataset(self):
        train, val = small_desk(n_train=64, n_val=8, num_classes=4, sigma=0.05)
        cfg = de.TrainConfig(epochs=40, batch_size=16, seed=1, factor=1,
                             student_arch=(64, 32, 4), eta_max=3e-3)
        _, metrics = de.train_supervised(cfg, train, val)
        final_train = [m for m in metrics if m.split == "train"][-1]
        assert final_train.accuracy == 1.0

    def test_deterministic_given_seed(self):
        train, val = small_desk()
        cfg = de.TrainConfig(epochs=3, batch_size=16, seed=5, factor=1,
                             student_arch=(64, 8, 4))
        model_a, metrics_a = de.train_supervised(cfg, train, val)
        model_b, metrics_b = de.train_supervised(cfg, train, val)
        assert model_bytes(model_a) == model_bytes(model_b)
        for ra, rb in zip(metrics_a, metrics_b):
            assert (ra.loss, ra.accuracy, ra.entropy, ra.ece) == \
                   (rb.loss, rb.accuracy, rb.entropy, rb.ece)

    def test_metrics_shape(self):
        train, val = small_desk()
        cfg = de.TrainConfig(epochs=4, batch_size=16, seed=2, factor=1,
                             student_arch=(64, 8, 4))
        _, metrics = de.train_supervised(cfg, train, val)
        assert len(metrics) == 8
        assert [m.split for m in metrics] == ["train", "validation"] * 4
        for m in metrics:
            assert 0.0 <= m.accuracy <= 1.0
            assert 0.0 <= m.ece <= 1.0
            assert 0.0 <= m.entropy <= np.log(4) + 1e-12

    def test_rejects_mismatched_factor_and_arch(self):
        train, val = small_desk(factor=2)
        cfg = de.TrainConfig(epochs=1, seed=0, factor=1, student_arch=(16, 8, 4))
        with pytest.raises(ValueError):
            de.train_supervised(cfg, train, val)
        cfg = de.TrainConfig(epochs=1, seed=0, factor=2, student_arch=(64, 8, 4))
        with pytest.raises(ValueError):
            de.train_supervised(cfg, train, val)


class TestTrainTeacher:
    def test_trains_on_full_resolution_regardless_of_factor(self):
        train, val = small_desk(factor=2)
        cfg = de.TrainConfig(epochs=2, batch_size=16, seed=4, factor=2,
                             teacher_arch=(64, 16, 4), student_arch=(16, 8, 4))
        teacher, metrics = de.train_teacher(cfg, train, val)
        assert teacher.input_size == 64
        assert len(metrics) == 4

    def test_rejects_wrong_teacher_arch(self):
        train, val = small_desk()
        cfg = de.TrainConfig(epochs=1, seed=0, factor=1,
                             teacher_arch=(16, 8, 4), student_arch=(64, 8, 4))
        with pytest.raises(ValueError):
            de.train_teacher(cfg, train, val)


class TestTrainCqkd:
    def _teacher(self, train, val, seed=9):
        cfg = de.TrainConfig(epochs=3, batch_size=16, seed=seed, factor=train.factor,
                             teacher_arch=(64, 16, 4), student_arch=(16, 8, 4))
        teacher, _ = de.train_teacher(cfg, train, val)
        return teacher

    def test_teacher_parameters_are_frozen(self):
        train, val = small_desk(factor=2)
        teacher = self._teacher(train, val)
        before = model_bytes(teacher)
        cfg = de.TrainConfig(alpha=0.5, tau=10.0, epochs=2, batch_size=16, seed=1,
                             factor=2, student_arch=(16, 8, 4), teacher_arch=(64, 16, 4))
        de.train_cqkd(teacher, cfg, train, val)
        assert model_bytes(teacher) == before

    def test_runs_at_both_reference_temperatures(self):
        train, val = small_desk(factor=2)
        teacher = self._teacher(train, val)
        for tau in (10.0, 20.0):
            cfg = de.TrainConfig(alpha=0.5, tau=tau, epochs=2, batch_size=16, seed=1,
                                 factor=2, student_arch=(16, 8, 4),
                                 teacher_arch=(64, 16, 4))
            student, metrics = de.train_cqkd(teacher, cfg, train, val)
            assert student.input_size == 16
            assert len(metrics) == 4

    def test_logged_step_losses_match_recomputation(self):
        train, val = small_desk(factor=2)
        teacher = self._teacher(train, val)
        cfg = de.TrainConfig(alpha=0.5, tau=10.0, epochs=1, batch_size=16, seed=2,
                             factor=2, student_arch=(16, 8, 4), teacher_arch=(64, 16, 4))
        logged = []
        labels = train.labels()

        def hook(step, idx, student_logits, teacher_logits, losses):
            logged.append((idx.copy(), student_logits.copy(),
                           teacher_logits.copy(), losses.copy()))

        _, metrics = de.train_cqkd(teacher, cfg, train, val, batch_hook=hook)
        assert logged
        all_losses = []
        for idx, z_s, z_t, losses in logged:
            for row in range(len(idx)):
                loss, _ = de.cqkd_loss(z_s[row], z_t[row], int(labels[idx[row]]),
                                       cfg.alpha, cfg.tau)
                assert abs(loss - losses[row]) <= 1e-12
                all_losses.append(loss)
        train_row = [m for m in metrics if m.split == "train"][0]
        assert train_row.loss == pytest.approx(np.mean(all_losses), abs=1e-12)

    def test_rejects_resolution_mismatch_and_bad_alpha(self):
        train, val = small_desk(factor=2)
        teacher = init_model([16, 8, 4], seed=0)
        cfg = de.TrainConfig(alpha=0.5, tau=10.0, epochs=1, seed=0, factor=2,
                             student_arch=(16, 8, 4), teacher_arch=(16, 8, 4))
        with pytest.raises(ValueError):
            de.train_cqkd(teacher, cfg, train, val)
        good_teacher = init_model([64, 8, 4], seed=0)
        bad_cfg = de.TrainConfig(alpha=1.0, tau=10.0, epochs=1, seed=0, factor=2,
                                 student_arch=(16, 8, 4), teacher_arch=(64, 8, 4))
        with pytest.raises(ValueError):
            de.train_cqkd(good_teacher, bad_cfg, train, val)


class TestTrainDml:
    def test_symmetric_cohort_stays_identical(self):
        train, val = small_desk(factor=2)
        cfg = de.TrainConfig(epochs=3, batch_size=16, seed=6, factor=2,
                             cohort_size=2, student_arch=(16, 8, 4))
        models, _ = de.train_dml(cfg, train, val, seed_offsets=[0, 0])
        assert model_bytes(models[0]) == model_bytes(models[1])

    def test_default_offsets_differ(self):
        train, val = small_desk(factor=2)
        cfg = de.TrainConfig(epochs=1, batch_size=16, seed=6, factor=2,
                             cohort_size=3, student_arch=(16, 8, 4))
        models, metrics = de.train_dml(cfg, train, val)
        assert len(models) == 3
        assert len(metrics) == 3
        assert model_bytes(models[0]) != model_bytes(models[1])
        for member in metrics:
            assert [m.split for m in member] == ["train", "validation"]

    def test_deterministic(self):
        train, val = small_desk(factor=2)
        cfg = de.TrainConfig(epochs=2, batch_size=16, seed=8, factor=2,
                             cohort_size=2, student_arch=(16, 8, 4))
        a, _ = de.train_dml(cfg, train, val)
        b, _ = de.train_dml(cfg, train, val)
        for ma, mb in zip(a, b):
            assert model_bytes(ma) == model_bytes(mb)

    def test_rejects_small_cohort(self):
        train, val = small_desk(factor=2)
        cfg = de.TrainConfig(epochs=1, seed=0, factor=2, cohort_size=1,
                             student_arch=(16, 8, 4))
        with pytest.raises(ValueError):
            de.train_dml(cfg, train, val)


class TestPredictRecords:
    def test_records_cover_split_and_carry_probs(self):
        train, val = small_desk()
        cfg = de.TrainConfig(epochs=1, batch_size=16, seed=0, factor=1,
                             student_arch=(64, 8, 4))
        model, _ = de.train_supervised(cfg, train, val)
        records = de.predict_records(model, val, side="low")
        assert len(records) == len(val)
        for r in records:
            assert r.probs is not None and len(r.probs) == 4
