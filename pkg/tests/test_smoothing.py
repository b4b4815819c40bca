"""Tests for the forward-only smoothing updates."""

import math

import numpy as np
import pytest

from switchem.model import InitialCondition, StatLayout, Theta
from switchem.rbpf import init_system, rbpf_step
from switchem.rng import substream
from switchem.smoothing import aggregate, fs_update, path_update, stack_stat

from helpers import PureHmmModel, ShiftDriftModel, pure_hmm_theta, shift_drift_theta
from oracles import brute_fs_update, brute_path_update, hmm_smoothed_stats


def _random_inputs(rng, n_prev, n_new, model, theta):
    layout = StatLayout.from_model(model)
    x_prev = rng.normal(size=(n_prev, model.state_dim))
    x_new = rng.normal(size=(n_new, model.state_dim))
    w_prev = rng.dirichlet(np.ones(n_prev))
    alpha_prev = rng.dirichlet(np.ones(model.num_modes), size=n_prev)
    tstat_prev = rng.normal(size=(n_prev, model.num_modes, layout.dim))
    y = rng.normal(size=model.meas_dim)
    return layout, x_prev, x_new, w_prev, alpha_prev, tstat_prev, y


class TestStackStat:
    def setup_method(self):
        self.model = ShiftDriftModel()
        self.layout = StatLayout.from_model(self.model)

    def test_indicator_blocks(self):
        vec = stack_stat(0, 1, np.array([0.3]), np.array([0.5]), np.array([0.1]),
                         self.model, self.layout, t=1)
        np.testing.assert_allclose(vec[:4], [0, 1, 0, 0])
        np.testing.assert_allclose(vec[4:6], [0, 1])

    def test_one_hot_sums(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            k, l = rng.integers(2, size=2)
            vec = stack_stat(int(k), int(l), rng.normal(size=1), rng.normal(size=1),
                             rng.normal(size=1), self.model, self.layout, t=2)
            assert vec[:4].sum() == 1.0
            assert vec[4:6].sum() == 1.0

    def test_delegates_to_model_statistic(self):
        y, xn, xp = np.array([0.4]), np.array([1.2]), np.array([-0.3])
        vec = stack_stat(1, 0, y, xn, xp, self.model, self.layout, t=3)
        np.testing.assert_allclose(vec[self.layout.s3_slice(0)],
                                   self.model.suffstat(0, y, xn, xp, 3), atol=1e-15)
        np.testing.assert_allclose(vec[self.layout.s3_slice(1)], 0.0, atol=1e-15)


class TestFsUpdate:
    def test_single_particle_single_mode_first_step(self):
        model = ShiftDriftModel(num_modes=1)
        theta = shift_drift_theta(num_modes=1, tpm=np.array([[1.0]]))
        layout = StatLayout.from_model(model)
        x_prev = np.array([[0.4]])
        x_new = np.array([[1.1]])
        y = np.array([0.2])
        tstat, nfb = fs_update(x_prev, np.array([0.0]), np.array([[1.0]]),
                               np.zeros((1, 1, layout.dim)), x_new, y, theta,
                               gamma=1.0, model=model, layout=layout, t=1)
        assert nfb == 0
        want = stack_stat(0, 0, y, x_new[0], x_prev[0], model, layout, 1)
        np.testing.assert_allclose(tstat[0, 0], want, atol=1e-14)

    def test_single_particle_equals_path_update(self):
        model = ShiftDriftModel()
        theta = shift_drift_theta(tpm=np.array([[0.7, 0.3], [0.2, 0.8]]))
        rng = np.random.default_rng(1)
        layout, x_prev, x_new, w_prev, alpha_prev, tstat_prev, y = _random_inputs(
            rng, 1, 1, model, theta)
        a, _ = fs_update(x_prev, np.log(np.array([1.0])), alpha_prev, tstat_prev,
                         x_new, y, theta, 0.3, model, layout, t=2)
        b, _ = path_update(x_prev, alpha_prev, tstat_prev, x_new, y, theta,
                           0.3, model, layout, t=2)
        np.testing.assert_allclose(a, b, atol=1e-13)

    @pytest.mark.parametrize("model_cls,theta_fn", [
        (ShiftDriftModel, lambda: shift_drift_theta(tpm=np.array([[0.6, 0.4], [0.25, 0.75]]))),
        (PureHmmModel, lambda: pure_hmm_theta([-1.0, 1.5], [1.0, 0.6],
                                              [[0.9, 0.1], [0.35, 0.65]])),
    ])
    def test_matches_brute_force(self, model_cls, theta_fn):
        model = model_cls()
        theta = theta_fn()
        rng = np.random.default_rng(2)
        for _ in range(25):
            n_prev = int(rng.integers(1, 6))
            n_new = int(rng.integers(1, 6))
            gamma = float(rng.uniform(0.1, 1.0))
            layout, x_prev, x_new, w_prev, alpha_prev, tstat_prev, y = _random_inputs(
                rng, n_prev, n_new, model, theta)
            got, nfb = fs_update(x_prev, np.log(w_prev), alpha_prev, tstat_prev,
                                 x_new, y, theta, gamma, model, layout, t=3)
            assert nfb == 0
            want = brute_fs_update(x_prev, w_prev, alpha_prev, tstat_prev,
                                   x_new, y, theta, gamma, model, layout, t=3)
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_backward_weights_normalize(self):
        # implied by the brute-force match, checked directly here on one case
        model = ShiftDriftModel()
        theta = shift_drift_theta(tpm=np.array([[0.6, 0.4], [0.25, 0.75]]))
        rng = np.random.default_rng(3)
        layout, x_prev, x_new, w_prev, alpha_prev, tstat_prev, y = _random_inputs(
            rng, 4, 4, model, theta)
        for i in range(4):
            for l in range(2):
                total = 0.0
                den = 0.0
                for j in range(4):
                    f = math.exp(model.log_trans_density(l, x_new[i], x_prev[j],
                                                         theta.mode_params[l], 3))
                    for k in range(2):
                        den += f * theta.tpm[k, l] * alpha_prev[j, k] * w_prev[j]
                for j in range(4):
                    f = math.exp(model.log_trans_density(l, x_new[i], x_prev[j],
                                                         theta.mode_params[l], 3))
                    for k in range(2):
                        total += f * theta.tpm[k, l] * alpha_prev[j, k] * w_prev[j] / den
                assert abs(total - 1.0) <= 1e-12

    def test_unreachable_mode_falls_back(self):
        model = ShiftDriftModel()
        # column 1 of the TPM is zero: mode 1 is unreachable from anywhere
        theta = shift_drift_theta(tpm=np.array([[1.0, 0.0], [1.0, 0.0]]))
        rng = np.random.default_rng(4)
        layout, x_prev, x_new, w_prev, alpha_prev, tstat_prev, y = _random_inputs(
            rng, 3, 3, model, theta)
        gamma = 0.4
        got, nfb = fs_update(x_prev, np.log(w_prev), alpha_prev, tstat_prev,
                             x_new, y, theta, gamma, model, layout, t=2)
        assert nfb == 3
        want = (1 - gamma) * np.einsum("j,jk,jkd->d", w_prev, alpha_prev, tstat_prev)
        for i in range(3):
            np.testing.assert_allclose(got[i, 1], want, atol=1e-12)


class TestPathUpdate:
    def test_single_mode_formula(self):
        model = ShiftDriftModel(num_modes=1)
        theta = shift_drift_theta(num_modes=1, tpm=np.array([[1.0]]))
        layout = StatLayout.from_model(model)
        rng = np.random.default_rng(5)
        x_t = rng.normal(size=(3, 1))
        x_n = rng.normal(size=(3, 1))
        tstat = rng.normal(size=(3, 1, layout.dim))
        y = np.array([0.1])
        gamma = 0.25
        got, _ = path_update(x_t, np.ones((3, 1)), tstat, x_n, y, theta,
                             gamma, model, layout, t=4)
        for i in range(3):
            want = (1 - gamma) * tstat[i, 0] + gamma * stack_stat(
                0, 0, y, x_n[i], x_t[i], model, layout, 4)
            np.testing.assert_allclose(got[i, 0], want, atol=1e-14)

    def test_one_hot_ancestor_mode(self):
        model = ShiftDriftModel()
        theta = shift_drift_theta(tpm=np.array([[0.7, 0.3], [0.4, 0.6]]))
        layout = StatLayout.from_model(model)
        rng = np.random.default_rng(6)
        x_t = rng.normal(size=(2, 1))
        x_n = rng.normal(size=(2, 1))
        tstat = rng.normal(size=(2, 2, layout.dim))
        alpha = np.tile([0.0, 1.0], (2, 1))  # ancestor surely in mode 1
        y = np.array([0.2])
        gamma = 0.5
        got, _ = path_update(x_t, alpha, tstat, x_n, y, theta, gamma, model, layout, t=2)
        for i in range(2):
            for l in range(2):
                want = (1 - gamma) * tstat[i, 1] + gamma * stack_stat(
                    1, l, y, x_n[i], x_t[i], model, layout, 2)
                np.testing.assert_allclose(got[i, l], want, atol=1e-14)

    def test_matches_brute_force(self):
        model = ShiftDriftModel()
        theta = shift_drift_theta(tpm=np.array([[0.55, 0.45], [0.15, 0.85]]))
        rng = np.random.default_rng(7)
        for _ in range(25):
            n = int(rng.integers(1, 6))
            gamma = float(rng.uniform(0.1, 1.0))
            layout, x_prev, x_new, _, alpha, tstat, y = _random_inputs(
                rng, n, n, model, theta)
            got, nfb = path_update(x_prev, alpha, tstat, x_new, y, theta,
                                   gamma, model, layout, t=5)
            assert nfb == 0
            want = brute_path_update(x_prev, alpha, tstat, x_new, y, theta,
                                     gamma, model, layout, t=5)
            np.testing.assert_allclose(got, want, atol=1e-14)

    def test_unreachable_mode_falls_back(self):
        model = ShiftDriftModel()
        theta = shift_drift_theta(tpm=np.array([[1.0, 0.0], [1.0, 0.0]]))
        layout = StatLayout.from_model(model)
        rng = np.random.default_rng(8)
        x_t = rng.normal(size=(2, 1))
        x_n = rng.normal(size=(2, 1))
        tstat = rng.normal(size=(2, 2, layout.dim))
        alpha = rng.dirichlet(np.ones(2), size=2)
        gamma = 0.3
        got, nfb = path_update(x_t, alpha, tstat, x_n, np.array([0.0]), theta,
                               gamma, model, layout, t=2)
        assert nfb == 2
        for i in range(2):
            want = (1 - gamma) * np.einsum("k,kd->d", alpha[i], tstat[i])
            np.testing.assert_allclose(got[i, 1], want, atol=1e-13)


class TestAggregate:
    def test_one_particle_one_mode(self):
        layout = StatLayout(1, [2])
        tstat = np.arange(4.0)[None, None, :]
        stats = aggregate(np.array([1.0]), np.array([[1.0]]), tstat, layout)
        np.testing.assert_allclose(stats.s1, [[0.0]])
        np.testing.assert_allclose(stats.s2, [1.0])
        np.testing.assert_allclose(stats.s3[0], [2.0, 3.0])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(9)
        layout = StatLayout(2, [3, 3])
        n = 4
        w = rng.dirichlet(np.ones(n))
        alpha = rng.dirichlet(np.ones(2), size=n)
        tstat = rng.normal(size=(n, 2, layout.dim))
        stats = aggregate(w, alpha, tstat, layout)
        vec = np.zeros(layout.dim)
        for i in range(n):
            for l in range(2):
                vec += w[i] * alpha[i, l] * tstat[i, l]
        ref = layout.unpack(vec)
        np.testing.assert_allclose(stats.s1, ref.s1, atol=1e-14)
        np.testing.assert_allclose(stats.s2, ref.s2, atol=1e-14)
        np.testing.assert_allclose(stats.s3[0], ref.s3[0], atol=1e-14)

    def test_first_step_indicator_sums(self):
        # after one step with gamma=1 the aggregated indicator blocks are convex
        # combinations of one-hots
        model = ShiftDriftModel()
        theta = shift_drift_theta(tpm=np.array([[0.8, 0.2], [0.3, 0.7]]))
        layout = StatLayout.from_model(model)
        init = InitialCondition(state=np.zeros(1), mode=0)
        system = init_system(model, layout, 10, init, substream(0, 3, 0))
        y = np.array([0.4])
        new, ctx = rbpf_step(system, y, theta, model, rng=substream(0, 2, 1))
        tstat, _ = fs_update(ctx.prev.x, ctx.prev.log_w, ctx.prev.alpha,
                             ctx.prev.tstat, new.x, y, theta, 1.0, model, layout, 1)
        stats = aggregate(new.weights, new.alpha, tstat, layout)
        assert abs(stats.s1.sum() - 1.0) <= 1e-12
        assert abs(stats.s2.sum() - 1.0) <= 1e-12


class TestRunningAverageAgainstOfflineSmoother:
    def test_pure_hmm_statistics_match_offline_smoother(self):
        # fixed parameters, 1/t step sizes: the aggregated statistics must
        # reproduce the offline smoothed running averages on a state-free model
        from scipy.stats import norm

        model = PureHmmModel()
        means = np.array([-2.0, 2.0])
        variances = np.array([1.0, 0.5])
        tpm = np.array([[0.9, 0.1], [0.3, 0.7]])
        theta = pure_hmm_theta(means, variances, tpm)
        layout = StatLayout.from_model(model)

        rng = np.random.default_rng(10)
        n = 300
        ys = np.where(rng.random(n) < 0.6, -2.0, 2.0) + rng.normal(size=n)

        init = InitialCondition(state=np.zeros(1), mode=0)
        system = init_system(model, layout, 20, init, substream(1, 3, 0))
        for t in range(1, n + 1):
            y = np.array([ys[t - 1]])
            system, ctx = rbpf_step(system, y, theta, model, rng=substream(1, 2, t))
            tstat, _ = fs_update(ctx.prev.x, ctx.prev.log_w, ctx.prev.alpha,
                                 ctx.prev.tstat, system.x, y, theta, 1.0 / t,
                                 model, layout, t)
            system.tstat = tstat
        stats = aggregate(system.weights, system.alpha, system.tstat, layout)

        liks = np.stack([norm.pdf(ys, means[k], math.sqrt(variances[k]))
                         for k in range(2)], axis=1)
        per_step = np.stack([np.stack([ys, ys ** 2], axis=1)] * 2, axis=1)
        s1, s2, s3 = hmm_smoothed_stats(np.array([1.0, 0.0]), tpm, liks, per_step)

        np.testing.assert_allclose(stats.s1, s1, atol=1e-9)
        np.testing.assert_allclose(stats.s2, s2, atol=1e-9)
        np.testing.assert_allclose(np.stack(stats.s3), s3, atol=1e-8)
