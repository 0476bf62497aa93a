#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# test_alignment.py - 分佈差異量度的公理、手算值、梯度與 dist_loss

import logging
import math

import numpy as np
import pytest

from alignment import AlignmentSpec, dist_loss, gaussian_kl, hist_js, median_bandwidth, mmd2, sym_js
from hin_graph import ConfigError


@pytest.fixture
def samples():
    rng = np.random.default_rng(0)
    return rng.normal(size=(12, 3)), rng.normal(loc=1.5, scale=1.5, size=(9, 3))


class TestIdentity:

    def test_zero_on_identical(self):
        x = np.random.default_rng(1).normal(size=(5, 2))
        assert mmd2(x, x).value == 0.0
        assert gaussian_kl(x, x).value == pytest.approx(0.0, abs=1e-9)
        assert sym_js(x, x).value == pytest.approx(0.0, abs=1e-9)
        assert hist_js(x, x) == pytest.approx(0.0, abs=1e-9)

    def test_non_negative(self, samples):
        p, q = samples
        for value in (mmd2(p, q).value, gaussian_kl(p, q).value, sym_js(p, q).value, hist_js(p, q)):
            assert value >= 0


class TestMmd:

    def test_two_point_hand_computation(self):
        p = np.array([[0.0], [0.0]])
        q = np.array([[10.0], [10.0]])
        # k(P,P) = k(Q,Q) = 1 off-diagonal, k(P,Q) = exp(-50)
        expected = 1.0 + 1.0 - 2.0 * math.exp(-50.0)
        assert mmd2(p, q, bandwidth=1.0).value == pytest.approx(expected, rel=1e-12)

    def test_bandwidth_must_be_positive(self, samples):
        with pytest.raises(ConfigError):
            mmd2(*samples, bandwidth=0.0)

    def test_median_bandwidth_fallback(self):
        x = np.ones((3, 2))
        assert median_bandwidth(x, x) == 1.0

    def test_gradients(self, samples, fd_check):
        p, q = samples
        result = mmd2(p, q, bandwidth=1.3)
        assert result.value > 0
        fd_check(lambda: mmd2(p, q, bandwidth=1.3).value, p, result.grad_p, samples=60)
        fd_check(lambda: mmd2(p, q, bandwidth=1.3).value, q, result.grad_q, samples=60)


class TestGaussianKl:

    def test_unit_variance_mean_shift(self):
        p = np.array([[-1.0], [1.0]])
        q = np.array([[0.0], [2.0]])
        assert gaussian_kl(p, q).value == pytest.approx(0.5)

    def test_asymmetric(self):
        rng = np.random.default_rng(3)
        p, q = rng.normal(scale=0.5, size=(50, 1)), rng.normal(scale=3.0, size=(50, 1))
        assert gaussian_kl(p, q).value != pytest.approx(gaussian_kl(q, p).value)

    def test_degenerate_sample_floored(self):
        result = gaussian_kl(np.zeros((4, 2)), np.random.default_rng(0).normal(size=(4, 2)))
        assert np.isfinite(result.value)
        assert np.all(np.isfinite(result.grad_p))

    def test_gradients(self, samples, fd_check):
        p, q = samples
        result = gaussian_kl(p, q)
        fd_check(lambda: gaussian_kl(p, q).value, p, result.grad_p, samples=60)
        fd_check(lambda: gaussian_kl(p, q).value, q, result.grad_q, samples=60)


class TestSymJs:

    def test_symmetric(self, samples):
        p, q = samples
        assert sym_js(p, q).value == sym_js(q, p).value

    def test_average_of_directed(self, samples):
        p, q = samples
        expected = 0.5 * (gaussian_kl(p, q).value + gaussian_kl(q, p).value)
        assert sym_js(p, q).value == pytest.approx(expected, rel=1e-12)

    def test_gradients(self, samples, fd_check):
        p, q = samples
        result = sym_js(p, q)
        fd_check(lambda: sym_js(p, q).value, p, result.grad_p, samples=60)
        fd_check(lambda: sym_js(p, q).value, q, result.grad_q, samples=60)


class TestHistJs:

    def test_symmetric(self, samples):
        p, q = samples
        assert hist_js(p, q, bins=16) == hist_js(q, p, bins=16)

    def test_disjoint_support_four_bins(self):
        eps = 1e-8
        p, q = np.zeros((4, 1)), np.full((4, 1), 100.0)
        # P 全在第一格、Q 全在最後一格
        hp = np.array([4 + eps, eps, eps, eps])
        hq = np.array([eps, eps, eps, 4 + eps])
        hp, hq = hp / hp.sum(), hq / hq.sum()
        expected = 0.5 * (np.sum(hp * np.log(hp / hq)) + np.sum(hq * np.log(hq / hp)))
        assert hist_js(p, q, bins=4, smoothing=eps) == pytest.approx(expected, abs=1e-9)

    def test_constant_dimension_contributes_zero(self):
        p = np.column_stack([np.ones(5), np.arange(5.0)])
        q = np.column_stack([np.ones(5), np.arange(5.0) + 10])
        one_dim = hist_js(p[:, 1:], q[:, 1:], bins=8)
        assert hist_js(p, q, bins=8) == pytest.approx(one_dim / 2)


class TestDistLoss:

    @pytest.mark.parametrize("kind", ["kl", "js", "mmd"])
    def test_pair_sum_k2(self, kind, samples):
        p, q = samples
        spec = AlignmentSpec(kind=kind, mmd_bandwidth=1.0)
        loss = dist_loss([p, q], [p[:3], q[:4]], spec)
        single = {"kl": gaussian_kl, "js": sym_js}.get(kind)
        if single is None:
            expected = mmd2(p, q, 1.0).value + mmd2(p[:3], q[:4], 1.0).value
        else:
            expected = single(p, q).value + single(p[:3], q[:4]).value
        assert loss.value == pytest.approx(expected, rel=1e-12)

    def test_three_sources_three_pairs(self):
        rng = np.random.default_rng(0)
        xs = [rng.normal(loc=i, size=(6, 2)) for i in range(3)]
        spec = AlignmentSpec(kind="js")
        loss = dist_loss(xs, [x[:1] for x in xs], spec)
        expected = sum(sym_js(xs[i], xs[j]).value for i, j in [(0, 1), (0, 2), (1, 2)])
        assert loss.value == pytest.approx(expected, rel=1e-12)
        for grad in loss.relation_grads:
            assert not grad.any()

    def test_identical_sources_zero(self):
        x = np.random.default_rng(0).normal(size=(6, 2))
        for kind in ("kl", "js", "mmd"):
            assert dist_loss([x, x, x], [x, x, x], AlignmentSpec(kind=kind)).value == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("kind", ["js", "mmd"])
    def test_source_order_invariant(self, kind):
        rng = np.random.default_rng(5)
        xs = [rng.normal(loc=i, size=(7, 2)) for i in range(3)]
        rs = [rng.normal(size=(3, 2)) for _ in range(3)]
        spec = AlignmentSpec(kind=kind)
        order = [2, 0, 1]
        forward = dist_loss(xs, rs, spec)
        permuted = dist_loss([xs[i] for i in order], [rs[i] for i in order], spec)
        assert permuted.value == pytest.approx(forward.value, rel=1e-12)
        for new_pos, old in enumerate(order):
            np.testing.assert_allclose(permuted.entity_grads[new_pos], forward.entity_grads[old], rtol=1e-10, atol=1e-14)

    def test_single_source_warns(self, caplog):
        x = np.zeros((3, 2))
        with caplog.at_level(logging.WARNING):
            loss = dist_loss([x], [x], AlignmentSpec(kind="mmd"))
        assert loss.value == 0.0
        assert "alignment disabled" in caplog.text

    def test_adversarial_not_a_distance(self):
        with pytest.raises(ConfigError):
            dist_loss([np.zeros((2, 1))] * 2, [np.zeros((2, 1))] * 2, AlignmentSpec(kind="adversarial"))

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            AlignmentSpec(kind="wasserstein")
        with pytest.raises(ConfigError):
            AlignmentSpec(kind="mmd", mmd_bandwidth=-1.0)
        with pytest.raises(ConfigError):
            AlignmentSpec(lam=-0.1)
