#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# test_neuralnet.py - 前向傳播、反向傳播梯度、訓練與存檔

import io
import math

import numpy as np
import pytest

from embedding_store import OptimizerConfig
from hin_graph import ConfigError, NumericError, ShapeError
from neuralnet import Mlp, MlpSpec, accuracy, fit_classifier, load_mlp, one_hot, save_mlp


@pytest.fixture
def toy_net():
    return Mlp(MlpSpec((4, 5, 3, 3), seed=2))


@pytest.fixture
def toy_batch():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(6, 4))
    y = rng.dirichlet(np.ones(3), size=6)
    return x, y


class TestForward:

    def test_rows_are_distributions(self, toy_net):
        probs = toy_net.forward(np.random.default_rng(0).normal(size=(20, 4)))
        assert np.all(probs >= 0)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_zero_final_layer_uniform(self, toy_net):
        toy_net.weights[-1][...] = 0.0
        probs = toy_net.forward(np.ones((3, 4)))
        np.testing.assert_allclose(probs, 1.0 / 3)

    def test_empty_input(self, toy_net):
        assert toy_net.forward(np.zeros((0, 4))).shape == (0, 3)

    def test_width_mismatch(self, toy_net):
        with pytest.raises(ShapeError):
            toy_net.forward(np.zeros((2, 5)))

    def test_spec_needs_hidden_layer(self):
        with pytest.raises(ConfigError):
            MlpSpec((4, 2))

    def test_deterministic_init(self):
        a, b = Mlp(MlpSpec((3, 4, 2), seed=5)), Mlp(MlpSpec((3, 4, 2), seed=5))
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)


class TestLoss:

    def test_uniform_prediction_is_log_k(self, toy_net):
        toy_net.weights[-1][...] = 0.0
        targets = one_hot([0, 1, 2, 1], 3)
        assert toy_net.loss(np.ones((4, 4)), targets) == pytest.approx(math.log(3))

    def test_confident_correct_prediction(self):
        net = Mlp(MlpSpec((1, 1, 2), activation="identity", seed=0))
        net.weights[0][...] = 1.0
        net.weights[1][...] = [[-50.0, 50.0]]
        assert net.loss(np.ones((1, 1)), one_hot([1], 2)) < 1e-12

    def test_non_finite_step_rejected(self, toy_net):
        with pytest.raises(NumericError):
            toy_net.cross_entropy_step(np.full((1, 4), np.nan), one_hot([0], 3), OptimizerConfig())


class TestGradients:

    def test_weight_gradients(self, toy_net, toy_batch, fd_check):
        x, y = toy_batch
        _, d_w, d_b, _ = toy_net.gradients(x, y)
        rng = np.random.default_rng(1)
        for layer in range(len(toy_net.weights)):
            fd_check(lambda: toy_net.loss(x, y), toy_net.weights[layer], d_w[layer], samples=40, rng=rng)
            fd_check(lambda: toy_net.loss(x, y), toy_net.biases[layer], d_b[layer], samples=10, rng=rng)

    def test_input_gradient(self, toy_net, toy_batch, fd_check):
        x, y = toy_batch
        grad = toy_net.input_gradient(x, y)
        fd_check(lambda: toy_net.loss(x, y), x, grad, samples=100)

    def test_weighted_gradients(self, toy_net, toy_batch, fd_check):
        x, y = toy_batch
        w = np.array([0.5, 0.1, 0.1, 0.1, 0.1, 0.1])
        grad = toy_net.input_gradient(x, y, w)
        fd_check(lambda: toy_net.loss(x, y, w), x, grad, samples=50)

    def test_input_gradient_does_not_mutate(self, toy_net, toy_batch):
        before = toy_net.copy()
        toy_net.input_gradient(*toy_batch)
        for a, b in zip(before.weights + before.accum_w, toy_net.weights + toy_net.accum_w):
            np.testing.assert_array_equal(a, b)

    def test_zero_first_layer_zero_input_gradient(self, toy_net, toy_batch):
        toy_net.weights[0][...] = 0.0
        assert not toy_net.input_gradient(*toy_batch).any()

    def test_linear_net_scales_with_first_layer(self):
        net = Mlp(MlpSpec((2, 2, 2), activation="identity", seed=3))
        x = np.zeros((1, 2))
        target = one_hot([0], 2)
        base = net.input_gradient(x, target)
        net.weights[0] *= 2.0
        np.testing.assert_allclose(net.input_gradient(x, target), 2.0 * base)


class TestTraining:

    def test_separable_reaches_full_accuracy(self):
        rng = np.random.default_rng(0)
        x = np.vstack([rng.uniform(-3.0, -1.0, size=(50, 2)), rng.uniform(1.0, 3.0, size=(50, 2))])
        labels = np.repeat([0, 1], 50)
        net = Mlp(MlpSpec((2, 8, 2), seed=0))
        fit_classifier(net, x, labels, OptimizerConfig(learning_rate=0.1, weight_decay=0.0),
                       epochs=500, batch_size=100, rng=rng)
        assert accuracy(net.predict(x), labels) == 1.0

    def test_loss_decreases(self, toy_batch):
        x, y = toy_batch
        net = Mlp(MlpSpec((4, 5, 3), seed=0))
        first = net.cross_entropy_step(x, y, OptimizerConfig(learning_rate=0.05, weight_decay=0.0))
        for _ in range(50):
            last = net.cross_entropy_step(x, y, OptimizerConfig(learning_rate=0.05, weight_decay=0.0))
        assert last < first

    def test_accuracy_helper(self):
        assert accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75
        assert accuracy([], []) == 0.0


class TestPersistence:

    def test_round_trip(self, toy_net, toy_batch):
        toy_net.cross_entropy_step(*toy_batch, OptimizerConfig())
        buf = io.BytesIO()
        save_mlp(toy_net, buf)
        buf.seek(0)
        loaded = load_mlp(buf)
        assert loaded.spec == toy_net.spec
        for a, b in zip(loaded.weights + loaded.accum_b, toy_net.weights + toy_net.accum_b):
            np.testing.assert_array_equal(a, b)
