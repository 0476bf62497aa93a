#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# neuralnet.py - 小型全連接網路 (ReLU 隱藏層 + softmax 輸出) 與反向傳播
#
# 對抗判別器 D、連結預測匹配器與節點分類器共用。

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from embedding_store import OptimizerConfig, adagrad_update, read_container, write_container
from hin_graph import ConfigError, NumericError, ShapeError

logger = logging.getLogger(__name__)

MLP_TAG = "MLP"


@dataclass(frozen=True)
class MlpSpec:
    """輸入 → 隱藏層... → 輸出 的寬度"""
    layer_dims: Tuple[int, ...]
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 3:
            raise ConfigError(f"至少需要一個隱藏層: {dims}")
        if min(dims) < 1:
            raise ConfigError(f"每層寬度必須 >= 1: {dims}")
        if self.activation not in ("relu", "identity"):
            raise ConfigError(f"未知的啟動函數: {self.activation}")


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class Mlp:
    """權重 W_l 形狀為 (輸入, 輸出)；每個參數附帶 Adagrad 累加器"""

    def __init__(self, spec: MlpSpec):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for fan_in, fan_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self.accum_w = [np.zeros_like(w) for w in self.weights]
        self.accum_b = [np.zeros_like(b) for b in self.biases]

    @property
    def input_dim(self):
        return self.spec.layer_dims[0]

    @property
    def output_dim(self):
        return self.spec.layer_dims[-1]

    def _check(self, inputs):
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"輸入寬度應為 {self.input_dim}，實際形狀 {x.shape}")
        return x

    def _act(self, z):
        return np.maximum(z, 0.0) if self.spec.activation == "relu" else z

    def _act_grad(self, z):
        return (z > 0).astype(np.float64) if self.spec.activation == "relu" else np.ones_like(z)

    def _forward(self, x):
        # 記住每層的前啟動值與輸出，供反向傳播使用
        pre, post = [], [x]
        a = x
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            pre.append(z)
            a = z if l == last else self._act(z)
            post.append(a)
        return pre, post

    def logits(self, inputs):
        return self._forward(self._check(inputs))[0][-1]

    def forward(self, inputs):
        """每列為機率分佈 (n, d_out)"""
        return np.exp(_log_softmax(self.logits(inputs)))

    def predict(self, inputs):
        return self.forward(inputs).argmax(axis=1)

    def _weights_for(self, n, weights):
        if weights is None:
            return np.full(n, 1.0 / n) if n else np.zeros(0)
        w = np.asarray(weights, dtype=np.float64).ravel()
        if len(w) != n:
            raise ShapeError(f"樣本權重長度 {len(w)} != {n}")
        return w

    def gradients(self, inputs, targets, weights=None):
        """
        加權交叉熵 Σ_i w_i · (−Σ_c y_ic log p_ic) 及其對各參數與輸入的梯度

        weights 省略時 w_i = 1/n (平均)。回傳 (loss, dW, db, dX)。
        """
        x = self._check(inputs)
        y = np.asarray(targets, dtype=np.float64)
        if y.shape != (len(x), self.output_dim):
            raise ShapeError(f"目標形狀應為 {(len(x), self.output_dim)}，實際 {y.shape}")
        w = self._weights_for(len(x), weights)
        pre, post = self._forward(x)
        logp = _log_softmax(pre[-1])
        loss = float(-(w[:, None] * y * logp).sum())

        dz = w[:, None] * (np.exp(logp) * y.sum(axis=1, keepdims=True) - y)
        d_w, d_b = [None] * len(self.weights), [None] * len(self.weights)
        for l in range(len(self.weights) - 1, -1, -1):
            d_w[l] = post[l].T @ dz
            d_b[l] = dz.sum(axis=0)
            da = dz @ self.weights[l].T
            if l > 0:
                dz = da * self._act_grad(pre[l - 1])
        return loss, d_w, d_b, da

    def loss(self, inputs, targets, weights=None):
        return self.gradients(inputs, targets, weights)[0]

    def cross_entropy_step(self, inputs, targets, cfg: OptimizerConfig, weights=None):
        """一次 Adagrad 更新；回傳更新前的損失"""
        loss, d_w, d_b, _ = self.gradients(inputs, targets, weights)
        if not np.isfinite(loss):
            raise NumericError(f"交叉熵損失非有限值: {loss}")
        for l in range(len(self.weights)):
            adagrad_update(self.weights[l], self.accum_w[l], d_w[l], cfg)
            adagrad_update(self.biases[l], self.accum_b[l], d_b[l], cfg)
        return loss

    def input_gradient(self, inputs, targets, weights=None):
        """損失對輸入的梯度，不改變網路參數"""
        return self.gradients(inputs, targets, weights)[3]

    def copy(self):
        other = Mlp.__new__(Mlp)
        other.spec = self.spec
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        other.accum_w = [a.copy() for a in self.accum_w]
        other.accum_b = [a.copy() for a in self.accum_b]
        return other


def one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def accuracy(predictions, labels):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(labels) == 0:
        return 0.0
    return float((predictions == labels).sum()) / len(labels)


def fit_classifier(mlp: Mlp, inputs, labels, cfg: OptimizerConfig, epochs=200, batch_size=256, rng=None):
    """以小批次交叉熵訓練分類器；回傳每個 epoch 的平均損失"""
    x = np.asarray(inputs, dtype=np.float64)
    y = one_hot(labels, mlp.output_dim)
    rng = rng if rng is not None else np.random.default_rng(mlp.spec.seed)
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(x))
        losses = []
        for start in range(0, len(x), batch_size):
            idx = order[start:start + batch_size]
            losses.append(mlp.cross_entropy_step(x[idx], y[idx], cfg))
        history.append(float(np.mean(losses)) if losses else 0.0)
    return history


def save_mlp(mlp: Mlp, sink):
    tables = {}
    for l in range(len(mlp.weights)):
        tables[f"W{l}"] = mlp.weights[l]
        tables[f"b{l}"] = mlp.biases[l]
        tables[f"accum/W{l}"] = mlp.accum_w[l]
        tables[f"accum/b{l}"] = mlp.accum_b[l]
    meta = {"layer_dims": list(mlp.spec.layer_dims), "activation": mlp.spec.activation, "seed": mlp.spec.seed}
    write_container(sink, MLP_TAG, meta, tables)


def load_mlp(source) -> Mlp:
    _, meta, tables = read_container(source, expected_tag=MLP_TAG)
    mlp = Mlp(MlpSpec(tuple(meta["layer_dims"]), meta.get("activation", "relu"), meta.get("seed", 0)))
    for l in range(len(mlp.weights)):
        mlp.weights[l] = tables[f"W{l}"]
        mlp.biases[l] = tables[f"b{l}"]
        mlp.accum_w[l] = tables[f"accum/W{l}"]
        mlp.accum_b[l] = tables[f"accum/b{l}"]
    return mlp
