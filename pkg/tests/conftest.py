#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# conftest.py - 共用測試資料與有限差分工具

import numpy as np
import pytest

from hin_graph import build_hin, synthetic_shifted_hin


def central_difference(f, array, index, eps=1e-6):
    """對 array[index] 做中央差分；array 原地擾動後還原"""
    original = array[index]
    array[index] = original + eps
    plus = f()
    array[index] = original - eps
    minus = f()
    array[index] = original
    return (plus - minus) / (2 * eps)


def assert_gradient_matches(f, array, analytic, samples=100, rng=None, eps=1e-6, rtol=1e-4, atol=1e-7):
    """在 samples 個隨機位置比較解析梯度與數值梯度"""
    rng = rng if rng is not None else np.random.default_rng(0)
    flat = rng.integers(0, array.size, size=samples)
    for k in flat:
        index = np.unravel_index(int(k), array.shape)
        numeric = central_difference(f, array, index, eps)
        expected = analytic[index]
        scale = max(abs(numeric), abs(expected))
        assert abs(numeric - expected) <= rtol * scale + atol, \
            f"位置 {index}: 解析 {expected} 數值 {numeric}"


@pytest.fixture
def fd_check():
    return assert_gradient_matches


@pytest.fixture
def toy_manifest():
    return {
        "B": [("x", "likes", "y"), ("y", "likes", "z"), ("z", "knows", "x"), ("x", "likes", "y")],
        "A": [("a", "owns", "b"), ("b", "owns", "x"), ("a", "near", "x")],
    }


@pytest.fixture
def toy_hin(toy_manifest):
    return build_hin(toy_manifest)


@pytest.fixture
def imbalanced_hin():
    """兩個來源，邊數比 10:1"""
    big = [(f"u{i}", "r", f"u{(i * 7 + 1) % 50}") for i in range(100)]
    small = [(f"v{i}", "s", f"v{(i + 1) % 10}") for i in range(10)]
    return build_hin({"big": big, "small": small})


@pytest.fixture(scope="session")
def small_shifted_hin():
    return synthetic_shifted_hin(n_core=40, n_private=20, dense_degree=10.0, sparse_degree=2.0, seed=3)
