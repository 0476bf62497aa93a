#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# base.py - 評分函數共用介面與範數工具

import numpy as np


def norm_value(u, p):
    """每列的 p 範數"""
    if p == 1:
        return np.abs(u).sum(axis=1)
    return np.sqrt((u * u).sum(axis=1))


def norm_grad(u, p):
    """p 範數對 u 的 (次) 梯度；p=1 用 sign (sign(0)=0)，p=2 在 u=0 取零向量"""
    if p == 1:
        return np.sign(u)
    n = np.sqrt((u * u).sum(axis=1, keepdims=True))
    safe = np.where(n > 0, n, 1.0)
    return np.where(n > 0, u / safe, 0.0)


class ScoringFunction:
    """
    能量函數基底類別 (數值越低越合理)

    energy 與 energy_grad 皆對批次索引向量化；energy_grad 回傳
    Σ upstream_i · E_i 對每張參數表的稀疏梯度。
    """
    name = ""
    # 代表關係的參數表 (對齊、匹配器特徵與匯出使用)
    relation_table = "relation"
    # 額外參數表: 表名 -> (所屬: "entity"/"relation", 形狀: "vector"/"matrix")
    aux_tables = {}

    def __init__(self, norm_order=1):
        self.p = norm_order

    def energy(self, tables, heads, rels, tails):
        raise NotImplementedError

    def energy_grad(self, tables, heads, rels, tails, upstream):
        raise NotImplementedError
