#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# scoring.py - 評分函數登錄表、能量/梯度介面與邊界損失

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from hin_graph import ConfigError
from models.complex_ex import ComplEx
from models.distmult import DistMult
from models.rescal import RESCAL
from models.transd import TransD
from models.transe import TransE
from models.transr import TransR

# 評分函數列表 (能量越低代表邊越合理)
MODEL_REGISTRY = [
    {"id": 1, "name": "TransE", "description": "‖h + r − t‖_p", "model_class": TransE},
    {"id": 2, "name": "TransR", "description": "‖M_r h + r − M_r t‖_p", "model_class": TransR},
    {"id": 3, "name": "TransD", "description": "‖(M_r M_hᵀ + I)h + r − (M_r M_tᵀ + I)t‖_p", "model_class": TransD},
    {"id": 4, "name": "RESCAL", "description": "−hᵀ M_r t", "model_class": RESCAL},
    {"id": 5, "name": "DistMult", "description": "−hᵀ diag(r) t", "model_class": DistMult},
    {"id": 6, "name": "ComplEx", "description": "−Re(hᵀ diag(r) t̄)", "model_class": ComplEx},
]
MODEL_KINDS = {entry["name"]: entry["model_class"] for entry in MODEL_REGISTRY}


@dataclass(frozen=True)
class ScoringModel:
    """評分函數種類、範數階數 p 與邊界 γ"""
    kind: str = "TransE"
    norm_order: int = 1
    margin: float = 1.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"未知的評分函數: {self.kind} (可用: {sorted(MODEL_KINDS)})")
        if self.norm_order not in (1, 2):
            raise ConfigError(f"norm_order 必須是 1 或 2: {self.norm_order}")
        if not self.margin > 0:
            raise ConfigError(f"margin 必須 > 0: {self.margin}")

    @property
    def aux_layout(self):
        """額外參數表: 表名 -> (所屬, 形狀)"""
        return dict(MODEL_KINDS[self.kind].aux_tables)


def get_scoring_function(model: ScoringModel):
    return MODEL_KINDS[model.kind](norm_order=model.norm_order)


def relation_table(kind) -> str:
    return MODEL_KINDS[kind].relation_table


def relation_rows(store, index=None) -> np.ndarray:
    """關係的參數列，每個關係攤平成一列 (RESCAL 的 d×d 矩陣成為 d² 維)"""
    table = store.tables[relation_table(store.model_kind)]
    rows = table if index is None else table[np.asarray(index, dtype=np.int64)]
    return rows.reshape(len(rows), int(np.prod(table.shape[1:])))


def _check_store(model, store):
    if store.model_kind != model.kind:
        raise ConfigError(f"參數表屬於 {store.model_kind}，不能用 {model.kind} 評分")


def _columns(triples):
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    return triples[:, 0], triples[:, 1], triples[:, 2]


def batch_energy(model: ScoringModel, store, triples) -> np.ndarray:
    """一批三元組 (n, 3) 的能量"""
    _check_store(model, store)
    h, r, t = _columns(triples)
    return get_scoring_function(model).energy(store.tables, h, r, t)


def batch_energy_grad(model: ScoringModel, store, triples, upstream):
    """Σ upstream_i · E_i 的稀疏梯度"""
    _check_store(model, store)
    h, r, t = _columns(triples)
    upstream = np.broadcast_to(np.asarray(upstream, dtype=np.float64), h.shape)
    return get_scoring_function(model).energy_grad(store.tables, h, r, t, upstream)


def energy(model: ScoringModel, store, triple) -> float:
    return float(batch_energy(model, store, [triple])[0])


def energy_grad(model: ScoringModel, store, triple):
    return batch_energy_grad(model, store, [triple], 1.0)


def margin_loss(model: ScoringModel, pos: float, negs: Sequence[float]):
    """
    Σ_neg [f(pos) − f(neg) + γ]_+

    回傳 (loss, d loss/d pos, d loss/d negs)
    """
    negs = np.asarray(negs, dtype=np.float64)
    if negs.size == 0:
        raise ValueError("至少需要一個負樣本")
    loss, d_pos, d_neg = batch_margin_loss(np.array([pos], dtype=np.float64), negs[None, :], model.margin)
    return float(loss.sum()), float(d_pos[0]), d_neg[0]


def batch_margin_loss(pos, negs, margin):
    """pos: (B,)、negs: (B, k)；回傳每個正樣本的損失 (B,) 與對能量的導數"""
    hinge = pos[:, None] - negs + margin
    active = hinge > 0
    # NaN 照樣傳到損失，不被 hinge 截成 0
    loss = np.where(active | np.isnan(hinge), hinge, 0.0).sum(axis=1)
    d_neg = -active.astype(np.float64)
    d_pos = active.sum(axis=1).astype(np.float64)
    return loss, d_pos, d_neg
