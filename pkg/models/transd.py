#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# transd.py - TransD: ‖(M_r M_hᵀ + I)h + r − (M_r M_tᵀ + I)t‖_p

import numpy as np

from models.base import ScoringFunction, norm_grad, norm_value


class TransD(ScoringFunction):
    """
    動態投影平移模型

    M_h、M_t 為實體投影向量 (entity_proj)，M_r 為關係投影向量 (relation_proj)，
    (M_r M_hᵀ + I)h = M_r (M_h·h) + h。
    """
    name = "TransD"
    aux_tables = {
        "entity_proj": ("entity", "vector"),
        "relation_proj": ("relation", "vector"),
    }

    def _parts(self, tables, heads, rels, tails):
        ent, proj = tables["entity"], tables["entity_proj"]
        h, t = ent[heads], ent[tails]
        ah, at = proj[heads], proj[tails]
        b = tables["relation_proj"][rels]
        sh = (ah * h).sum(axis=1, keepdims=True)
        st = (at * t).sum(axis=1, keepdims=True)
        u = (b * sh + h) + tables["relation"][rels] - (b * st + t)
        return u, h, t, ah, at, b, sh, st

    def energy(self, tables, heads, rels, tails):
        return norm_value(self._parts(tables, heads, rels, tails)[0], self.p)

    def energy_grad(self, tables, heads, rels, tails, upstream):
        u, h, t, ah, at, b, sh, st = self._parts(tables, heads, rels, tails)
        g = norm_grad(u, self.p) * upstream[:, None]
        bg = (b * g).sum(axis=1, keepdims=True)
        both = np.concatenate([heads, tails])
        return {
            "entity": (both, np.concatenate([ah * bg + g, -(at * bg + g)])),
            "entity_proj": (both, np.concatenate([bg * h, -bg * t])),
            "relation": (rels, g),
            "relation_proj": (rels, g * (sh - st)),
        }
