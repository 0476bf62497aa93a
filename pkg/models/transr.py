#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# transr.py - TransR: ‖M_r h + r − M_r t‖_p，投影矩陣為 d×d (k = d)

import numpy as np

from models.base import ScoringFunction, norm_grad, norm_value


class TransR(ScoringFunction):
    """關係空間投影的平移模型"""
    name = "TransR"
    aux_tables = {"rel_matrix": ("relation", "matrix")}

    def _residual(self, tables, heads, rels, tails):
        ent = tables["entity"]
        m = tables["rel_matrix"][rels]
        diff = ent[heads] - ent[tails]
        u = np.einsum("nij,nj->ni", m, diff) + tables["relation"][rels]
        return u, m, diff

    def energy(self, tables, heads, rels, tails):
        u, _, _ = self._residual(tables, heads, rels, tails)
        return norm_value(u, self.p)

    def energy_grad(self, tables, heads, rels, tails, upstream):
        u, m, diff = self._residual(tables, heads, rels, tails)
        g = norm_grad(u, self.p) * upstream[:, None]
        gh = np.einsum("nij,ni->nj", m, g)
        return {
            "entity": (np.concatenate([heads, tails]), np.concatenate([gh, -gh])),
            "relation": (rels, g),
            "rel_matrix": (rels, g[:, :, None] * diff[:, None, :]),
        }
