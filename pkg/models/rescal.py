#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# rescal.py - RESCAL: −hᵀ M_r t

import numpy as np

from models.base import ScoringFunction


class RESCAL(ScoringFunction):
    """雙線性模型，每個關係一個 d×d 矩陣；關係只由矩陣表示，沒有關係向量表"""
    name = "RESCAL"
    relation_table = "rel_matrix"
    aux_tables = {"rel_matrix": ("relation", "matrix")}

    def energy(self, tables, heads, rels, tails):
        ent = tables["entity"]
        m = tables["rel_matrix"][rels]
        return -np.einsum("ni,nij,nj->n", ent[heads], m, ent[tails])

    def energy_grad(self, tables, heads, rels, tails, upstream):
        ent = tables["entity"]
        h, t = ent[heads], ent[tails]
        m = tables["rel_matrix"][rels]
        w = -upstream[:, None]
        gh = w * np.einsum("nij,nj->ni", m, t)
        gt = w * np.einsum("nij,ni->nj", m, h)
        gm = w[:, :, None] * h[:, :, None] * t[:, None, :]
        return {
            "entity": (np.concatenate([heads, tails]), np.concatenate([gh, gt])),
            "rel_matrix": (rels, gm),
        }
