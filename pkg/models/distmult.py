#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# distmult.py - DistMult: −hᵀ diag(r) t

import numpy as np

from models.base import ScoringFunction


class DistMult(ScoringFunction):
    """對角雙線性模型，只能表達對稱關係"""
    name = "DistMult"

    def energy(self, tables, heads, rels, tails):
        ent = tables["entity"]
        return -(ent[heads] * tables["relation"][rels] * ent[tails]).sum(axis=1)

    def energy_grad(self, tables, heads, rels, tails, upstream):
        ent = tables["entity"]
        h, r, t = ent[heads], tables["relation"][rels], ent[tails]
        w = -upstream[:, None]
        return {
            "entity": (np.concatenate([heads, tails]), np.concatenate([w * r * t, w * h * r])),
            "relation": (rels, w * h * t),
        }
