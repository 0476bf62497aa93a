#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# transe.py - TransE: ‖h + r − t‖_p

import numpy as np

from models.base import ScoringFunction, norm_grad, norm_value


class TransE(ScoringFunction):
    """平移模型 TransE"""
    name = "TransE"

    def energy(self, tables, heads, rels, tails):
        ent, rel = tables["entity"], tables["relation"]
        u = ent[heads] + rel[rels] - ent[tails]
        return norm_value(u, self.p)

    def energy_grad(self, tables, heads, rels, tails, upstream):
        ent, rel = tables["entity"], tables["relation"]
        u = ent[heads] + rel[rels] - ent[tails]
        g = norm_grad(u, self.p) * upstream[:, None]
        return {
            "entity": (np.concatenate([heads, tails]), np.concatenate([g, -g])),
            "relation": (rels, g),
        }
