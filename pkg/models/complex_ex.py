#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# complex_ex.py - ComplEx: −Re(hᵀ diag(r) t̄)，向量前半為實部、後半為虛部

import numpy as np

from models.base import ScoringFunction


def _split(x):
    half = x.shape[1] // 2
    return x[:, :half], x[:, half:]


class ComplEx(ScoringFunction):
    """複數空間的對角雙線性模型"""
    name = "ComplEx"

    def energy(self, tables, heads, rels, tails):
        ent = tables["entity"]
        hr, hi = _split(ent[heads])
        rr, ri = _split(tables["relation"][rels])
        tr, ti = _split(ent[tails])
        real = hr * rr * tr + hi * rr * ti + hr * ri * ti - hi * ri * tr
        return -real.sum(axis=1)

    def energy_grad(self, tables, heads, rels, tails, upstream):
        ent = tables["entity"]
        hr, hi = _split(ent[heads])
        rr, ri = _split(tables["relation"][rels])
        tr, ti = _split(ent[tails])
        w = -upstream[:, None]
        gh = np.concatenate([rr * tr + ri * ti, rr * ti - ri * tr], axis=1)
        gr = np.concatenate([hr * tr + hi * ti, hr * ti - hi * tr], axis=1)
        gt = np.concatenate([hr * rr - hi * ri, hr * ri + hi * rr], axis=1)
        return {
            "entity": (np.concatenate([heads, tails]), np.concatenate([w * gh, w * gt])),
            "relation": (rels, w * gr),
        }
