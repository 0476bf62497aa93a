#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# sampling.py - 來源感知的平衡正樣本取樣與來源內負樣本替換

import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from hin_graph import ConfigError, Hin, SamplerError, SourceId, encode_triples

logger = logging.getLogger(__name__)

MAX_FILTER_ATTEMPTS = 100


@dataclass(frozen=True)
class SamplerConfig:
    """每輪每個來源 B 個正樣本，每個正樣本 k 個負樣本"""
    batch_size: int = 1024
    negatives_per_positive: int = 4
    head_tail_prob: float = 0.5
    filter_true: bool = False
    balanced: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size 必須 >= 1: {self.batch_size}")
        if self.negatives_per_positive < 1:
            raise ConfigError(f"negatives_per_positive 必須 >= 1: {self.negatives_per_positive}")
        if not 0.0 <= self.head_tail_prob <= 1.0:
            raise ConfigError(f"head_tail_prob 必須介於 0 與 1: {self.head_tail_prob}")


@dataclass
class Batch:
    """一個來源在一輪中的正負樣本"""
    source: SourceId
    positives: np.ndarray       # (B, 3)
    negatives: np.ndarray       # (B, k, 3)
    corrupted_head: np.ndarray  # (B, k) bool
    stream_id: int

    @property
    def size(self):
        return len(self.positives)


def corrupt_batch(positives, entities, k, cfg: SamplerConfig, rng, known_keys=None,
                  num_entities=None, num_relations=None):
    """
    為每個正樣本產生 k 個負樣本

    每個負樣本獨立決定替換頭或尾 (機率 head_tail_prob 替換頭)，
    替換實體從 entities 中去掉被替換者後均勻抽取。
    回傳 (negatives (B, k, 3), corrupted_head (B, k))。
    """
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    entities = np.unique(np.asarray(entities, dtype=np.int64))
    if len(entities) < 2:
        raise SamplerError(f"實體數 {len(entities)} < 2，無法替換")
    b = len(positives)
    negatives = np.repeat(positives[:, None, :], k, axis=1)
    corrupted_head = np.zeros((b, k), dtype=bool)

    def draw(mask):
        n = int(mask.sum())
        heads = rng.random(n) < cfg.head_tail_prob
        base = np.repeat(positives[:, None, :], k, axis=1)[mask]
        replaced = np.where(heads, base[:, 0], base[:, 2])
        slot = np.searchsorted(entities, replaced)
        present = entities[np.minimum(slot, len(entities) - 1)] == replaced
        j = rng.integers(0, len(entities) - present, size=n)
        j = j + (present & (j >= slot))
        new = entities[j]
        base[:, 0] = np.where(heads, new, base[:, 0])
        base[:, 2] = np.where(heads, base[:, 2], new)
        negatives[mask] = base
        corrupted_head[mask] = heads

    draw(np.ones((b, k), dtype=bool))
    if known_keys is not None and len(known_keys):
        for _ in range(MAX_FILTER_ATTEMPTS):
            keys = encode_triples(negatives.reshape(-1, 3), num_entities, num_relations).reshape(b, k)
            collide = np.isin(keys, known_keys)
            if not collide.any():
                break
            draw(collide)
    return negatives, corrupted_head


def corrupt(triple, entities, k, cfg: SamplerConfig, rng, known_keys=None,
            num_entities=None, num_relations=None):
    """單一三元組的 k 個負樣本 (k, 3)"""
    negs, _ = corrupt_batch([triple], entities, k, cfg, rng, known_keys, num_entities, num_relations)
    return negs[0]


class SourceAwareSampler:
    """每個來源擁有獨立種子的亂數串流"""

    def __init__(self, hin: Hin, cfg: SamplerConfig, seed=0):
        self.hin = hin
        self.cfg = cfg
        for name, arr, ents in zip(hin.source_names, hin.sources, hin.per_source_entities):
            if len(arr) < 1:
                raise SamplerError(f"來源 {name} 沒有三元組")
            if len(ents) < 2:
                raise SamplerError(f"來源 {name} 的實體數 {len(ents)} < 2，無法替換")
        streams = np.random.SeedSequence(seed).spawn(hin.K + 1)
        self.rngs = [np.random.default_rng(s) for s in streams[:hin.K]]
        # 合併取樣模式用的共用串流
        self.merge_rng = np.random.default_rng(streams[hin.K])
        self._offsets = np.cumsum([0] + [len(a) for a in hin.sources])

    @property
    def rounds_per_epoch(self):
        return math.ceil(max(len(a) for a in self.hin.sources) / self.cfg.batch_size)

    def _positive_indices(self):
        b, k = self.cfg.batch_size, self.hin.K
        if self.cfg.balanced:
            return [rng.integers(0, len(arr), size=b) for rng, arr in zip(self.rngs, self.hin.sources)]
        # 合併基準線：從所有來源的聯集均勻抽 K·B 條邊，再依來源分組
        flat = self.merge_rng.integers(0, int(self._offsets[-1]), size=b * k)
        owner = np.searchsorted(self._offsets, flat, side="right") - 1
        return [flat[owner == i] - self._offsets[i] for i in range(k)]

    def sample_round(self) -> List[Batch]:
        """回傳 K 個 Batch，依來源索引排序"""
        batches = []
        for i, idx in enumerate(self._positive_indices()):
            arr = self.hin.sources[i]
            positives = arr[idx]
            known = self.hin.triple_keys(i) if self.cfg.filter_true else None
            negatives, heads = corrupt_batch(
                positives, self.hin.per_source_entities[i], self.cfg.negatives_per_positive,
                self.cfg, self.rngs[i], known_keys=known,
                num_entities=self.hin.vocab.num_entities, num_relations=self.hin.vocab.num_relations,
            )
            batches.append(Batch(SourceId(i, self.hin.source_names[i]), positives, negatives, heads, i))
        return batches

    def get_state(self):
        return {
            "sources": [rng.bit_generator.state for rng in self.rngs],
            "merge": self.merge_rng.bit_generator.state,
        }

    def set_state(self, state):
        for rng, s in zip(self.rngs, state["sources"]):
            rng.bit_generator.state = s
        self.merge_rng.bit_generator.state = state["merge"]


def sample_round(hin: Hin, cfg: SamplerConfig, sampler: Optional[SourceAwareSampler] = None, seed=0):
    """一輪來源感知取樣；未給 sampler 時以 seed 建立"""
    if sampler is None:
        sampler = SourceAwareSampler(hin, cfg, seed=seed)
    return sampler.sample_round()
