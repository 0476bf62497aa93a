#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# test_acceptance.py - 合成兩來源圖上的方向性重現 (執行時間較長，以 -m slow 選取)

from functools import lru_cache

import numpy as np
import pytest

from alignment import AlignmentSpec
from embedding_store import OptimizerConfig
from evaluation import EvalSpec, divergence_report, link_prediction
from hin_graph import synthetic_shifted_hin
from neuralnet import accuracy
from sampling import SamplerConfig, SourceAwareSampler
from scoring import ScoringModel, relation_rows
from trainer import EmbeddingTrainer, TrainConfig, train

pytestmark = pytest.mark.slow

EPOCHS = 200
DIM = 32
LEARNING_RATE = 0.05
DISCRIMINATOR_LR = 0.05
# 每側約 300 個實體，直方圖用 16 格
HIST_BINS = 16


@lru_cache(maxsize=None)
def shifted_hin():
    return synthetic_shifted_hin(n_core=200, n_private=100, dense_degree=12.0, sparse_degree=2.0, seed=0)


def _config(kind, lam=1.0, seed=0, epochs=EPOCHS):
    return TrainConfig(
        model=ScoringModel("TransE", norm_order=1, margin=1.0),
        sampler=SamplerConfig(batch_size=256, negatives_per_positive=4),
        alignment=AlignmentSpec(kind=kind, lam=lam, discriminator_lr=DISCRIMINATOR_LR),
        optimizer=OptimizerConfig(learning_rate=LEARNING_RATE),
        dim=DIM,
        epochs=epochs,
        checkpoint_every=0,
        seed=seed,
    )


@lru_cache(maxsize=None)
def trained_store(kind, lam=1.0, seed=0):
    return train(shifted_hin(), _config(kind, lam, seed)).store


def _divergence(store):
    return divergence_report(store, shifted_hin(), bins=HIST_BINS)[0].value


def _mrr(store, seed=0):
    spec = EvalSpec(arrow="sparse->dense", matcher_hidden=(64,), matcher_epochs=100, seed=seed)
    return link_prediction(store, shifted_hin(), spec)["mrr"]


def _random_mrr(pool_size):
    n = min(1000, pool_size - 1)
    return float(np.mean(1.0 / np.arange(1, n + 2)))


def _held_out_rows(trainer, batches):
    """只屬於單一來源的實體列與關係列，標上來源索引"""
    hin = trainer.hin
    owners = np.zeros(hin.vocab.num_entities, dtype=np.int64)
    for ents in hin.per_source_entities:
        owners[ents] += 1
    rows, labels = [], []
    for i, batch in enumerate(batches):
        ent, rel = trainer._gather(batch)
        ent = np.unique(ent[owners[ent] == 1])
        x = np.concatenate([trainer.store.tables["entity"][ent], relation_rows(trainer.store, rel)])
        rows.append(x)
        labels.append(np.full(len(x), i))
    return np.concatenate(rows), np.concatenate(labels)


class TestSyntheticGraph:

    def test_generator_degrees(self):
        hin = shifted_hin()
        for name, low, high in (("dense", 10.0, None), ("sparse", None, 3.0)):
            i = hin.source_index(name)
            degree = 2 * len(hin.sources[i]) / len(hin.per_source_entities[i])
            if low is not None:
                assert degree >= low
            if high is not None:
                assert degree <= high


class TestAlignmentEffect:

    def test_adversarial_halves_histogram_divergence(self):
        baseline = _divergence(trained_store("none"))
        aligned = _divergence(trained_store("adversarial"))
        assert aligned <= 0.5 * baseline

    def test_discriminator_accuracy_drops(self):
        hin = shifted_hin()
        trainer = EmbeddingTrainer(hin, _config("adversarial", epochs=60))
        sparse, dense = hin.source_index("sparse"), hin.source_index("dense")
        sparse_only = np.setdiff1d(hin.per_source_entities[sparse], hin.per_source_entities[dense])
        trainer.store.tables["entity"][sparse_only] += 1.5
        trainer.store.tables["relation"][np.unique(hin.sources[sparse][:, 1])] += 1.5

        held_out = SourceAwareSampler(hin, trainer.cfg.sampler, seed=99).sample_round()
        warmup = SourceAwareSampler(hin, trainer.cfg.sampler, seed=7)
        for _ in range(100):
            x, labels = _held_out_rows(trainer, warmup.sample_round())
            trainer.discriminator.cross_entropy_step(x, np.eye(hin.K)[labels], trainer.disc_cfg)
        x, labels = _held_out_rows(trainer, held_out)
        initial = accuracy(trainer.discriminator.predict(x), labels)

        trainer.train()
        x, labels = _held_out_rows(trainer, held_out)
        final = accuracy(trainer.discriminator.predict(x), labels)
        assert initial > 0.9
        assert final < initial - 0.2


class TestDownstream:

    def test_inductive_mrr_improves(self):
        aligned = np.mean([_mrr(trained_store("adversarial", seed=s), s) for s in range(3)])
        baseline = np.mean([_mrr(trained_store("none", seed=s), s) for s in range(3)])
        hin = shifted_hin()
        floor = _random_mrr(len(hin.per_source_entities[hin.source_index("dense")]))
        assert aligned >= 1.1 * baseline
        assert baseline > floor and aligned > floor

    def test_lambda_shape(self):
        mrr = {lam: _mrr(trained_store("adversarial", lam=lam)) for lam in (0.01, 1.0, 1000.0)}
        assert mrr[1.0] >= mrr[0.01]
        assert mrr[1.0] >= mrr[1000.0]
