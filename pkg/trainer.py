#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# trainer.py - 嵌入訓練主流程：L_tot = L_align + λ·L_sim，對抗式交替更新、檢查點與日誌

import csv
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional

import numpy as np
import psutil
from tqdm import tqdm

from alignment import AlignmentSpec, dist_loss
from embedding_store import (
    EmbeddingStore, OptimizerConfig, adagrad_step, init_store, load_store_file,
    merge_grads, save_store_file,
)
from hin_graph import ConfigError, Hin, NumericError
from neuralnet import Mlp, MlpSpec, load_mlp, one_hot, save_mlp
from sampling import Batch, SamplerConfig, SourceAwareSampler
from scoring import ScoringModel, batch_energy, batch_energy_grad, batch_margin_loss, relation_rows, relation_table

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "sim_loss", "align_loss", "disc_loss", "wall_time", "memory_mb"]


@dataclass(frozen=True)
class TrainConfig:
    """一次嵌入訓練的完整設定"""
    model: ScoringModel = field(default_factory=ScoringModel)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    alignment: AlignmentSpec = field(default_factory=AlignmentSpec)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    dim: int = 100
    epochs: int = 2000
    checkpoint_every: int = 100
    seed: int = 0
    discriminator_steps_per_batch: int = 1
    threads: int = 1
    progress: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs 必須 >= 1: {self.epochs}")
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every 不可為負: {self.checkpoint_every}")
        if self.discriminator_steps_per_batch < 1:
            raise ConfigError("discriminator_steps_per_batch 必須 >= 1")
        if self.threads < 1:
            raise ConfigError(f"threads 必須 >= 1: {self.threads}")

    def to_dict(self):
        data = asdict(self)
        data["alignment"]["discriminator_hidden"] = list(self.alignment.discriminator_hidden)
        return data

    @classmethod
    def from_dict(cls, data):
        nested = {"model": ScoringModel, "sampler": SamplerConfig,
                  "alignment": AlignmentSpec, "optimizer": OptimizerConfig}
        kwargs = {}
        for f in fields(cls):
            if f.name not in data:
                continue
            value = data[f.name]
            if f.name in nested:
                value = nested[f.name](**value)
            kwargs[f.name] = value
        return cls(**kwargs)


@dataclass
class TrainLogRecord:
    epoch: int
    sim_loss: float
    align_loss: float
    disc_loss: float
    wall_time: float
    memory_mb: float


@dataclass
class TrainResult:
    store: EmbeddingStore
    log: List[TrainLogRecord]
    checkpoints: List[str]


class EmbeddingTrainer:
    """多來源 HIN 嵌入訓練器"""

    def __init__(self, hin: Hin, cfg: TrainConfig, store: Optional[EmbeddingStore] = None,
                 discriminator: Optional[Mlp] = None, sampler: Optional[SourceAwareSampler] = None,
                 out_dir: Optional[str] = None):
        self.hin = hin
        self.cfg = cfg
        self.out_dir = out_dir
        self.store = store if store is not None else init_store(
            cfg.model, hin.vocab.num_entities, hin.vocab.num_relations, cfg.dim, cfg.seed)
        if self.store.model_kind != cfg.model.kind:
            raise ConfigError(f"參數表屬於 {self.store.model_kind}，設定為 {cfg.model.kind}")
        self.sampler = sampler if sampler is not None else SourceAwareSampler(hin, cfg.sampler, seed=cfg.seed + 1)
        self.rng = np.random.default_rng(cfg.seed + 2)
        self.epoch = 0
        self.log: List[TrainLogRecord] = []
        self.checkpoints: List[str] = []
        self.rel_table = relation_table(cfg.model.kind)

        kind = cfg.alignment.kind
        self.align_enabled = kind != "none"
        if self.align_enabled and hin.K < 2:
            logger.warning(f"alignment disabled: 只有 {hin.K} 個來源，{kind} 對齊不啟用")
            self.align_enabled = False
        # kind = none 時 λ 固定為 1
        self.lam = cfg.alignment.lam if kind != "none" else 1.0

        self.discriminator = None
        if kind == "adversarial" and self.align_enabled:
            if cfg.alignment.adversarial_target == "flip" and hin.K != 2:
                raise ConfigError("adversarial_target = flip 只適用於兩個來源")
            self.discriminator = discriminator if discriminator is not None else Mlp(MlpSpec(
                (cfg.dim,) + cfg.alignment.discriminator_hidden + (hin.K,), seed=cfg.seed + 3))
            self.disc_cfg = OptimizerConfig(learning_rate=cfg.alignment.discriminator_lr,
                                            weight_decay=0.0, epsilon=cfg.optimizer.epsilon)
            # 判別器只接受 d 維的列；RESCAL 的關係矩陣不送進判別器
            self.disc_relations = self.store.tables[self.rel_table].ndim == 2
            if not self.disc_relations:
                logger.info(f"{cfg.model.kind} 的關係參數不是 d 維向量，判別器只看實體列")
        elif discriminator is not None:
            raise ConfigError("只有 adversarial 對齊才使用判別器")

    # ------------------------------------------------------------ 單輪

    def _similarity(self, batch: Batch):
        """來源內平均的邊界損失與 λ 縮放後的稀疏梯度"""
        b = batch.size
        if b == 0:
            return 0.0, {}
        k = batch.negatives.shape[1]
        triples = np.concatenate([batch.positives, batch.negatives.reshape(-1, 3)])
        energies = batch_energy(self.cfg.model, self.store, triples)
        if not np.all(np.isfinite(energies)):
            raise NumericError(f"來源 {batch.source.name} 的能量含有非有限值")
        loss, d_pos, d_neg = batch_margin_loss(energies[:b], energies[b:].reshape(b, k), self.cfg.model.margin)
        upstream = self.lam * np.concatenate([d_pos, d_neg.ravel()]) / b
        grads = batch_energy_grad(self.cfg.model, self.store, triples, upstream)
        return float(loss.sum()) / b, grads

    def _gather(self, batch: Batch):
        pos, neg = batch.positives, batch.negatives
        ent = np.concatenate([pos[:, 0], pos[:, 2], neg[:, :, 0].ravel(), neg[:, :, 2].ravel()])
        rel = np.unique(pos[:, 1])
        return ent, rel

    def _subsample(self, idx):
        cap = self.cfg.alignment.mmd_max_rows
        if self.cfg.alignment.kind == "mmd" and len(idx) > cap:
            idx = idx[np.sort(self.rng.choice(len(idx), size=cap, replace=False))]
        return idx

    def _distance_alignment(self, batches):
        ent_tab = self.store.tables["entity"]
        gathered = [self._gather(b) for b in batches]
        ent_idx = [self._subsample(e) for e, _ in gathered]
        rel_idx = [self._subsample(r) for _, r in gathered]
        result = dist_loss([ent_tab[i] for i in ent_idx], [relation_rows(self.store, i) for i in rel_idx],
                           self.cfg.alignment)
        rel_shape = self.store.tables[self.rel_table].shape[1:]
        grads = [
            {"entity": (ent_idx[i], result.entity_grads[i]),
             self.rel_table: (rel_idx[i], result.relation_grads[i].reshape((len(rel_idx[i]),) + rel_shape))}
            for i in range(len(batches))
        ]
        return result.value, 0.0, grads

    def _adversarial_rows(self, batch: Batch):
        """判別器輸入：批次中的實體列，關係向量寬度為 d 時再接上關係列"""
        ent, rel = self._gather(batch)
        x = self.store.tables["entity"][ent]
        if not self.disc_relations:
            return ent, rel[:0], x
        return ent, rel, np.concatenate([x, relation_rows(self.store, rel)])

    def _adversarial_alignment(self, batches):
        """
        先以真實來源標籤更新 D，再凍結 D 計算混淆目標的損失與輸入梯度

        每列權重為 1/B_i (B_i 為該來源的正樣本數)，L_adv 與 L_sim 一樣以正樣本平均。
        """
        k = self.hin.K
        parts = [self._adversarial_rows(b) for b in batches]
        x = np.concatenate([p[2] for p in parts])
        labels = np.concatenate([np.full(len(p[2]), i) for i, p in enumerate(parts)])
        weights = np.concatenate([np.full(len(p[2]), 1.0 / max(b.size, 1)) for b, p in zip(batches, parts)])

        truth = one_hot(labels, k)
        disc_loss = 0.0
        for _ in range(self.cfg.discriminator_steps_per_batch):
            disc_loss = self.discriminator.cross_entropy_step(x, truth, self.disc_cfg, weights)

        if self.cfg.alignment.adversarial_target == "flip":
            target = one_hot(1 - labels, k)
        else:
            target = np.full((len(x), k), 1.0 / k)
        adv_loss, _, _, grad_x = self.discriminator.gradients(x, target, weights)

        grads, start = [], 0
        for ent, rel, rows in parts:
            g = grad_x[start:start + len(rows)]
            grad = {"entity": (ent, g[:len(ent)])}
            if self.disc_relations:
                grad[self.rel_table] = (rel, g[len(ent):])
            grads.append(grad)
            start += len(rows)
        return adv_loss, disc_loss, grads

    def _apply_round(self, grads):
        """依來源索引順序套用各來源的梯度；任何一步失敗時還原本輪觸及的列"""
        touched = {}
        for grad in grads:
            for name, (idx, _) in grad.items():
                if name in self.store.tables:
                    touched.setdefault(name, []).append(np.asarray(idx, dtype=np.int64).ravel())
        backup = {}
        for name, parts in touched.items():
            rows = np.unique(np.concatenate(parts))
            rows = rows[(rows >= 0) & (rows < len(self.store.tables[name]))]
            backup[name] = (rows, self.store.tables[name][rows].copy(), self.store.accum[name][rows].copy())
        try:
            for grad in grads:
                adagrad_step(self.store, grad, self.cfg.optimizer)
        except NumericError:
            for name, (rows, params, accum) in backup.items():
                self.store.tables[name][rows] = params
                self.store.accum[name][rows] = accum
            raise

    def train_round(self):
        batches = self.sampler.sample_round()
        sim_loss, align_loss, disc_loss = 0.0, 0.0, 0.0
        try:
            if self.cfg.threads > 1:
                with ThreadPoolExecutor(max_workers=self.cfg.threads) as pool:
                    sim_parts = list(pool.map(self._similarity, batches))
            else:
                sim_parts = [self._similarity(b) for b in batches]
            sim_loss = sum(loss for loss, _ in sim_parts)

            align_grads = [{} for _ in batches]
            if self.align_enabled:
                if self.cfg.alignment.kind == "adversarial":
                    align_loss, disc_loss, align_grads = self._adversarial_alignment(batches)
                else:
                    align_loss, disc_loss, align_grads = self._distance_alignment(batches)
            if not all(np.isfinite([sim_loss, align_loss, disc_loss])):
                raise NumericError(f"損失非有限值: sim={sim_loss}, align={align_loss}, disc={disc_loss}")
            self._apply_round([merge_grads(s, a) for (_, s), a in zip(sim_parts, align_grads)])
        except NumericError:
            self._dump_batches(batches, sim_loss, align_loss, disc_loss)
            raise
        return sim_loss, align_loss, disc_loss

    def _dump_batches(self, batches, sim_loss, align_loss, disc_loss):
        dump = {
            "epoch": self.epoch + 1,
            "losses": {"sim": repr(sim_loss), "align": repr(align_loss), "disc": repr(disc_loss)},
            "batches": [
                {"source": b.source.name, "positives": b.positives.tolist(), "negatives": b.negatives.tolist()}
                for b in batches
            ],
        }
        logger.error(f"第 {self.epoch + 1} 個 epoch 出現非有限損失，中止")
        if self.out_dir:
            path = os.path.join(self.out_dir, f"nonfinite_batch_epoch{self.epoch + 1}.json")
            with open(path, "w", encoding="utf-8") as f:
                json.dump(dump, f)
            logger.error(f"批次內容已寫入 {path}")

    # ------------------------------------------------------------ epoch

    def train_epoch(self) -> TrainLogRecord:
        start = time.time()
        rounds = self.sampler.rounds_per_epoch
        totals = np.zeros(3)
        for _ in range(rounds):
            totals += self.train_round()
        self.epoch += 1
        sim, align, disc = totals / rounds
        record = TrainLogRecord(
            epoch=self.epoch, sim_loss=float(sim), align_loss=float(align), disc_loss=float(disc),
            wall_time=time.time() - start,
            memory_mb=psutil.Process().memory_info().rss / 2 ** 20,
        )
        self.log.append(record)
        logger.info(f"epoch {record.epoch}: L_sim={record.sim_loss:.6f} L_align={record.align_loss:.6f} "
                    f"L_D={record.disc_loss:.6f} ({record.wall_time:.2f}s, {record.memory_mb:.0f} MB)")
        return record

    def train(self) -> TrainResult:
        for epoch in tqdm(range(self.epoch + 1, self.cfg.epochs + 1), desc="training",
                          initial=self.epoch, total=self.cfg.epochs, disable=not self.cfg.progress):
            self.train_epoch()
            every = self.cfg.checkpoint_every
            if self.out_dir and every and epoch % every == 0 and epoch != self.cfg.epochs:
                self.save_checkpoint()
        if self.out_dir:
            self.save_checkpoint()
            save_store_file(self.store, os.path.join(self.out_dir, "final.emb"))
            write_log_csv(self.log, os.path.join(self.out_dir, "log.csv"))
            logger.info(f"訓練完成，輸出於 {self.out_dir}")
        return TrainResult(self.store, list(self.log), list(self.checkpoints))

    # ------------------------------------------------------------ 檢查點

    def save_checkpoint(self):
        """寫出參數表、判別器與 JSON 附檔 (設定、epoch、亂數狀態、日誌)"""
        os.makedirs(self.out_dir, exist_ok=True)
        stem = f"checkpoint_epoch{self.epoch:05d}"
        save_store_file(self.store, os.path.join(self.out_dir, stem + ".emb"))
        disc_file = None
        if self.discriminator is not None:
            disc_file = stem + ".disc"
            with open(os.path.join(self.out_dir, disc_file), "wb") as f:
                save_mlp(self.discriminator, f)
        sidecar = {
            "epoch": self.epoch,
            "config": self.cfg.to_dict(),
            "store_file": stem + ".emb",
            "discriminator_file": disc_file,
            "sampler_state": self.sampler.get_state(),
            "rng_state": self.rng.bit_generator.state,
            "log": [asdict(r) for r in self.log],
        }
        path = os.path.join(self.out_dir, stem + ".json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(sidecar, f, indent=2)
        write_log_csv(self.log, os.path.join(self.out_dir, "log.csv"))
        self.checkpoints.append(path)
        logger.info(f"檢查點已儲存: {path}")
        return path

    @classmethod
    def from_checkpoint(cls, hin: Hin, path, out_dir=None, cfg: Optional[TrainConfig] = None):
        """由檢查點附檔恢復；cfg 省略時使用附檔中的設定"""
        with open(path, "r", encoding="utf-8") as f:
            sidecar = json.load(f)
        base = os.path.dirname(path)
        cfg = cfg or TrainConfig.from_dict(sidecar["config"])
        store = load_store_file(os.path.join(base, sidecar["store_file"]))
        disc = None
        if sidecar.get("discriminator_file"):
            with open(os.path.join(base, sidecar["discriminator_file"]), "rb") as f:
                disc = load_mlp(f)
        trainer = cls(hin, cfg, store=store, discriminator=disc, out_dir=out_dir or base)
        trainer.sampler.set_state(sidecar["sampler_state"])
        trainer.rng.bit_generator.state = sidecar["rng_state"]
        trainer.epoch = int(sidecar["epoch"])
        trainer.log = [TrainLogRecord(**r) for r in sidecar.get("log", [])]
        logger.info(f"由 {path} 恢復訓練 (epoch {trainer.epoch})")
        return trainer


def write_log_csv(records, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=LOG_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for record in records:
            writer.writerow(asdict(record))


def train_epoch(hin: Hin, store: EmbeddingStore, discriminator: Optional[Mlp], cfg: TrainConfig,
                rng: np.random.Generator, sampler: Optional[SourceAwareSampler] = None,
                epoch: int = 0) -> TrainLogRecord:
    """
    以呼叫端持有的狀態跑一個 epoch

    store、discriminator、rng 與 sampler 都原地更新；連續呼叫並傳入同一組狀態時，
    等同於同一個訓練器連跑數個 epoch。
    epoch 為已完成的 epoch 數。對抗式對齊必須傳入判別器，其他模式不可傳入。
    """
    if cfg.alignment.kind == "adversarial" and discriminator is None and hin.K >= 2:
        raise ConfigError("adversarial 對齊需要傳入判別器")
    if sampler is None:
        sampler = SourceAwareSampler(hin, cfg.sampler, seed=cfg.seed + 1)
    trainer = EmbeddingTrainer(hin, cfg, store=store, discriminator=discriminator, sampler=sampler)
    trainer.rng = rng
    trainer.epoch = epoch
    return trainer.train_epoch()


def train(hin: Hin, cfg: TrainConfig, out_dir=None, resume_from=None) -> TrainResult:
    if resume_from:
        trainer = EmbeddingTrainer.from_checkpoint(hin, resume_from, out_dir=out_dir, cfg=cfg)
    else:
        trainer = EmbeddingTrainer(hin, cfg, out_dir=out_dir)
    return trainer.train()


def mean_positive_energy(model: ScoringModel, store: EmbeddingStore, hin: Hin) -> float:
    return float(np.mean(batch_energy(model, store, hin.edges)))
