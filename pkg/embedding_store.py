#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# embedding_store.py - 可學習參數表、Adagrad 更新與 EMB1 二進位存檔

import csv
import json
import logging
import struct
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from hin_graph import ConfigError, NumericError, ShapeError, StoreFormatError, _Reader

logger = logging.getLogger(__name__)

EMB_MAGIC = b"EMB1"
EMB_FORMAT_VERSION = 1
STORE_TAG = "STORE"

# 稀疏梯度: 表名 -> (列索引, 梯度列)
SparseGrad = Dict[str, Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class OptimizerConfig:
    """Adagrad 設定"""
    learning_rate: float = 0.005
    weight_decay: float = 0.001
    epsilon: float = 1e-10

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate 必須 > 0: {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay 不可為負: {self.weight_decay}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon 必須 > 0: {self.epsilon}")


class EmbeddingStore:
    """實體/關係向量與模型專屬參數表，每張表附帶 Adagrad 累加器"""

    def __init__(self, model_kind, num_entities, num_relations, dim, tables, accum=None, seed=None):
        self.model_kind = model_kind
        self.num_entities = int(num_entities)
        self.num_relations = int(num_relations)
        self.dim = int(dim)
        self.seed = seed
        self.tables: Dict[str, np.ndarray] = dict(tables)
        if accum is None:
            accum = {name: np.zeros_like(table) for name, table in self.tables.items()}
        self.accum: Dict[str, np.ndarray] = dict(accum)

    @property
    def complex_flag(self):
        return self.model_kind == "ComplEx"

    @property
    def entity_emb(self):
        return self.tables["entity"]

    @property
    def relation_emb(self):
        from scoring import relation_rows

        return relation_rows(self)

    @property
    def aux_params(self):
        from scoring import relation_table

        base = ("entity", relation_table(self.model_kind))
        return {k: v for k, v in self.tables.items() if k not in base}

    def copy(self):
        return EmbeddingStore(
            self.model_kind, self.num_entities, self.num_relations, self.dim,
            {k: v.copy() for k, v in self.tables.items()},
            {k: v.copy() for k, v in self.accum.items()},
            seed=self.seed,
        )

    def equals(self, other):
        """位元層級比較 (含累加器)"""
        if (self.model_kind, self.num_entities, self.num_relations, self.dim) != \
                (other.model_kind, other.num_entities, other.num_relations, other.dim):
            return False
        if list(self.tables) != list(other.tables):
            return False
        for name in self.tables:
            for a, b in ((self.tables[name], other.tables[name]), (self.accum[name], other.accum[name])):
                if a.dtype != b.dtype or a.shape != b.shape or a.tobytes() != b.tobytes():
                    return False
        return True


def init_store(model, num_entities, num_relations, dim, seed, dtype=np.float32) -> EmbeddingStore:
    """
    依模型配置建立參數表；向量 U(-6/√d, 6/√d)，投影矩陣為單位矩陣加 U(-0.01, 0.01) 雜訊

    參數表與累加器預設為 float32，與 EMB1 存檔精度相同；Adagrad 以 float64 計算後寫回。
    """
    from scoring import relation_table

    if dim < 1:
        raise ConfigError(f"嵌入維度必須 >= 1: {dim}")
    if model.kind == "ComplEx" and dim % 2:
        raise ConfigError(f"ComplEx 需要偶數維度: {dim}")

    rng = np.random.default_rng(seed)
    bound = 6.0 / np.sqrt(dim)
    rows = {"entity": num_entities, "relation": num_relations}
    layout = [("entity", "entity", "vector")]
    if relation_table(model.kind) == "relation":
        layout.append(("relation", "relation", "vector"))
    layout += [(name, owner, shape) for name, (owner, shape) in model.aux_layout.items()]

    tables = {}
    for name, owner, shape in layout:
        n = rows[owner]
        if shape == "vector":
            tables[name] = rng.uniform(-bound, bound, size=(n, dim)).astype(dtype)
        else:
            noise = rng.uniform(-0.01, 0.01, size=(n, dim, dim))
            tables[name] = (np.eye(dim)[None, :, :] + noise).astype(dtype)
    return EmbeddingStore(model.kind, num_entities, num_relations, dim, tables, seed=seed)


def adagrad_update(param, accum, grad, cfg: OptimizerConfig):
    """稠密 Adagrad：g ← grad + wd·param；accum += g²；param −= lr·g/(√accum + eps)，原地更新"""
    g = grad + cfg.weight_decay * param
    new_accum = accum + g * g
    new_param = param - cfg.learning_rate * g / (np.sqrt(new_accum) + cfg.epsilon)
    if not np.all(np.isfinite(new_param)):
        raise NumericError("Adagrad 更新產生非有限值")
    param[...] = new_param
    accum[...] = new_accum


def coalesce(index, rows):
    """合併重複列的梯度"""
    index = np.asarray(index, dtype=np.int64).ravel()
    uniq, inverse = np.unique(index, return_inverse=True)
    summed = np.zeros((len(uniq),) + rows.shape[1:], dtype=np.float64)
    np.add.at(summed, inverse, rows)
    return uniq, summed


def merge_grads(*grads: Optional[SparseGrad]) -> SparseGrad:
    """把多個稀疏梯度依表名串接"""
    merged: Dict[str, list] = {}
    for grad in grads:
        if not grad:
            continue
        for name, (idx, rows) in grad.items():
            merged.setdefault(name, []).append((np.asarray(idx, dtype=np.int64).ravel(), rows))
    return {
        name: (np.concatenate([i for i, _ in parts]), np.concatenate([r for _, r in parts], axis=0))
        for name, parts in merged.items()
    }


def adagrad_step(store: EmbeddingStore, grads: SparseGrad, cfg: OptimizerConfig):
    """稀疏 Adagrad；先檢查全部梯度再更新，未觸及的列不變"""
    prepared = []
    for name, (idx, rows) in grads.items():
        if name not in store.tables:
            raise ShapeError(f"未知的參數表: {name}")
        table = store.tables[name]
        idx = np.asarray(idx, dtype=np.int64).ravel()
        rows = np.asarray(rows, dtype=np.float64).reshape((len(idx),) + table.shape[1:])
        if len(idx) == 0:
            continue
        if idx.min() < 0 or idx.max() >= table.shape[0]:
            raise ShapeError(f"{name} 的列索引超出範圍")
        if not np.all(np.isfinite(rows)):
            raise NumericError(f"{name} 的梯度含有非有限值，拒絕更新")
        prepared.append((name, *coalesce(idx, rows)))

    updates = []
    for name, uniq, summed in prepared:
        param = store.tables[name][uniq].astype(np.float64)
        accum = store.accum[name][uniq].astype(np.float64)
        adagrad_update(param, accum, summed, cfg)
        updates.append((name, uniq, param, accum))
    # 全部成功才寫回
    for name, uniq, param, accum in updates:
        store.tables[name][uniq] = param
        store.accum[name][uniq] = accum


# ---------------------------------------------------------------- EMB1 容器

def write_container(sink, tag, meta: Mapping, tables: Mapping[str, np.ndarray]):
    """magic、版本、標籤、JSON 中繼資料，接著依序寫出各表 (little-endian)"""
    sink.write(EMB_MAGIC)
    sink.write(struct.pack("<I", EMB_FORMAT_VERSION))
    for text in (tag, json.dumps(meta, sort_keys=True)):
        data = text.encode("utf-8")
        sink.write(struct.pack("<I", len(data)))
        sink.write(data)
    sink.write(struct.pack("<I", len(tables)))
    for name, table in tables.items():
        arr = np.ascontiguousarray(table)
        dtype = arr.dtype.newbyteorder("<")
        for text in (name, dtype.str):
            data = text.encode("utf-8")
            sink.write(struct.pack("<I", len(data)))
            sink.write(data)
        sink.write(struct.pack("<I", arr.ndim))
        sink.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        sink.write(arr.astype(dtype, copy=False).tobytes())


def read_container(source, expected_tag=None):
    reader = _Reader(source)
    magic = reader.read(4)
    if magic != EMB_MAGIC:
        raise StoreFormatError(f"magic 不符: {magic!r}")
    version = reader.unpack("<I")
    if version != EMB_FORMAT_VERSION:
        raise StoreFormatError(f"不支援的版本: {version}")

    def read_text():
        n = reader.unpack("<I")
        try:
            return reader.read(n).decode("utf-8")
        except UnicodeDecodeError:
            raise StoreFormatError("標頭不是有效的 UTF-8") from None

    tag = read_text()
    if expected_tag is not None and tag != expected_tag:
        raise StoreFormatError(f"標籤不符: 預期 {expected_tag}，實際 {tag}")
    try:
        meta = json.loads(read_text())
    except json.JSONDecodeError as e:
        raise StoreFormatError(f"中繼資料損毀: {e}") from None
    tables = {}
    for _ in range(reader.unpack("<I")):
        name = read_text()
        try:
            dtype = np.dtype(read_text())
        except TypeError:
            raise StoreFormatError(f"表 {name} 的 dtype 無效") from None
        ndim = reader.unpack("<I")
        shape = struct.unpack(f"<{ndim}Q", reader.read(8 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        data = reader.read(count * dtype.itemsize)
        tables[name] = np.frombuffer(data, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    return tag, meta, tables


def save_store(store: EmbeddingStore, sink):
    meta = {
        "model": store.model_kind,
        "num_entities": store.num_entities,
        "num_relations": store.num_relations,
        "dim": store.dim,
        "seed": store.seed,
        "table_order": list(store.tables),
    }
    tables = dict(store.tables)
    tables.update({f"accum/{name}": acc for name, acc in store.accum.items()})
    write_container(sink, STORE_TAG, meta, tables)


def load_store(source) -> EmbeddingStore:
    from scoring import MODEL_KINDS, relation_table

    _, meta, tables = read_container(source, expected_tag=STORE_TAG)
    try:
        kind = meta["model"]
        order = meta["table_order"]
        dims = (meta["num_entities"], meta["num_relations"], meta["dim"])
    except KeyError as e:
        raise StoreFormatError(f"中繼資料缺少欄位: {e}") from None
    if kind not in MODEL_KINDS:
        raise StoreFormatError(f"未知的模型標籤: {kind}")
    try:
        params = {name: tables[name] for name in order}
        accum = {name: tables[f"accum/{name}"] for name in order}
    except KeyError as e:
        raise StoreFormatError(f"缺少參數表: {e}") from None
    relations = params.get(relation_table(kind))
    if params.get("entity") is None or relations is None:
        raise StoreFormatError(f"{kind} 參數表缺少實體或關係表")
    if params["entity"].shape != (dims[0], dims[2]) or relations.shape[:2] != (dims[1], dims[2]):
        raise StoreFormatError("參數表維度與中繼資料不符")
    return EmbeddingStore(kind, *dims, params, accum, seed=meta.get("seed"))


def save_store_file(store, path):
    with open(path, "wb") as f:
        save_store(store, f)


def load_store_file(path):
    with open(path, "rb") as f:
        return load_store(f)


# ---------------------------------------------------------------- CSV 匯出

def export_csv(store: EmbeddingStore, names: Sequence[str], sink, table="entity", source_labels=None):
    """輸出 `id,name,v0,...,v{d-1}`；給定 source_labels 時多一欄 sources 供外部繪圖上色

    矩陣形式的表 (RESCAL 關係) 每列攤平輸出。
    """
    matrix = store.tables[table]
    matrix = matrix.reshape(len(matrix), int(np.prod(matrix.shape[1:])))
    writer = csv.writer(sink, lineterminator="\n")
    header = ["id", "name"] + [f"v{j}" for j in range(matrix.shape[1])]
    if source_labels is not None:
        header.append("sources")
    writer.writerow(header)
    for i, row in enumerate(matrix):
        record = [i, names[i]] + [repr(float(x)) for x in row]
        if source_labels is not None:
            record.append(source_labels[i])
        writer.writerow(record)
    return len(matrix)
