#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# evaluation.py - 下游評估：歸納式連結預測 (MLP 匹配器 + 排名指標)、節點分類、來源差異報表

import csv
import itertools
import json
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from alignment import hist_js, mmd2
from embedding_store import EmbeddingStore, OptimizerConfig
from hin_graph import ConfigError, EvaluationError, Hin, ParseError, encode_triples, iter_lines
from neuralnet import Mlp, MlpSpec, accuracy, fit_classifier
from sampling import SamplerConfig, corrupt_batch
from scoring import relation_rows

logger = logging.getLogger(__name__)

DEFAULT_HITS = (1, 3, 10)
MATCHER_HIDDEN = (200, 200)
CLASSIFIER_HIDDEN = (200,)
DIVERGENCE_MAX_ROWS = 2000
ARROW = "->"


def parse_arrow(text):
    """`"A->B"` -> ("A", "B")；格式不符時拋出 ConfigError"""
    if not isinstance(text, str) or text.count(ARROW) != 1:
        raise ConfigError(f"箭頭格式應為 'A->B': {text!r}")
    left, right = (part.strip() for part in text.split(ARROW))
    if not left or not right:
        raise ConfigError(f"箭頭兩側不可為空: {text!r}")
    return left, right


@dataclass(frozen=True)
class EvalSpec:
    """下游評估設定"""
    arrow: Optional[str] = None
    hits_ns: Tuple[int, ...] = DEFAULT_HITS
    n_negatives: int = 1000
    matcher_negatives: int = 1
    matcher_hidden: Tuple[int, ...] = MATCHER_HIDDEN
    matcher_epochs: int = 200
    learning_rate: float = 0.005
    batch_size: int = 256
    filtered: bool = False
    labels: Optional[str] = None
    test_labels: Optional[str] = None
    test_fraction: float = 0.3
    classifier_hidden: Tuple[int, ...] = CLASSIFIER_HIDDEN
    classifier_epochs: int = 200
    divergence_measure: str = "js"
    hist_bins: int = 64
    seed: int = 0

    def __post_init__(self):
        for name in ("hits_ns", "matcher_hidden", "classifier_hidden"):
            object.__setattr__(self, name, tuple(int(x) for x in getattr(self, name)))
        if self.arrow is not None:
            parse_arrow(self.arrow)
        if not self.hits_ns or min(self.hits_ns) < 1:
            raise ConfigError(f"hits_ns 必須是正整數: {self.hits_ns}")
        if self.n_negatives < 1 or self.matcher_negatives < 1:
            raise ConfigError("n_negatives 與 matcher_negatives 必須 >= 1")
        if self.matcher_epochs < 1 or self.classifier_epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs 與 batch_size 必須 >= 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction 必須介於 0 與 1: {self.test_fraction}")
        if self.divergence_measure not in ("js", "mmd"):
            raise ConfigError(f"divergence_measure 必須是 js 或 mmd: {self.divergence_measure}")
        if self.hist_bins < 2:
            raise ConfigError(f"hist_bins 必須 >= 2: {self.hist_bins}")

    @property
    def optimizer(self):
        return OptimizerConfig(learning_rate=self.learning_rate, weight_decay=0.0)


@dataclass
class MatcherDataset:
    """串接 (h, r, t) 嵌入作為輸入，標籤 1 = 有連結、0 = 無連結"""
    inputs: np.ndarray
    labels: np.ndarray
    triples: np.ndarray


@dataclass
class RankingResult:
    """每條測試邊在替換頭、替換尾兩種查詢中的名次"""
    head_ranks: np.ndarray
    tail_ranks: np.ndarray

    @property
    def ranks(self):
        # 頭尾查詢合併計算
        return np.concatenate([self.head_ranks, self.tail_ranks])


def edge_features(store: EmbeddingStore, triples) -> np.ndarray:
    """E[h] ‖ R[r] ‖ E[t]；RESCAL 的 R[r] 是攤平的關係矩陣"""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    ent = store.tables["entity"]
    rel = relation_rows(store, triples[:, 1])
    return np.concatenate([ent[triples[:, 0]], rel, ent[triples[:, 2]]], axis=1).astype(np.float64)


def build_matcher_dataset(store, edges, entities, negatives=1, rng=None) -> MatcherDataset:
    """每個正樣本配 m 個來源內替換負樣本"""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 3)
    if len(edges) == 0:
        raise EvaluationError("訓練來源沒有邊")
    rng = rng if rng is not None else np.random.default_rng(0)
    negs, _ = corrupt_batch(edges, entities, negatives, SamplerConfig(negatives_per_positive=negatives), rng)
    triples = np.concatenate([edges, negs.reshape(-1, 3)])
    labels = np.concatenate([np.ones(len(edges), np.int64), np.zeros(len(edges) * negatives, np.int64)])
    return MatcherDataset(edge_features(store, triples), labels, triples)


def train_matcher(store: EmbeddingStore, edges, entities, negatives=1, hidden=MATCHER_HIDDEN,
                  optimizer: Optional[OptimizerConfig] = None, epochs=200, batch_size=256, seed=0) -> Mlp:
    """嵌入凍結，只訓練二元匹配器 softmax({無連結, 有連結})"""
    rng = np.random.default_rng(seed)
    data = build_matcher_dataset(store, edges, entities, negatives, rng)
    optimizer = optimizer or OptimizerConfig(weight_decay=0.0)
    mlp = Mlp(MlpSpec((data.inputs.shape[1],) + tuple(hidden) + (2,), seed=seed))
    history = fit_classifier(mlp, data.inputs, data.labels, optimizer, epochs=epochs, batch_size=batch_size, rng=rng)
    train_acc = accuracy(mlp.predict(data.inputs), data.labels)
    logger.info(f"匹配器訓練完成: {len(data.labels)} 筆樣本，最後損失 {history[-1]:.4f}，訓練準確率 {train_acc:.4f}")
    return mlp


def matcher_scorer(mlp: Mlp, store: EmbeddingStore) -> Callable[[np.ndarray], np.ndarray]:
    """回傳 triples (n, 3) -> 連結機率"""
    def score(triples):
        return mlp.forward(edge_features(store, triples))[:, 1]
    return score


def rank_of(true_score, corruption_scores):
    """名次 = 1 + 嚴格較高的數量 + ⌈平手數 / 2⌉"""
    corruption_scores = np.asarray(corruption_scores)
    greater = int((corruption_scores > true_score).sum())
    ties = int((corruption_scores == true_score).sum())
    return 1 + greater + (ties + 1) // 2


def rank_test_edges(matcher: Union[Mlp, Callable], store: EmbeddingStore, test_edges, candidates,
                    n_negatives=1000, rng=None, known_keys=None) -> RankingResult:
    """
    每條測試邊先換頭再換尾，各與 n 個不放回抽樣的候選實體比較

    候選池不足 n + 1 個實體時使用整個池 (扣除被替換者)。
    給定 known_keys 時排除已知為真的替換 (過濾式排名)。
    """
    scorer = matcher_scorer(matcher, store) if isinstance(matcher, Mlp) else matcher
    rng = rng if rng is not None else np.random.default_rng(0)
    test_edges = np.asarray(test_edges, dtype=np.int64).reshape(-1, 3)
    candidates = np.unique(np.asarray(candidates, dtype=np.int64))
    n_ent = store.num_entities
    n_rel = store.num_relations

    ranks = {0: [], 2: []}
    for edge in test_edges:
        for slot in (0, 2):
            others = candidates[candidates != edge[slot]]
            if len(others) > n_negatives:
                others = rng.choice(others, size=n_negatives, replace=False)
            queries = np.repeat(edge[None, :], len(others) + 1, axis=0)
            queries[1:, slot] = others
            if known_keys is not None and len(known_keys):
                keys = encode_triples(queries[1:], n_ent, n_rel)
                queries = np.concatenate([queries[:1], queries[1:][~np.isin(keys, known_keys)]])
            scores = np.asarray(scorer(queries), dtype=np.float64)
            ranks[slot].append(rank_of(scores[0], scores[1:]))
    return RankingResult(np.array(ranks[0], dtype=np.int64), np.array(ranks[2], dtype=np.int64))


def metrics(result: Union[RankingResult, Sequence[int]], hits_ns=DEFAULT_HITS) -> Dict:
    """MRR、MR 與 Hits@n (頭尾查詢合併)"""
    ranks = result.ranks if isinstance(result, RankingResult) else np.asarray(result)
    ranks = np.asarray(ranks, dtype=np.float64)
    if len(ranks) == 0:
        raise EvaluationError("沒有任何排名結果")
    return {
        "mrr": float(np.mean(1.0 / ranks)),
        "mr": float(np.mean(ranks)),
        "hits": {str(n): float(np.mean(ranks <= n)) for n in hits_ns},
        "num_queries": int(len(ranks)),
    }


def write_metrics(result: Dict, json_path=None, csv_path=None, extra=None):
    payload = dict(result)
    if extra:
        payload.update(extra)
    if json_path:
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, ensure_ascii=False)
    if csv_path:
        with open(csv_path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["metric", "value"])
            writer.writerow(["mrr", result["mrr"]])
            writer.writerow(["mr", result["mr"]])
            for n, value in result["hits"].items():
                writer.writerow([f"hits@{n}", value])


# ---------------------------------------------------------------- 節點分類

def load_labels(stream, vocab, path=None, class_index=None):
    """
    讀取 `entity<TAB>class`；未知實體略過並回傳略過數

    class_index 可在訓練檔與測試檔之間共用，使類別編號一致。
    回傳 (nodes, labels, class_names, skipped)。
    """
    nodes, labels = [], []
    class_index = {} if class_index is None else class_index
    skipped = 0
    for line_no, line in iter_lines(stream, path):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(f"標籤檔預期 2 個欄位，實際 {len(fields)} 個", line_no, path)
        name, cls = fields
        if name not in vocab.entity_index:
            skipped += 1
            continue
        nodes.append(vocab.entity_index[name])
        labels.append(class_index.setdefault(cls, len(class_index)))
    if skipped:
        logger.warning(f"標籤檔中有 {skipped} 個未知實體已略過")
    return np.array(nodes, dtype=np.int64), np.array(labels, dtype=np.int64), list(class_index), skipped


def split_labels(nodes, labels, test_fraction=0.3, seed=0):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(nodes))
    n_test = int(round(len(nodes) * test_fraction))
    test, train = order[:n_test], order[n_test:]
    return nodes[train], labels[train], nodes[test], labels[test]


def node_classification(store: EmbeddingStore, train_nodes, train_labels, test_nodes, test_labels,
                        num_classes, hidden=CLASSIFIER_HIDDEN, optimizer: Optional[OptimizerConfig] = None,
                        epochs=200, batch_size=256, seed=0) -> float:
    """以節點嵌入訓練 MLP 分類器，回傳測試準確率"""
    train_labels = np.asarray(train_labels, dtype=np.int64)
    test_labels = np.asarray(test_labels, dtype=np.int64)
    for arr in (train_labels, test_labels):
        if len(arr) and (arr.min() < 0 or arr.max() >= num_classes):
            raise EvaluationError(f"標籤必須介於 [0, {num_classes})")
    missing = sorted(set(range(num_classes)) - set(train_labels.tolist()))
    if missing:
        logger.warning(f"訓練集中缺少類別 {missing}，繼續訓練")
    ent = store.tables["entity"]
    mlp = Mlp(MlpSpec((store.dim,) + tuple(hidden) + (num_classes,), seed=seed))
    fit_classifier(mlp, ent[np.asarray(train_nodes)], train_labels,
                   optimizer or OptimizerConfig(weight_decay=0.0), epochs=epochs, batch_size=batch_size,
                   rng=np.random.default_rng(seed))
    return accuracy(mlp.predict(ent[np.asarray(test_nodes)]), test_labels)


# ---------------------------------------------------------------- 差異報表

@dataclass
class DivergenceRow:
    source_a: str
    source_b: str
    value: float


def divergence_report(store: EmbeddingStore, hin: Hin, bins=64, smoothing=1e-8, measure="js",
                      seed=0) -> List[DivergenceRow]:
    """
    每對來源之間實體嵌入的直方圖 JS (各維度平均)

    共享實體同時計入兩側。measure="mmd" 時回報 √MMD² (中位數頻寬)。
    """
    ent = store.tables["entity"]
    rng = np.random.default_rng(seed)
    rows = []
    for i, j in itertools.combinations(range(hin.K), 2):
        a = ent[hin.per_source_entities[i]]
        b = ent[hin.per_source_entities[j]]
        if measure == "mmd":
            a, b = _cap_rows(a, rng), _cap_rows(b, rng)
            value = math.sqrt(max(mmd2(a, b).value, 0.0)) if len(a) > 1 and len(b) > 1 else 0.0
        else:
            value = hist_js(a, b, bins, smoothing)
        rows.append(DivergenceRow(hin.source_names[i], hin.source_names[j], float(value)))
    return rows


def _cap_rows(x, rng):
    if len(x) > DIVERGENCE_MAX_ROWS:
        x = x[np.sort(rng.choice(len(x), size=DIVERGENCE_MAX_ROWS, replace=False))]
    return x


def write_divergence_csv(rows: Sequence[DivergenceRow], sink, measure="js"):
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["source_a", "source_b", measure])
    for row in rows:
        writer.writerow([row.source_a, row.source_b, repr(row.value)])


# ---------------------------------------------------------------- 整合流程

def link_prediction(store: EmbeddingStore, hin: Hin, spec: EvalSpec) -> Dict:
    """依箭頭 A->B：在來源 A 訓練匹配器，於來源 B 排名"""
    if spec.arrow is None:
        raise ConfigError("連結預測需要 evaluation.arrow")
    left, right = parse_arrow(spec.arrow)
    i, j = hin.source_index(left), hin.source_index(right)
    if i == j:
        logger.warning(f"transductive override: 訓練與測試來源皆為 {left}")
    mlp = train_matcher(store, hin.sources[i], hin.per_source_entities[i], negatives=spec.matcher_negatives,
                        hidden=spec.matcher_hidden, optimizer=spec.optimizer, epochs=spec.matcher_epochs,
                        batch_size=spec.batch_size, seed=spec.seed)
    known = hin.triple_keys(j) if spec.filtered else None
    result = rank_test_edges(mlp, store, hin.sources[j], hin.per_source_entities[j],
                             n_negatives=spec.n_negatives, rng=np.random.default_rng(spec.seed + 1),
                             known_keys=known)
    summary = metrics(result, spec.hits_ns)
    logger.info(f"{spec.arrow}: MRR={summary['mrr']:.4f} MR={summary['mr']:.1f} "
                + " ".join(f"Hits@{n}={v:.4f}" for n, v in summary["hits"].items()))
    return summary


def classify_nodes(store: EmbeddingStore, hin: Hin, spec: EvalSpec) -> Dict:
    """讀取標籤檔並回報節點分類準確率；未提供測試檔時依 test_fraction 切分"""
    if spec.labels is None:
        raise ConfigError("節點分類需要 evaluation.labels")
    class_index = {}
    with open(spec.labels, "rb") as f:
        nodes, labels, _, skipped = load_labels(f, hin.vocab, spec.labels, class_index)
    if spec.test_labels:
        with open(spec.test_labels, "rb") as f:
            test_nodes, test_labels, _, test_skipped = load_labels(f, hin.vocab, spec.test_labels, class_index)
        skipped += test_skipped
        train_nodes, train_labels = nodes, labels
    else:
        train_nodes, train_labels, test_nodes, test_labels = split_labels(nodes, labels, spec.test_fraction, spec.seed)
    if len(train_nodes) == 0 or len(test_nodes) == 0:
        raise EvaluationError("節點分類的訓練集或測試集為空")
    acc = node_classification(store, train_nodes, train_labels, test_nodes, test_labels, len(class_index),
                              hidden=spec.classifier_hidden, optimizer=spec.optimizer,
                              epochs=spec.classifier_epochs, batch_size=spec.batch_size, seed=spec.seed)
    logger.info(f"節點分類準確率 {acc:.4f} ({len(test_nodes)} 個測試節點，{len(class_index)} 類)")
    return {"accuracy": acc, "num_classes": len(class_index), "num_train": int(len(train_nodes)),
            "num_test": int(len(test_nodes)), "skipped": skipped}
