#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# hin_graph.py - 多來源異質資訊網路 (HIN) 的讀取、詞彙表建立、子圖拆分與統計

import csv
import io
import logging
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

HIN_MAGIC = b"HIN1"
HIN_FORMAT_VERSION = 1
DEFAULT_TYPE = "default"

# WN18 依語意拆成三個來源：A 階層關係、B 領域/衍生關係、C 部分/相似關係
WN18_RELATION_GROUPS = {
    "A": [
        "_instance_hyponym", "_hyponym", "_hypernym",
        "_member_holonym", "_instance_hypernym", "_member_meronym",
    ],
    "B": [
        "_member_of_domain_topic", "_synset_domain_usage_of", "_synset_domain_region_of",
        "_member_of_domain_region", "_derivationally_related_form",
        "_member_of_domain_usage", "_synset_domain_topic_of",
    ],
    "C": [
        "_part_of", "_verb_group", "_similar_to", "_also_see", "_has_part",
    ],
}

RawTriple = Tuple[str, str, str]


# ---------------------------------------------------------------- 例外

class HinError(Exception):
    """所有領域錯誤的基底類別"""


class ParseError(HinError):
    """三元組或標籤檔格式錯誤"""

    def __init__(self, message, line_no=None, path=None):
        self.line_no = line_no
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line_no is not None:
            where += f"line {line_no}: "
        super().__init__(f"{where}{message}")


class ConfigError(HinError):
    """設定錯誤"""


class PartitionError(HinError):
    """關係分組不是詞彙表的分割"""

    def __init__(self, missing=(), duplicated=()):
        self.missing = sorted(missing)
        self.duplicated = sorted(duplicated)
        parts = []
        if self.missing:
            parts.append(f"未分組的關係: {self.missing}")
        if self.duplicated:
            parts.append(f"重複分組的關係: {self.duplicated}")
        super().__init__("; ".join(parts))


class SamplerError(HinError):
    """來源無法取樣 (三元組或實體太少)"""


class NumericError(HinError):
    """出現 NaN / Inf"""


class StoreFormatError(HinError):
    """二進位檔案格式錯誤"""


class ShapeError(HinError):
    """矩陣維度不符"""


class EvaluationError(HinError):
    """下游評估輸入無效"""


# ---------------------------------------------------------------- 型別

class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class SourceId(NamedTuple):
    index: int
    name: str


class VocabBuilder:
    """依首次出現順序累積實體與關係名稱"""

    def __init__(self):
        self.entity_index: Dict[str, int] = {}
        self.relation_index: Dict[str, int] = {}

    def add_entity(self, name):
        idx = self.entity_index.get(name)
        if idx is None:
            idx = len(self.entity_index)
            self.entity_index[name] = idx
        return idx

    def add_relation(self, name):
        idx = self.relation_index.get(name)
        if idx is None:
            idx = len(self.relation_index)
            self.relation_index[name] = idx
        return idx

    def add_triple(self, head, relation, tail):
        return Triple(self.add_entity(head), self.add_relation(relation), self.add_entity(tail))

    def build(self, entity_types=None, relation_types=None):
        return Vocab.from_names(
            list(self.entity_index), list(self.relation_index),
            entity_types=entity_types, relation_types=relation_types,
        )


@dataclass(eq=False)
class Vocab:
    """全域詞彙表與型別映射 τ (實體) / φ (關係)"""
    entity_names: List[str]
    relation_names: List[str]
    entity_type_of: np.ndarray
    relation_type_of: np.ndarray
    entity_type_names: List[str] = field(default_factory=lambda: [DEFAULT_TYPE])
    relation_type_names: List[str] = field(default_factory=lambda: [DEFAULT_TYPE])

    def __post_init__(self):
        self.entity_index = {name: i for i, name in enumerate(self.entity_names)}
        self.relation_index = {name: i for i, name in enumerate(self.relation_names)}
        if len(self.entity_index) != len(self.entity_names):
            raise ConfigError("實體名稱重複")
        if len(self.relation_index) != len(self.relation_names):
            raise ConfigError("關係名稱重複")

    @classmethod
    def from_names(cls, entity_names, relation_names, entity_types=None, relation_types=None):
        ent_types, ent_type_names = _assign_types(entity_names, entity_types)
        rel_types, rel_type_names = _assign_types(relation_names, relation_types)
        return cls(list(entity_names), list(relation_names), ent_types, rel_types,
                   ent_type_names, rel_type_names)

    @property
    def num_entities(self):
        return len(self.entity_names)

    @property
    def num_relations(self):
        return len(self.relation_names)

    def entity_id(self, name):
        return self.entity_index[name]

    def relation_id(self, name):
        return self.relation_index[name]


def _assign_types(names, type_map):
    """依 id 順序登錄型別；型別檔未列出的名稱使用預設型別"""
    type_index: Dict[str, int] = {}
    type_of = np.zeros(len(names), dtype=np.int64)
    for i, name in enumerate(names):
        type_name = DEFAULT_TYPE if type_map is None else type_map.get(name, DEFAULT_TYPE)
        tid = type_index.setdefault(type_name, len(type_index))
        type_of[i] = tid
    if not type_index:
        type_index[DEFAULT_TYPE] = 0
    return type_of, list(type_index)


@dataclass(eq=False)
class Hin:
    """以來源分割的去重三元組儲存"""
    vocab: Vocab
    source_names: List[str]
    sources: List[np.ndarray]
    per_source_entities: List[np.ndarray] = field(default=None)
    truth: Optional[dict] = None

    def __post_init__(self):
        frozen = []
        for arr in self.sources:
            arr = np.ascontiguousarray(arr, dtype=np.int64).reshape(-1, 3)
            arr.setflags(write=False)
            frozen.append(arr)
        self.sources = frozen
        if self.per_source_entities is None:
            self.per_source_entities = []
            for arr in self.sources:
                ents = np.unique(np.concatenate([arr[:, 0], arr[:, 2]]))
                ents.setflags(write=False)
                self.per_source_entities.append(ents)
        self._key_cache: Dict[int, np.ndarray] = {}

    @property
    def K(self):
        return len(self.sources)

    @property
    def source_ids(self):
        return [SourceId(i, name) for i, name in enumerate(self.source_names)]

    def source_index(self, name):
        try:
            return self.source_names.index(name)
        except ValueError:
            raise ConfigError(f"未知的來源: {name!r} (可用: {self.source_names})") from None

    @property
    def edges(self):
        return np.concatenate(self.sources, axis=0) if self.sources else np.zeros((0, 3), np.int64)

    def triple_keys(self, i):
        """來源 i 的三元組編碼 (排序過)，供過濾真三元組使用"""
        keys = self._key_cache.get(i)
        if keys is None:
            keys = np.unique(encode_triples(self.sources[i], self.vocab.num_entities,
                                            self.vocab.num_relations))
            self._key_cache[i] = keys
        return keys

    def to_manifest(self):
        ents, rels = self.vocab.entity_names, self.vocab.relation_names
        return {
            name: [(ents[h], rels[r], ents[t]) for h, r, t in arr.tolist()]
            for name, arr in zip(self.source_names, self.sources)
        }

    def entity_source_labels(self):
        """每個實體出現的來源名稱 (以 | 分隔)"""
        labels = [[] for _ in range(self.vocab.num_entities)]
        for name, ents in zip(self.source_names, self.per_source_entities):
            for e in ents.tolist():
                labels[e].append(name)
        return ["|".join(x) for x in labels]

    def relation_source_labels(self):
        labels = [[] for _ in range(self.vocab.num_relations)]
        for name, arr in zip(self.source_names, self.sources):
            for r in np.unique(arr[:, 1]).tolist():
                labels[r].append(name)
        return ["|".join(x) for x in labels]


def encode_triples(triples, num_entities, num_relations):
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    return (triples[:, 0] * num_relations + triples[:, 1]) * num_entities + triples[:, 2]


# ---------------------------------------------------------------- 讀取

def iter_lines(stream, path=None):
    """逐行回傳 (行號, 去除換行的文字)；位元組行以 UTF-8 解碼，失敗時指出行號"""
    for line_no, line in enumerate(stream, start=1):
        if isinstance(line, bytes):
            try:
                line = line.decode("utf-8")
            except UnicodeDecodeError as e:
                raise ParseError(f"不是有效的 UTF-8 (位元組 {e.start})", line_no, path) from None
        yield line_no, line.rstrip("\r\n")


def parse_triple_file(stream, vocab_builder=None, path=None) -> List[RawTriple]:
    """讀取 `head<TAB>relation<TAB>tail` 檔案，保留檔案順序與重複行"""
    triples = []
    for line_no, line in iter_lines(stream, path):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(f"預期 3 個以 TAB 分隔的欄位，實際 {len(fields)} 個", line_no, path)
        if any(not f for f in fields):
            raise ParseError("欄位不可為空", line_no, path)
        head, relation, tail = fields
        if vocab_builder is not None:
            vocab_builder.add_triple(head, relation, tail)
        triples.append((head, relation, tail))
    return triples


def read_triple_files(paths) -> List[RawTriple]:
    """依序讀取多個三元組檔並串接"""
    if isinstance(paths, str):
        paths = [paths]
    triples = []
    for path in paths:
        with open(path, "rb") as f:
            triples.extend(parse_triple_file(f, path=path))
        logger.info(f"已讀取 {path}")
    return triples


def load_type_file(stream, path=None) -> Dict[str, str]:
    """讀取 `name<TAB>type` 型別檔"""
    types = {}
    for line_no, line in iter_lines(stream, path):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(f"型別檔預期 2 個欄位，實際 {len(fields)} 個", line_no, path)
        types[fields[0]] = fields[1]
    return types


# ---------------------------------------------------------------- 建立

def build_hin(manifest: Union[Mapping[str, Sequence[RawTriple]], Iterable[Tuple[str, Sequence[RawTriple]]]],
              entity_types=None, relation_types=None) -> Hin:
    """由來源清單建立 Hin；id 依來源名稱排序後的首次出現順序指派"""
    items = list(manifest.items()) if isinstance(manifest, Mapping) else list(manifest)
    if not items:
        raise ConfigError("至少需要一個來源")
    names = [name for name, _ in items]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ConfigError(f"來源名稱重複: {dupes}")

    builder = VocabBuilder()
    source_names = []
    sources = []
    for name, triples in sorted(items, key=lambda kv: kv[0]):
        seen = set()
        rows = []
        for h, r, t in triples:
            ids = builder.add_triple(h, r, t)
            if ids in seen:
                continue
            seen.add(ids)
            rows.append(ids)
        source_names.append(name)
        sources.append(np.array(rows, dtype=np.int64).reshape(-1, 3))
        logger.info(f"來源 {name}: {len(rows)} 條邊 (去重前 {len(triples)})")

    vocab = builder.build(entity_types=entity_types, relation_types=relation_types)
    return Hin(vocab=vocab, source_names=source_names, sources=sources)


def split_by_relation(triples: Iterable[RawTriple], groups: Mapping[str, Iterable[str]]) -> Dict[str, List[RawTriple]]:
    """依關係分組把三元組分派到各來源"""
    triples = list(triples)
    owner: Dict[str, str] = {}
    duplicated = set()
    for group, relations in groups.items():
        for rel in relations:
            if rel in owner and owner[rel] != group:
                duplicated.add(rel)
            owner[rel] = group
    present = {r for _, r, _ in triples}
    missing = present - set(owner)
    if missing or duplicated:
        raise PartitionError(missing=missing, duplicated=duplicated)

    manifest: Dict[str, List[RawTriple]] = {group: [] for group in groups}
    for triple in triples:
        manifest[owner[triple[1]]].append(triple)
    return manifest


# ---------------------------------------------------------------- 統計

@dataclass
class StatsRow:
    name: str
    num_entities: int
    num_relations: int
    num_edges: int
    num_types: int


def stats(hin: Hin) -> List[StatsRow]:
    """每個來源與合併圖的 |V|、|R|、|E|、|A|"""
    rows = []
    ent_types = hin.vocab.entity_type_of
    for name, arr, ents in zip(hin.source_names, hin.sources, hin.per_source_entities):
        rows.append(StatsRow(
            name=name,
            num_entities=int(len(ents)),
            num_relations=int(len(np.unique(arr[:, 1]))),
            num_edges=int(len(arr)),
            num_types=int(len(np.unique(ent_types[ents]))) if len(ents) else 0,
        ))
    all_ents = np.unique(np.concatenate(hin.per_source_entities))
    all_rels = np.unique(hin.edges[:, 1])
    total = StatsRow(
        name="Total",
        num_entities=int(len(all_ents)),
        num_relations=int(len(all_rels)),
        num_edges=sum(r.num_edges for r in rows),
        num_types=int(len(np.unique(ent_types[all_ents]))) if len(all_ents) else 0,
    )
    return [total] + rows


def write_stats_csv(rows: Sequence[StatsRow], sink):
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["dataset", "num_entities", "num_relations", "num_edges", "num_types"])
    for row in rows:
        writer.writerow([row.name, row.num_entities, row.num_relations, row.num_edges, row.num_types])


# ---------------------------------------------------------------- 序列化

_TRIPLE_DTYPE = np.dtype([("h", "<u8"), ("r", "<u4"), ("t", "<u8")])


def _write_str(sink, text):
    data = text.encode("utf-8")
    sink.write(struct.pack("<Q", len(data)))
    sink.write(data)


def _write_names(sink, names):
    sink.write(struct.pack("<Q", len(names)))
    for name in names:
        _write_str(sink, name)


def save_hin(hin: Hin, sink):
    """寫出 HIN1 二進位格式"""
    sink.write(HIN_MAGIC)
    sink.write(struct.pack("<I", HIN_FORMAT_VERSION))
    vocab = hin.vocab
    _write_names(sink, vocab.entity_names)
    _write_names(sink, vocab.relation_names)
    _write_names(sink, vocab.entity_type_names)
    sink.write(np.asarray(vocab.entity_type_of, dtype="<u4").tobytes())
    _write_names(sink, vocab.relation_type_names)
    sink.write(np.asarray(vocab.relation_type_of, dtype="<u4").tobytes())
    sink.write(struct.pack("<Q", hin.K))
    for name, arr in zip(hin.source_names, hin.sources):
        _write_str(sink, name)
        sink.write(struct.pack("<Q", len(arr)))
        packed = np.empty(len(arr), dtype=_TRIPLE_DTYPE)
        packed["h"], packed["r"], packed["t"] = arr[:, 0], arr[:, 1], arr[:, 2]
        sink.write(packed.tobytes())


class _Reader:
    """帶截斷檢查的位元組讀取器"""

    def __init__(self, source):
        self.source = source

    def read(self, n):
        data = self.source.read(n)
        if len(data) != n:
            raise StoreFormatError(f"檔案被截斷 (預期 {n} 位元組，實際 {len(data)})")
        return data

    def unpack(self, fmt):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))[0]

    def read_str(self):
        n = self.unpack("<Q")
        try:
            return self.read(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise StoreFormatError(f"名稱不是有效的 UTF-8: {e}") from None

    def read_names(self):
        return [self.read_str() for _ in range(self.unpack("<Q"))]


def load_hin(source) -> Hin:
    """讀取 HIN1 二進位格式"""
    reader = _Reader(source)
    magic = reader.read(4)
    if magic != HIN_MAGIC:
        raise StoreFormatError(f"magic 不符: {magic!r}")
    version = reader.unpack("<I")
    if version != HIN_FORMAT_VERSION:
        raise StoreFormatError(f"不支援的版本: {version}")
    entity_names = reader.read_names()
    relation_names = reader.read_names()
    entity_type_names = reader.read_names()
    entity_type_of = np.frombuffer(reader.read(4 * len(entity_names)), dtype="<u4").astype(np.int64)
    relation_type_names = reader.read_names()
    relation_type_of = np.frombuffer(reader.read(4 * len(relation_names)), dtype="<u4").astype(np.int64)
    k = reader.unpack("<Q")
    source_names, sources = [], []
    for _ in range(k):
        source_names.append(reader.read_str())
        n = reader.unpack("<Q")
        packed = np.frombuffer(reader.read(n * _TRIPLE_DTYPE.itemsize), dtype=_TRIPLE_DTYPE)
        arr = np.stack([packed["h"], packed["r"], packed["t"]], axis=1).astype(np.int64)
        sources.append(arr.reshape(-1, 3))
    vocab = Vocab(entity_names, relation_names, entity_type_of, relation_type_of,
                  entity_type_names, relation_type_names)
    for arr in sources:
        if len(arr) and (arr[:, [0, 2]].max() >= vocab.num_entities or arr[:, 1].max() >= vocab.num_relations):
            raise StoreFormatError("三元組 id 超出詞彙表範圍")
    return Hin(vocab=vocab, source_names=source_names, sources=sources)


def hin_to_bytes(hin: Hin) -> bytes:
    buf = io.BytesIO()
    save_hin(hin, buf)
    return buf.getvalue()


# ---------------------------------------------------------------- 合成資料

def synthetic_shifted_hin(n_core=200, n_private=100, dense_degree=12.0, sparse_degree=2.0,
                          n_communities=4, dense_relations=4, sparse_relations=3, seed=0) -> Hin:
    """
    產生兩個來源的合成圖：共享核心實體、一個稠密來源與一個稀疏來源

    每個實體屬於一個社群，關係 r 把社群 c 連到 (c + offset_r) mod C；
    兩個來源的關係集合互斥。實際產生的數量記錄於 hin.truth。
    """
    rng = np.random.default_rng(seed)
    n_entities = n_core + 2 * n_private
    community = rng.integers(0, n_communities, size=n_entities)
    core = np.arange(n_core)
    dense_ents = np.concatenate([core, np.arange(n_core, n_core + n_private)])
    sparse_ents = np.concatenate([core, np.arange(n_core + n_private, n_entities)])

    manifest = {}
    rel_offset = 0
    plans = [("dense", dense_ents, dense_degree, dense_relations),
             ("sparse", sparse_ents, sparse_degree, sparse_relations)]
    for name, ents, degree, n_rel in plans:
        target = int(round(degree * len(ents) / 2))
        by_comm = {c: ents[community[ents] == c] for c in range(n_communities)}
        offsets = [1 + (rel_offset + j) % max(n_communities - 1, 1) for j in range(n_rel)]
        edges = set()
        attempts = 0
        while len(edges) < target and attempts < target * 50:
            attempts += 1
            j = int(rng.integers(0, n_rel))
            h = int(ents[rng.integers(0, len(ents))])
            pool = by_comm[(community[h] + offsets[j]) % n_communities]
            if len(pool) == 0:
                continue
            t = int(pool[rng.integers(0, len(pool))])
            edges.add((f"e{h}", f"{name}_r{j}", f"e{t}"))
        manifest[name] = sorted(edges)
        rel_offset += n_rel

    hin = build_hin(manifest)
    hin.truth = {
        name: {
            "num_entities": len({x for h, _, t in manifest[name] for x in (h, t)}),
            "num_relations": len({r for _, r, _ in manifest[name]}),
            "num_edges": len(manifest[name]),
        }
        for name in manifest
    }
    hin.truth["community"] = {f"e{i}": int(c) for i, c in enumerate(community)}
    return hin
