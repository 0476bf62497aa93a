#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# main.py - 主程式，負責整合所有模組：資料準備、訓練、評估、報表與匯出

import argparse
import copy
import itertools
import json
import logging
import os
import platform
import sys
import traceback
from datetime import datetime

import numpy as np

from alignment import AlignmentSpec
from embedding_store import OptimizerConfig, export_csv, load_store_file
from evaluation import (
    EvalSpec, classify_nodes, divergence_report, link_prediction, write_divergence_csv, write_metrics,
)
from hin_graph import (
    WN18_RELATION_GROUPS, ConfigError, HinError, ParseError, PartitionError, ShapeError, build_hin,
    load_hin, load_type_file, read_triple_files, save_hin, split_by_relation, stats,
    synthetic_shifted_hin, write_stats_csv,
)
from sampling import SamplerConfig
from scoring import ScoringModel, relation_table
from trainer import TrainConfig, train

# 全域設定
VERSION = "1.0.0"
HIN_FILE = "hin.bin"
STORE_FILE = "final.emb"
RUN_CONFIG_FILE = "run_config.json"

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

logger = logging.getLogger("main")


class RunConfig:
    """執行配置管理類：使用者 JSON 遞迴合併到預設配置上"""

    # 預設值為 {} 或 None 的鍵接受任意內容，不再往下檢查
    default_config = {
        "data": {
            "sources": {},
            "triples": [],
            "split": None,
            "entity_types": None,
            "relation_types": None,
            "synthetic": None,
            "hin": None,
        },
        "model": {
            "kind": "TransE",
            "norm_order": 1,
            "margin": 1.0,
            "dim": 100,
        },
        "sampler": {
            "batch_size": 1024,
            "negatives_per_positive": 4,
            "head_tail_prob": 0.5,
            "filter_true": False,
            "balanced": True,
        },
        "alignment": {
            "kind": "none",
            "lambda": 1.0,
            "mmd_bandwidth": "median-heuristic",
            "mmd_max_rows": 1024,
            "hist_bins": 64,
            "hist_smoothing": 1e-8,
            "adversarial_target": "uniform",
            "discriminator_hidden": [128, 128],
            "discriminator_lr": 0.005,
            "discriminator_steps_per_batch": 1,
        },
        "optimizer": {
            "learning_rate": 0.005,
            "weight_decay": 0.001,
            "epsilon": 1e-10,
        },
        "training": {
            "epochs": 2000,
            "checkpoint_every": 100,
            "threads": 1,
        },
        "evaluation": {
            "arrow": None,
            "hits_ns": [1, 3, 10],
            "n_negatives": 1000,
            "matcher_negatives": 1,
            "matcher_hidden": [200, 200],
            "matcher_epochs": 200,
            "learning_rate": 0.005,
            "batch_size": 256,
            "filtered": False,
            "labels": None,
            "test_labels": None,
            "test_fraction": 0.3,
            "classifier_hidden": [200],
            "classifier_epochs": 200,
            "divergence_measure": "js",
            "hist_bins": 64,
        },
        "output": {
            "dir": "out",
        },
        "debug": {
            "log_level": "INFO",
            "progress": False,
        },
        "seed": 0,
    }

    def __init__(self, config_file=None, overrides=None):
        self.config_file = config_file
        user = {}
        if config_file:
            user = self.load_config(config_file)
        self.config = self._merge_config(self.default_config, user)
        for dotted, value in (overrides or {}).items():
            if value is not None:
                self.set(dotted, value)

    @staticmethod
    def load_config(path):
        """載入配置檔案"""
        if not os.path.exists(path):
            raise FileNotFoundError(f"找不到配置檔: {path}")
        with open(path, "r", encoding="utf-8") as f:
            try:
                config = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"配置檔 {path} 不是有效的 JSON: {e}") from None
        if not isinstance(config, dict):
            raise ConfigError(f"配置檔 {path} 頂層必須是物件")
        return config

    def _merge_config(self, default, user, prefix=""):
        """合併配置；未知的鍵視為錯誤"""
        result = copy.deepcopy(default)
        for key, value in user.items():
            dotted = f"{prefix}{key}"
            if key not in result:
                raise ConfigError(f"未知的配置鍵: {dotted}")
            if isinstance(result[key], dict) and result[key]:
                if not isinstance(value, dict):
                    raise ConfigError(f"配置鍵 {dotted} 應為物件")
                result[key] = self._merge_config(result[key], value, dotted + ".")
            else:
                result[key] = value
        return result

    def set(self, dotted, value):
        node = self.config
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node[key]
        node[leaf] = value

    def __getitem__(self, key):
        return self.config[key]

    @property
    def out_dir(self):
        return self.config["output"]["dir"]

    @property
    def seed(self):
        return int(self.config["seed"])

    def expand_grid(self):
        """
        展開格點：預設為純量但使用者給了列表的鍵

        回傳 [(子目錄名稱, 解析後的配置)]；沒有格點時子目錄名稱為空字串。
        """
        axes = []
        for section, defaults in self.default_config.items():
            if not isinstance(defaults, dict):
                continue
            for key, default in defaults.items():
                value = self.config[section][key]
                if isinstance(value, list) and not isinstance(default, (list, dict)):
                    if not value:
                        raise ConfigError(f"格點 {section}.{key} 不可為空列表")
                    axes.append((section, key, value))
        if not axes:
            return [("", copy.deepcopy(self.config))]
        runs = []
        for combo in itertools.product(*(values for _, _, values in axes)):
            resolved = copy.deepcopy(self.config)
            parts = []
            for (section, key, _), value in zip(axes, combo):
                resolved[section][key] = value
                parts.append(f"{key}={value}")
            runs.append((",".join(parts), resolved))
        logger.info(f"格點展開為 {len(runs)} 個子執行")
        return runs


def build_train_config(config) -> TrainConfig:
    """由解析後的配置建立 TrainConfig"""
    model, align, train_cfg = config["model"], config["alignment"], config["training"]
    try:
        return TrainConfig(
            model=ScoringModel(kind=model["kind"], norm_order=int(model["norm_order"]), margin=float(model["margin"])),
            sampler=SamplerConfig(**config["sampler"]),
            alignment=AlignmentSpec(
                kind=align["kind"],
                lam=float(align["lambda"]),
                mmd_bandwidth=align["mmd_bandwidth"],
                mmd_max_rows=int(align["mmd_max_rows"]),
                hist_bins=int(align["hist_bins"]),
                hist_smoothing=float(align["hist_smoothing"]),
                adversarial_target=align["adversarial_target"],
                discriminator_hidden=tuple(align["discriminator_hidden"]),
                discriminator_lr=float(align["discriminator_lr"]),
            ),
            optimizer=OptimizerConfig(**config["optimizer"]),
            dim=int(model["dim"]),
            epochs=int(train_cfg["epochs"]),
            checkpoint_every=int(train_cfg["checkpoint_every"]),
            seed=int(config["seed"]),
            discriminator_steps_per_batch=int(align["discriminator_steps_per_batch"]),
            threads=int(train_cfg["threads"]),
            progress=bool(config["debug"]["progress"]),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"訓練配置型別錯誤: {e}") from None


def build_eval_spec(config) -> EvalSpec:
    try:
        return EvalSpec(seed=int(config["seed"]), **config["evaluation"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"評估配置型別錯誤: {e}") from None


def setup_logging(out_dir, level="INFO"):
    """設置日誌系統：檔案 + 終端機"""
    log_dir = os.path.join(out_dir, "logs")
    os.makedirs(log_dir, exist_ok=True)
    log_file = os.path.join(log_dir, f'hin_{datetime.now().strftime("%Y%m%d")}.log')
    numeric = logging.getLevelName(str(level).upper())
    if not isinstance(numeric, int):
        raise ConfigError(f"未知的日誌等級: {level}")
    logging.basicConfig(
        level=numeric,
        format="%(asctime)s - %(levelname)s - %(message)s",
        handlers=[
            logging.FileHandler(log_file, encoding="utf-8"),
            logging.StreamHandler(),
        ],
        force=True,
    )
    return log_file


def write_run_config(out_dir, config, extra=None):
    """輸出目錄的來源紀錄：解析後配置、種子與版本"""
    os.makedirs(out_dir, exist_ok=True)
    record = {
        "config": config,
        "seed": config["seed"],
        "version": VERSION,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    if extra:
        record.update(extra)
    path = os.path.join(out_dir, RUN_CONFIG_FILE)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record, f, indent=2, ensure_ascii=False)
    return path


def _write_status(out_dir, status, error=None):
    with open(os.path.join(out_dir, "run_status.json"), "w", encoding="utf-8") as f:
        json.dump({"status": status, "error": error}, f, indent=2, ensure_ascii=False)


# ---------------------------------------------------------------- 資料

def _require_file(path):
    if not path or not os.path.exists(path):
        raise FileNotFoundError(f"找不到檔案: {path}")
    return path


def _load_types(path):
    if path is None:
        return None
    with open(_require_file(path), "rb") as f:
        return load_type_file(f, path)


def ingest(data):
    """依 data 區段建立 Hin：合成圖、依關係拆分或來源清單"""
    synthetic = data["synthetic"]
    if synthetic:
        params = synthetic if isinstance(synthetic, dict) else {}
        logger.info(f"產生合成多來源圖: {params}")
        return synthetic_shifted_hin(**params)

    entity_types = _load_types(data["entity_types"])
    relation_types = _load_types(data["relation_types"])
    if data["split"] is not None:
        paths = data["triples"] if isinstance(data["triples"], list) else [data["triples"]]
        if not paths:
            raise ConfigError("data.split 需要 data.triples")
        groups = WN18_RELATION_GROUPS if data["split"] == "wn18" else data["split"]
        if not isinstance(groups, dict):
            raise ConfigError(f"data.split 必須是 'wn18' 或 {{來源: [關係...]}}: {data['split']!r}")
        triples = read_triple_files([_require_file(p) for p in paths])
        manifest = split_by_relation(triples, groups)
    elif data["sources"]:
        manifest = {}
        for name, paths in data["sources"].items():
            paths = paths if isinstance(paths, list) else [paths]
            manifest[name] = read_triple_files([_require_file(p) for p in paths])
    else:
        raise ConfigError("未指定資料來源 (data.sources、data.split 或 data.synthetic)")
    return build_hin(manifest, entity_types, relation_types)


def load_or_build_hin(config, out_dir):
    """優先使用 data.hin，其次 <out>/hin.bin，最後重新讀取原始資料"""
    path = config["data"]["hin"]
    if path is None and os.path.exists(os.path.join(out_dir, HIN_FILE)):
        path = os.path.join(out_dir, HIN_FILE)
    if path is not None:
        with open(_require_file(path), "rb") as f:
            hin = load_hin(f)
        logger.info(f"已載入 {path}: {hin.K} 個來源，{hin.vocab.num_entities} 個實體")
        return hin
    return ingest(config["data"])


def _load_store_for(hin, path):
    store = load_store_file(_require_file(path))
    if store.num_entities != hin.vocab.num_entities or store.num_relations != hin.vocab.num_relations:
        raise ShapeError(f"參數表大小 ({store.num_entities}, {store.num_relations}) 與圖 "
                         f"({hin.vocab.num_entities}, {hin.vocab.num_relations}) 不符")
    return store


def _export_tables(store, hin, out_dir):
    ent_path = os.path.join(out_dir, "entities.csv")
    rel_path = os.path.join(out_dir, "relations.csv")
    with open(ent_path, "w", encoding="utf-8", newline="") as f:
        n_ent = export_csv(store, hin.vocab.entity_names, f, "entity", hin.entity_source_labels())
    with open(rel_path, "w", encoding="utf-8", newline="") as f:
        n_rel = export_csv(store, hin.vocab.relation_names, f, relation_table(store.model_kind),
                           hin.relation_source_labels())
    logger.info(f"已匯出 {n_ent} 個實體與 {n_rel} 個關係嵌入至 {out_dir}")
    return n_ent, n_rel


# ---------------------------------------------------------------- 指令

def cmd_prepare(run_cfg: RunConfig, args):
    out = run_cfg.out_dir
    hin = ingest(run_cfg["data"])
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, HIN_FILE), "wb") as f:
        save_hin(hin, f)
    rows = stats(hin)
    with open(os.path.join(out, "stats.csv"), "w", encoding="utf-8", newline="") as f:
        write_stats_csv(rows, f)
    for row in rows:
        logger.info(f"{row.name}: |V|={row.num_entities} |R|={row.num_relations} "
                    f"|E|={row.num_edges} |A|={row.num_types}")
    write_run_config(out, run_cfg.config)
    return EXIT_OK


def cmd_train(run_cfg: RunConfig, args):
    base = run_cfg.out_dir
    hin = load_or_build_hin(run_cfg.config, base)
    runs = run_cfg.expand_grid()
    if args.resume and len(runs) > 1:
        raise ConfigError("--resume 不能與格點一起使用")
    for name, resolved in runs:
        out = os.path.join(base, name) if name else base
        cfg = build_train_config(resolved)
        write_run_config(out, resolved, {"grid_point": name or None})
        logger.info(f"開始訓練 {name or '(單一執行)'}: {cfg.model.kind}, 對齊 {cfg.alignment.kind}, "
                    f"λ={cfg.alignment.lam}, d={cfg.dim}")
        try:
            train(hin, cfg, out_dir=out, resume_from=args.resume)
        except Exception as e:
            _write_status(out, "failed", str(e))
            logger.error(f"訓練失敗，{out} 中的輸出不完整")
            raise
        _write_status(out, "completed")
    return EXIT_OK


def cmd_evaluate(run_cfg: RunConfig, args):
    out = run_cfg.out_dir
    config = run_cfg.config
    if args.labels:
        config["evaluation"]["labels"] = args.labels
    spec = build_eval_spec(config)
    if spec.arrow is None and spec.labels is None:
        raise ConfigError("評估需要 evaluation.arrow 或 evaluation.labels")
    hin = load_or_build_hin(config, out)
    store = _load_store_for(hin, args.store or os.path.join(out, STORE_FILE))
    write_run_config(out, config)
    if spec.arrow is not None:
        summary = link_prediction(store, hin, spec)
        write_metrics(summary, os.path.join(out, "metrics.json"), os.path.join(out, "metrics.csv"),
                      extra={"arrow": spec.arrow, "seed": spec.seed, "filtered": spec.filtered})
    if spec.labels is not None:
        result = classify_nodes(store, hin, spec)
        result["seed"] = spec.seed
        with open(os.path.join(out, "node_classification.json"), "w", encoding="utf-8") as f:
            json.dump(result, f, indent=2, ensure_ascii=False)
    return EXIT_OK


def cmd_report(run_cfg: RunConfig, args):
    out = run_cfg.out_dir
    config = run_cfg.config
    spec = build_eval_spec(config)
    hin = load_or_build_hin(config, out)
    store = _load_store_for(hin, args.store or os.path.join(out, STORE_FILE))
    if hin.K < 2:
        logger.warning(f"只有 {hin.K} 個來源，差異報表為空")
    rows = divergence_report(store, hin, bins=spec.hist_bins, smoothing=config["alignment"]["hist_smoothing"],
                             measure=spec.divergence_measure, seed=spec.seed)
    with open(os.path.join(out, "divergence.csv"), "w", encoding="utf-8", newline="") as f:
        write_divergence_csv(rows, f, spec.divergence_measure)
    for row in rows:
        logger.info(f"{row.source_a} vs {row.source_b}: {spec.divergence_measure}={row.value:.6f}")
    _export_tables(store, hin, out)
    write_run_config(out, config)
    return EXIT_OK


def cmd_export(run_cfg: RunConfig, args):
    out = run_cfg.out_dir
    hin = load_or_build_hin(run_cfg.config, out)
    store = _load_store_for(hin, args.store or os.path.join(out, STORE_FILE))
    _export_tables(store, hin, out)
    write_run_config(out, run_cfg.config)
    return EXIT_OK


# 指令列表
COMMANDS = [
    {"name": "prepare", "description": "讀取來源並輸出 hin.bin 與 stats.csv", "handler": cmd_prepare},
    {"name": "train", "description": "訓練嵌入，輸出 final.emb、log.csv 與檢查點", "handler": cmd_train},
    {"name": "evaluate", "description": "歸納式連結預測與節點分類", "handler": cmd_evaluate},
    {"name": "report", "description": "來源差異報表與帶來源標籤的嵌入 CSV", "handler": cmd_report},
    {"name": "export", "description": "只匯出帶來源標籤的嵌入 CSV", "handler": cmd_export},
]


def build_parser():
    parser = argparse.ArgumentParser(prog="hin-embed", description=f"多來源 HIN 嵌入訓練 v{VERSION}")
    parser.add_argument("--version", action="version", version=VERSION)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON 配置檔")
    common.add_argument("--out", help="輸出目錄 (覆寫 output.dir)")
    common.add_argument("--seed", type=int, help="亂數種子 (覆寫 seed)")
    common.add_argument("--threads", type=int, help="每輪梯度計算的執行緒數")
    common.add_argument("--log-level", help="日誌等級 (覆寫 debug.log_level)")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        p = sub.add_parser(command["name"], parents=[common], help=command["description"])
        p.set_defaults(handler=command["handler"])
        if command["name"] == "train":
            p.add_argument("--resume", help="由檢查點 JSON 附檔繼續訓練")
        if command["name"] in ("evaluate", "report", "export"):
            p.add_argument("--store", help=f"參數表檔案 (預設 <out>/{STORE_FILE})")
        if command["name"] == "evaluate":
            p.add_argument("--labels", help="節點分類標籤檔 entity<TAB>class")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run_cfg = RunConfig(args.config, overrides={
            "output.dir": args.out,
            "seed": args.seed,
            "training.threads": args.threads,
            "debug.log_level": args.log_level,
        })
        setup_logging(run_cfg.out_dir, run_cfg["debug"]["log_level"])
        logger.info(f"hin-embed v{VERSION} 指令 {args.command} 啟動 (seed={run_cfg.seed})")
        code = args.handler(run_cfg, args)
        logger.info(f"指令 {args.command} 完成")
        return code
    except (ConfigError, ParseError, PartitionError, FileNotFoundError) as e:
        logging.error(f"配置或輸入錯誤: {e}")
        return EXIT_CONFIG
    except HinError as e:
        logging.error(f"執行失敗: {e}")
        logging.error(traceback.format_exc())
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        logging.info("主程式被使用者中斷 (Ctrl+C)")
        return EXIT_RUNTIME
    except Exception as e:
        logging.error(f"主程式發生未預期錯誤: {e}")
        logging.error(traceback.format_exc())
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
