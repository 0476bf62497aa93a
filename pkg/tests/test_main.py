#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# test_main.py - 命令列流程：配置合併、格點展開、各指令輸出與結束碼

import json
import os

import pytest

from hin_graph import ConfigError
from main import EXIT_CONFIG, EXIT_OK, RunConfig, build_train_config, main


@pytest.fixture
def workspace(tmp_path, toy_manifest):
    """把 toy 圖寫成兩個三元組檔，回傳寫配置檔的函數"""
    sources = {}
    for name, triples in toy_manifest.items():
        path = tmp_path / f"{name}.tsv"
        path.write_text("".join(f"{h}\t{r}\t{t}\n" for h, r, t in triples), encoding="utf-8")
        sources[name] = str(path)

    def write_config(out="out", **sections):
        config = {
            "data": {"sources": sources},
            "model": {"dim": 4},
            "sampler": {"batch_size": 4, "negatives_per_positive": 2},
            "training": {"epochs": 2, "checkpoint_every": 1},
            "output": {"dir": str(tmp_path / out)},
        }
        for section, values in sections.items():
            config.setdefault(section, {}).update(values)
        path = tmp_path / f"{out}.json"
        path.write_text(json.dumps(config), encoding="utf-8")
        return str(path), tmp_path / out

    return write_config


def _read_lines(path):
    with open(path, encoding="utf-8") as f:
        return f.read().splitlines()


class TestRunConfig:

    def test_defaults(self):
        cfg = RunConfig()
        assert cfg["model"]["kind"] == "TransE"
        assert cfg["sampler"]["batch_size"] == 1024
        assert cfg.seed == 0

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"training": {"epoch": 3}}), encoding="utf-8")
        with pytest.raises(ConfigError, match="training.epoch"):
            RunConfig(str(path))

    def test_section_must_be_object(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"model": "TransE"}), encoding="utf-8")
        with pytest.raises(ConfigError):
            RunConfig(str(path))

    def test_overrides(self):
        cfg = RunConfig(overrides={"seed": 7, "output.dir": "elsewhere", "training.threads": None})
        assert cfg.seed == 7
        assert cfg.out_dir == "elsewhere"
        assert cfg["training"]["threads"] == 1

    def test_grid_expansion(self, workspace):
        path, _ = workspace(alignment={"kind": "mmd", "lambda": [0.5, 1.0]}, model={"dim": 4, "kind": ["TransE"]})
        runs = RunConfig(path).expand_grid()
        assert [name for name, _ in runs] == ["kind=TransE,lambda=0.5", "kind=TransE,lambda=1.0"]
        assert runs[1][1]["alignment"]["lambda"] == 1.0

    def test_no_grid(self):
        assert [name for name, _ in RunConfig().expand_grid()] == [""]

    def test_train_config_mapping(self, workspace):
        path, _ = workspace(alignment={"kind": "adversarial", "lambda": 0.3, "discriminator_hidden": [8]})
        cfg = build_train_config(RunConfig(path).config)
        assert cfg.alignment.lam == 0.3
        assert cfg.alignment.discriminator_hidden == (8,)
        assert cfg.dim == 4 and cfg.epochs == 2

    def test_train_config_bad_value(self, workspace):
        path, _ = workspace(sampler={"batch_size": 0})
        with pytest.raises(ConfigError):
            build_train_config(RunConfig(path).config)


class TestPrepare:

    def test_writes_stats_and_hin(self, workspace):
        path, out = workspace()
        assert main(["prepare", "--config", path]) == EXIT_OK
        lines = _read_lines(out / "stats.csv")
        assert lines[0] == "dataset,num_entities,num_relations,num_edges,num_types"
        assert [line.split(",")[0] for line in lines[1:]] == ["Total", "A", "B"]
        assert (out / "hin.bin").exists()
        assert json.loads((out / "run_config.json").read_text(encoding="utf-8"))["seed"] == 0

    def test_idempotent(self, workspace, tmp_path):
        path, out = workspace()
        assert main(["prepare", "--config", path]) == EXIT_OK
        assert main(["prepare", "--config", path, "--out", str(tmp_path / "again")]) == EXIT_OK
        assert (out / "hin.bin").read_bytes() == (tmp_path / "again" / "hin.bin").read_bytes()

    def test_missing_triple_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"data": {"sources": {"A": str(tmp_path / "nope.tsv")}},
                                    "output": {"dir": str(tmp_path / "out")}}), encoding="utf-8")
        assert main(["prepare", "--config", str(path)]) == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert main(["prepare", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_unknown_key_exit_code(self, workspace):
        path, _ = workspace(training={"epochz": 1})
        assert main(["prepare", "--config", path]) == EXIT_CONFIG

    def test_malformed_triples(self, tmp_path):
        bad = tmp_path / "bad.tsv"
        bad.write_text("a\tr\n", encoding="utf-8")
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"data": {"sources": {"A": str(bad)}},
                                    "output": {"dir": str(tmp_path / "out")}}), encoding="utf-8")
        assert main(["prepare", "--config", str(path)]) == EXIT_CONFIG

    def test_invalid_utf8_triples(self, tmp_path):
        bad = tmp_path / "bad.tsv"
        bad.write_bytes(b"a\tr\tb\n\xff\tr\tb\n")
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"data": {"sources": {"A": str(bad)}},
                                    "output": {"dir": str(tmp_path / "out")}}), encoding="utf-8")
        assert main(["prepare", "--config", str(path)]) == EXIT_CONFIG
        log_text = "".join(p.read_text(encoding="utf-8") for p in (tmp_path / "out" / "logs").iterdir())
        assert f"{bad}:line 2" in log_text


class TestTrainEvaluateReport:

    def test_train_outputs(self, workspace):
        path, out = workspace()
        assert main(["train", "--config", path, "--seed", "3"]) == EXIT_OK
        for name in ("final.emb", "log.csv", "run_config.json", "checkpoint_epoch00001.json"):
            assert (out / name).exists(), name
        assert len(_read_lines(out / "log.csv")) == 3
        assert json.loads((out / "run_config.json").read_text(encoding="utf-8"))["seed"] == 3
        assert json.loads((out / "run_status.json").read_text(encoding="utf-8"))["status"] == "completed"
        assert list((out / "logs").iterdir())

    def test_resume(self, workspace):
        path, out = workspace()
        assert main(["train", "--config", path]) == EXIT_OK
        first = (out / "final.emb").read_bytes()
        resumed_path, resumed = workspace(out="resumed")
        checkpoint = str(out / "checkpoint_epoch00001.json")
        assert main(["train", "--config", resumed_path, "--resume", checkpoint]) == EXIT_OK
        assert (resumed / "final.emb").read_bytes() == first

    def test_grid_subdirectories(self, workspace):
        path, out = workspace(alignment={"kind": "mmd", "lambda": [0.5, 1.0]})
        assert main(["train", "--config", path]) == EXIT_OK
        assert sorted(os.listdir(out / "lambda=0.5")) == sorted(os.listdir(out / "lambda=1.0"))
        for sub in ("lambda=0.5", "lambda=1.0"):
            assert (out / sub / "final.emb").exists()
            record = json.loads((out / sub / "run_config.json").read_text(encoding="utf-8"))
            assert record["grid_point"] == sub

    def test_evaluate_link_prediction(self, workspace):
        path, out = workspace(evaluation={"arrow": "A->B", "matcher_hidden": [4], "matcher_epochs": 2,
                                          "n_negatives": 10})
        assert main(["train", "--config", path]) == EXIT_OK
        assert main(["evaluate", "--config", path]) == EXIT_OK
        result = json.loads((out / "metrics.json").read_text(encoding="utf-8"))
        assert {"mrr", "mr", "hits", "num_queries", "arrow"} <= set(result)
        assert 0 < result["mrr"] <= 1
        assert _read_lines(out / "metrics.csv")[0] == "metric,value"

    def test_evaluate_transductive_warning(self, workspace):
        path, out = workspace(evaluation={"arrow": "B->B", "matcher_hidden": [4], "matcher_epochs": 2})
        assert main(["train", "--config", path]) == EXIT_OK
        assert main(["evaluate", "--config", path]) == EXIT_OK
        log_text = "".join(p.read_text(encoding="utf-8") for p in (out / "logs").iterdir())
        assert "transductive override" in log_text

    def test_evaluate_node_classification(self, workspace, tmp_path):
        labels = tmp_path / "labels.tsv"
        labels.write_text("a\tp\nb\tp\nx\tq\ny\tq\nz\tq\nghost\tq\n", encoding="utf-8")
        path, out = workspace(evaluation={"classifier_hidden": [4], "classifier_epochs": 2, "test_fraction": 0.4})
        assert main(["train", "--config", path]) == EXIT_OK
        assert main(["evaluate", "--config", path, "--labels", str(labels)]) == EXIT_OK
        result = json.loads((out / "node_classification.json").read_text(encoding="utf-8"))
        assert result["skipped"] == 1
        assert 0.0 <= result["accuracy"] <= 1.0

    def test_evaluate_needs_task(self, workspace):
        path, _ = workspace()
        assert main(["train", "--config", path]) == EXIT_OK
        assert main(["evaluate", "--config", path]) == EXIT_CONFIG

    def test_evaluate_unknown_source(self, workspace):
        path, _ = workspace(evaluation={"arrow": "A->Z"})
        assert main(["train", "--config", path]) == EXIT_OK
        assert main(["evaluate", "--config", path]) == EXIT_CONFIG

    def test_report_and_export(self, workspace, toy_hin):
        path, out = workspace()
        assert main(["train", "--config", path]) == EXIT_OK
        assert main(["report", "--config", path]) == EXIT_OK
        lines = _read_lines(out / "divergence.csv")
        assert lines[0] == "source_a,source_b,js"
        assert lines[1].startswith("A,B,")
        entities = _read_lines(out / "entities.csv")
        assert len(entities) == toy_hin.vocab.num_entities + 1
        assert entities[0].endswith(",sources")
        assert main(["export", "--config", path]) == EXIT_OK
        assert len(_read_lines(out / "relations.csv")) == toy_hin.vocab.num_relations + 1

    def test_missing_store(self, workspace, tmp_path):
        path, _ = workspace()
        assert main(["export", "--config", path, "--store", str(tmp_path / "missing.emb")]) == EXIT_CONFIG
