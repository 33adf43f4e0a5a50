import json

import pytest

from shiftforge.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from shiftforge.ingest import write_canonical
from shiftforge.sampler import read_manifest

from conftest import synth_corpus


@pytest.fixture()
def corpus_file(tmp_path):
    path = tmp_path / "corpus.jsonl"
    write_canonical(synth_corpus(1500, seed=77), path)
    return path


@pytest.fixture()
def artifacts(tmp_path, corpus_file):
    """subsets/embeddings dirs for the synthetic corpus (cat + dog)."""
    subsets_dir = tmp_path / "subsets"
    assert main(["subsets", "--corpus", str(corpus_file), "--all",
                 "--min-size", "10", "--out", str(subsets_dir)]) == EXIT_OK
    graphs = tmp_path / "graphs"
    graphs.mkdir()
    embeddings = tmp_path / "embeddings"
    embeddings.mkdir()
    for cls in ("cat", "dog"):
        assert main(["graph", "--subsets", str(subsets_dir / f"{cls}.json"),
                     "--edge-threshold", "0.1",
                     "--out", str(graphs / f"{cls}.json")]) == EXIT_OK
        assert main(["embed", "--graph", str(graphs / f"{cls}.json"), "-K", "4",
                     "--out", str(embeddings / f"{cls}.json")]) == EXIT_OK
    return {"subsets": subsets_dir, "graphs": graphs, "embeddings": embeddings}


class TestExitCodes:
    def test_usage_error_is_1(self):
        assert main(["ingest", "--from", "nonsense"]) == EXIT_USAGE

    def test_missing_subcommand_is_1(self):
        assert main([]) == EXIT_USAGE

    def test_data_error_is_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json", encoding="utf-8")
        assert main(["ingest", "--from", "scene-graph", "--input", str(bad),
                     "--out", str(tmp_path / "out.jsonl")]) == EXIT_DATA

    def test_missing_file_is_2(self, tmp_path):
        assert main(["ingest", "--from", "canonical",
                     "--input", str(tmp_path / "absent.jsonl"),
                     "--out", str(tmp_path / "o.jsonl")]) == EXIT_DATA


class TestIngestCommand:
    def test_scene_graph(self, tmp_path, capsys):
        src = tmp_path / "sg.json"
        src.write_text(json.dumps({
            "1": {"objects": [{"name": "cat"}, {"name": "sofa"}], "location": "indoor"}
        }), encoding="utf-8")
        out = tmp_path / "c.jsonl"
        assert main(["ingest", "--from", "scene-graph", "--input", str(src),
                     "--out", str(out)]) == EXIT_OK
        assert "wrote 1 records" in capsys.readouterr().out
        assert out.exists()

    def test_canonical_passthrough(self, tmp_path, corpus_file):
        out = tmp_path / "copy.jsonl"
        assert main(["ingest", "--from", "canonical", "--input", str(corpus_file),
                     "--out", str(out)]) == EXIT_OK
        assert out.read_bytes() == corpus_file.read_bytes()


class TestStageCommands:
    def test_subsets_single_class(self, tmp_path, corpus_file):
        out = tmp_path / "s"
        assert main(["subsets", "--corpus", str(corpus_file), "--class", "cat",
                     "--min-size", "10", "--out", str(out)]) == EXIT_OK
        payload = json.loads((out / "cat.json").read_text())
        assert payload["class"] == "cat"
        assert payload["min_size"] == 10
        assert payload["subsets"]

    def test_graph_embed_distance(self, artifacts, capsys):
        emb = artifacts["embeddings"] / "cat.json"
        assert main(["distance", "--embeddings", str(emb),
                     "--from", "0", "--to", "1"]) == EXIT_OK
        out = capsys.readouterr().out.strip()
        assert float(out) >= 0.0

    def test_communities(self, artifacts, tmp_path, capsys):
        out = tmp_path / "part.json"
        assert main(["communities", "--graph", str(artifacts["graphs"] / "cat.json"),
                     "--embeddings", str(artifacts["embeddings"] / "cat.json"),
                     "--subsets", str(artifacts["subsets"] / "cat.json"),
                     "--seed", "3", "--out", str(out)]) == EXIT_OK
        payload = json.loads(out.read_text())
        assert payload["seed"] == 3
        assert payload["communities"]
        assert payload["merged"]
        assert "modularity" in capsys.readouterr().out

    def test_dot_export(self, artifacts, tmp_path):
        dot = tmp_path / "g.dot"
        assert main(["export", "--graph", str(artifacts["graphs"] / "cat.json"),
                     "--format", "dot", "--out", str(dot)]) == EXIT_OK
        assert dot.read_text().startswith('graph "cat"')

    def test_stats(self, corpus_file, capsys):
        assert main(["stats", "--corpus", str(corpus_file), "--min-size", "10"]) == EXIT_OK
        stats = json.loads(capsys.readouterr().out)
        assert stats["subsets_total"] > 0


class TestSampleCommands:
    def test_dg(self, artifacts, tmp_path):
        out = tmp_path / "dg.json"
        code = main([
            "sample", "dg",
            "--subsets-dir", str(artifacts["subsets"]),
            "--embeddings-dir", str(artifacts["embeddings"]),
            "--task", "t1",
            "--test", "dog=shelf",
            "--train", "cat=sofa,bed",
            "--train", "dog=cabinet,bed",
            "--train-per-class", "20",
            "--seed", "5",
            "--out", str(out),
        ])
        assert code == EXIT_OK
        manifest = read_manifest(out)
        manifest.validate()
        dog_train = next(g for g in manifest.groups if g.name == "dog(cabinet+bed)")
        assert len(dog_train.image_ids) == 20
        assert dog_train.d is not None

    def test_subpop(self, artifacts, tmp_path):
        out = tmp_path / "sp.json"
        code = main([
            "sample", "subpop",
            "--subsets-dir", str(artifacts["subsets"]),
            "--task", "sp1",
            "--cell", "cat=general_context:indoor/general_context:outdoor",
            "--cell", "dog=general_context:outdoor/general_context:indoor",
            "-p", "0.25",
            "--total-train", "24",
            "--balanced-test", "16",
            "--out", str(out),
        ])
        assert code == EXIT_OK
        manifest = read_manifest(out)
        manifest.validate()
        counts = {g.name: len(g.image_ids) for g in manifest.groups}
        assert counts["train:cat(outdoor)"] == 3
        assert counts["train:cat(indoor)"] == 9
        assert counts["test:cat(indoor)"] == 4

    def test_conflict_split(self, artifacts, tmp_path):
        out = tmp_path / "cf.json"
        code = main([
            "sample", "conflict",
            "--subsets-dir", str(artifacts["subsets"]),
            "--task", "cf1",
            "--classes", "cat,dog",
            "--num-train", "4", "--num-ood", "3",
            "--cap", "5",
            "--seed", "1",
            "--out", str(out),
        ])
        assert code == EXIT_OK
        manifest = read_manifest(out)
        train_groups = [g for g in manifest.groups if g.role == "train"]
        assert len(train_groups) == 4
        assert all(len(g.image_ids) == 5 for g in train_groups)

    def test_conflict_explicit_refs(self, artifacts, tmp_path):
        subsets = json.loads((artifacts["subsets"] / "cat.json").read_text())
        refs = [f"cat:{s['kind']}:{s['value']}" for s in subsets["subsets"][:3]]
        out = tmp_path / "cf2.json"
        code = main([
            "sample", "conflict",
            "--subsets-dir", str(artifacts["subsets"]),
            "--task", "cf2",
            "--train-subsets", ",".join(refs[:2]),
            "--ood-subsets", refs[2],
            "--cap", "3",
            "--out", str(out),
        ])
        assert code == EXIT_OK


class TestConflictCommand:
    def test_fit_and_csv(self, tmp_path):
        log = tmp_path / "log.jsonl"
        lines = [{"train_subsets": ["a", "b"], "eval_subsets": ["x", "y"], "batch_size": 8}]
        import random as _r

        rng = _r.Random(3)
        for i in range(30):
            ca = rng.randint(0, 4)
            cb = rng.randint(0, 4 if ca else 3) + (0 if ca else 1)
            counts = [ca, cb]
            deltas = [0.01 * ca - 0.02 * cb, 0.005 * cb]
            lines.append({"step": i, "counts": counts, "deltas": deltas})
        log.write_text("\n".join(json.dumps(l) for l in lines) + "\n", encoding="utf-8")
        out = tmp_path / "m.json"
        csv_out = tmp_path / "m.csv"
        assert main(["conflict", "--log", str(log), "--out", str(out),
                     "--csv", str(csv_out)]) == EXIT_OK
        payload = json.loads(out.read_text())
        assert payload["train_subsets"] == ["a", "b"]
        assert len(csv_out.read_text().strip().split("\n")) == 3
