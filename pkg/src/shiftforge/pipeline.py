"""End-to-end pipeline: one config file in, one artifact directory out.

The config embeds every threshold and seed, and its hash is stamped into
every output, so a benchmark directory is exactly re-derivable: re-running
with identical config and inputs reproduces identical checksums.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import os
import random
import urllib.parse
from dataclasses import dataclass
from pathlib import Path

from . import community as community_mod
from . import ingest as ingest_mod
from . import metagraph as metagraph_mod
from . import sampler as sampler_mod
from . import spectral as spectral_mod
from . import subsets as subsets_mod
from .errors import PipelineError, ShiftForgeError, ValidationError
from .records import Corpus
from .seeding import substream_seed
from .subsets import KINDS, KIND_OBJECT, ContextTag

TASK_TYPES = ("dg", "subpop", "conflict")


@dataclass(frozen=True)
class PipelineConfig:
    source_format: str
    source_input: str
    out_dir: str
    context_map: str | None = None
    min_size: int = subsets_mod.DEFAULT_MIN_SIZE
    edge_threshold: float = 0.1
    k: int = spectral_mod.DEFAULT_K
    seed: int = 0
    jobs: int = 1
    strict: bool = False
    classes: tuple[str, ...] | None = None
    tasks: tuple[dict, ...] = ()

    @classmethod
    def from_dict(cls, obj: dict, base_dir: str | Path = ".") -> "PipelineConfig":
        base = Path(base_dir)

        def resolve(p: str) -> str:
            path = Path(p)
            return str(path if path.is_absolute() else base / path)

        source = obj.get("source", {})
        fmt = source.get("format")
        if fmt not in ("scene_graph", "coco", "canonical"):
            raise ValidationError(f"config: unknown source format {fmt!r}")
        input_path = source.get("input")
        if not input_path:
            raise ValidationError("config: source.input is required")
        input_path = resolve(input_path)
        if not os.path.exists(input_path):
            raise ValidationError(f"config: source input {input_path!r} does not exist")
        context_map = source.get("context_map")
        if context_map is not None:
            context_map = resolve(context_map)
            if not os.path.exists(context_map):
                raise ValidationError(f"config: context map {context_map!r} does not exist")
        out_dir = obj.get("out_dir")
        if not out_dir:
            raise ValidationError("config: out_dir is required")

        min_size = int(obj.get("min_size", subsets_mod.DEFAULT_MIN_SIZE))
        if min_size < 1:
            raise ValidationError(f"config: min_size must be >= 1, got {min_size}")
        edge_threshold = float(obj.get("edge_threshold", 0.1))
        if not 0.0 <= edge_threshold <= 1.0:
            raise ValidationError(f"config: edge_threshold must be in [0, 1], got {edge_threshold}")
        k = int(obj.get("K", spectral_mod.DEFAULT_K))
        if k < 1:
            raise ValidationError(f"config: K must be >= 1, got {k}")
        jobs = int(obj.get("jobs", 1))
        if jobs < 1:
            raise ValidationError(f"config: jobs must be >= 1, got {jobs}")
        tasks = tuple(obj.get("tasks", ()))
        for task in tasks:
            if task.get("type") not in TASK_TYPES:
                raise ValidationError(f"config: unknown task type {task.get('type')!r}")
            if not task.get("name"):
                raise ValidationError("config: every task needs a name")
        classes = obj.get("classes")
        return cls(
            source_format=fmt,
            source_input=input_path,
            out_dir=resolve(out_dir),
            context_map=context_map,
            min_size=min_size,
            edge_threshold=edge_threshold,
            k=k,
            seed=int(obj.get("seed", 0)),
            jobs=jobs,
            strict=bool(obj.get("strict", False)),
            classes=tuple(classes) if classes else None,
            tasks=tasks,
        )

    def to_dict(self) -> dict:
        return {
            "source": {
                "format": self.source_format,
                "input": self.source_input,
                "context_map": self.context_map,
            },
            "out_dir": self.out_dir,
            "min_size": self.min_size,
            "edge_threshold": self.edge_threshold,
            "K": self.k,
            "seed": self.seed,
            "jobs": self.jobs,
            "strict": self.strict,
            "classes": list(self.classes) if self.classes else None,
            "tasks": list(self.tasks),
        }

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def load_config(path: str | Path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    return PipelineConfig.from_dict(obj, base_dir=Path(path).parent)


def _class_filename(class_name: str) -> str:
    return urllib.parse.quote(class_name, safe="") + ".json"


def parse_context_ref(ref: str) -> ContextTag:
    """'kind:value' or a bare value, which means object presence."""
    if ":" in ref:
        kind, value = ref.split(":", 1)
        if kind in KINDS:
            return ContextTag(kind, value)
    return ContextTag(KIND_OBJECT, ref)


class _ArtifactWriter:
    """Writes artifacts under the output root and remembers what it wrote,
    so the checksum manifest covers exactly this run's files."""

    def __init__(self, out: Path):
        self.out = out
        self.written: list[str] = []

    def path(self, relpath: str) -> Path:
        path = self.out / relpath
        path.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(relpath)
        return path

    def write_json(self, relpath: str, payload: dict) -> None:
        with open(self.path(relpath), "w", encoding="utf-8") as f:
            json.dump(payload, f, ensure_ascii=False, sort_keys=True)
            f.write("\n")


@dataclass
class ClassArtifacts:
    collection: subsets_mod.SubsetCollection
    graph: metagraph_mod.MetaGraph
    embedding: spectral_mod.EmbeddingMatrix | None
    partition: community_mod.Partition


def process_class(
    collection: subsets_mod.SubsetCollection,
    edge_threshold: float,
    k: int,
    seed: int,
) -> ClassArtifacts:
    """Graph, embedding and communities for one class; pure given inputs."""
    graph = metagraph_mod.build_metagraph(collection, edge_threshold)
    components = spectral_mod.connected_components(graph)
    available = graph.n - len(components)
    embedding = None
    if available >= 1:
        embedding = spectral_mod.spectral_embedding(graph, min(k, available))
    partition = community_mod.louvain(
        graph, seed=substream_seed(seed, "louvain", collection.class_name)
    )
    return ClassArtifacts(collection, graph, embedding, partition)


def resolve_group_pool(
    collection: subsets_mod.SubsetCollection,
    embedding: spectral_mod.EmbeddingMatrix | None,
    refs: list[str],
) -> tuple[tuple[str, ...], str, tuple[float, ...] | None]:
    """Union the named subsets of one class into a pool.

    Returns (sorted unique ids, context description, merged embedding or
    None). The merged embedding is the subset-size-weighted average of the
    member node embeddings.
    """
    by_context = collection.by_context()
    index_of = {s.context: i for i, s in enumerate(collection.subsets)}
    members = []
    for ref in refs:
        tag = parse_context_ref(ref)
        if tag not in by_context:
            raise ValidationError(
                f"class {collection.class_name!r} has no subset for context {tag}"
            )
        members.append(by_context[tag])
    union: set[str] = set()
    for s in members:
        union.update(s.image_ids)
    vector = None
    if embedding is not None:
        merged = spectral_mod.merged_embedding(
            embedding, [(index_of[s.context], s.size) for s in members]
        )
        vector = tuple(float(v) for v in merged)
    context = "+".join(parse_context_ref(r).value for r in refs)
    return tuple(sorted(union)), context, vector


def _dg_manifest(
    task: dict, artifacts: dict[str, ClassArtifacts], seed: int, created_from: dict
) -> sampler_mod.SplitManifest:
    entries = [("test", e) for e in task.get("test", [])] + [
        ("train", e) for e in task.get("train", [])
    ]
    if not entries:
        raise ValidationError(f"task {task['name']!r}: no test or train groups")
    classes: list[str] = []
    for _, entry in entries:
        if entry["class"] not in classes:
            classes.append(entry["class"])
    specs = []
    for role, entry in entries:
        class_name = entry["class"]
        if class_name not in artifacts:
            raise ValidationError(
                f"task {task['name']!r}: class {class_name!r} has no subsets"
            )
        art = artifacts[class_name]
        ids, context, vector = resolve_group_pool(art.collection, art.embedding, entry["contexts"])
        specs.append(
            sampler_mod.GroupSpec(
                name=f"{class_name}({context})",
                class_name=class_name,
                label=classes.index(class_name),
                role=role,
                image_ids=ids,
                context=context,
                budget=entry.get("budget"),
                embedding=vector,
            )
        )
    return sampler_mod.sample_domain_split(
        specs,
        total_train_per_class=int(task["total_train_per_class"]),
        seed=seed,
        task=task["name"],
        created_from=created_from,
    )


def _subpop_manifests(
    task: dict, artifacts: dict[str, ClassArtifacts], seed: int, created_from: dict
) -> list[tuple[str, sampler_mod.SplitManifest]]:
    cells = task.get("cells", [])
    if not cells:
        raise ValidationError(f"task {task['name']!r}: no cells")
    pairs = []
    for label, cell in enumerate(cells):
        class_name = cell["class"]
        if class_name not in artifacts:
            raise ValidationError(f"task {task['name']!r}: class {class_name!r} has no subsets")

        def spec(refs):
            refs = refs if isinstance(refs, list) else [refs]
            art = artifacts[class_name]
            ids, context, vector = resolve_group_pool(art.collection, art.embedding, refs)
            return sampler_mod.GroupSpec(
                name=f"{class_name}({context})",
                class_name=class_name,
                label=label,
                role=sampler_mod.ROLE_TRAIN,
                image_ids=ids,
                context=context,
                embedding=vector,
            )

        pairs.append((spec(cell["majority"]), spec(cell["minority"])))

    fractions = task["p"] if isinstance(task["p"], list) else [task["p"]]
    out = []
    for p in fractions:
        manifest = sampler_mod.sample_subpop_split(
            pairs,
            p=float(p),
            total_train=int(task["total_train"]),
            balanced_test=int(task["balanced_test"]),
            seed=seed,
            task=f"{task['name']}@p={p}",
            created_from=created_from,
        )
        out.append((f"{task['name']}_p{p}", manifest))
    return out


def _conflict_manifest(
    task: dict, artifacts: dict[str, ClassArtifacts], seed: int, created_from: dict
) -> sampler_mod.SplitManifest:
    def lookup(ref: str) -> subsets_mod.Subset:
        class_name, _, context_ref = ref.partition(":")
        if class_name not in artifacts:
            raise ValidationError(f"task {task['name']!r}: class {class_name!r} has no subsets")
        tag = parse_context_ref(context_ref)
        by_context = artifacts[class_name].collection.by_context()
        if tag not in by_context:
            raise ValidationError(
                f"task {task['name']!r}: class {class_name!r} has no subset for context {tag}"
            )
        return by_context[tag]

    if "train_subsets" in task:
        train = [lookup(r) for r in task["train_subsets"]]
        ood = [lookup(r) for r in task.get("ood_subsets", [])]
    else:
        class_names = task.get("classes", [])
        pool = []
        for class_name in class_names:
            if class_name not in artifacts:
                raise ValidationError(
                    f"task {task['name']!r}: class {class_name!r} has no subsets"
                )
            pool.extend(artifacts[class_name].collection.subsets)
        n_train = int(task["num_train"])
        n_ood = int(task["num_ood"])
        if n_train + n_ood > len(pool):
            raise ValidationError(
                f"task {task['name']!r}: wants {n_train + n_ood} subsets, classes "
                f"{class_names} only have {len(pool)}"
            )
        rng = random.Random(substream_seed(seed, "conflict-choose", task["name"]))
        chosen = rng.sample(pool, n_train + n_ood)
        train, ood = chosen[:n_train], chosen[n_train:]

    split = sampler_mod.build_conflict_split(
        train, ood, cap=int(task.get("cap", 50)),
        seed=substream_seed(seed, "conflict", task["name"]),
    )
    return split.to_manifest(task=task["name"], created_from=created_from)


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_pipeline(config: PipelineConfig) -> Path:
    """Run ingest, subsets, graphs, embeddings, communities and task
    manifests, then write stats.json and checksums.json."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "FAILED.json").unlink(missing_ok=True)
    writer = _ArtifactWriter(out)
    stage = "ingest"
    try:
        corpus, report = _stage_ingest(config, writer)
        stage = "subsets"
        all_collections, selected = _stage_subsets(config, corpus, writer)
        stage = "graphs"
        artifacts = _stage_graphs(config, selected, writer)
        stage = "manifests"
        manifest_files = _stage_manifests(config, artifacts, writer)
        stage = "stats"
        _stage_stats(config, corpus, report, all_collections, artifacts, manifest_files, writer)
    except ShiftForgeError as e:
        with open(out / "FAILED.json", "w", encoding="utf-8") as f:
            json.dump({"stage": stage, "error": str(e)}, f)
            f.write("\n")
        raise PipelineError(stage, str(e)) from e
    return out


def _stage_ingest(config: PipelineConfig, writer: _ArtifactWriter):
    report = ingest_mod.IngestReport()
    if config.source_format == "scene_graph":
        corpus = ingest_mod.parse_scene_graph(
            config.source_input, strict=config.strict, report=report
        )
    elif config.source_format == "coco":
        context_map = (
            ingest_mod.load_context_map(config.context_map) if config.context_map else None
        )
        corpus = ingest_mod.parse_coco(
            config.source_input, context_map=context_map, strict=config.strict, report=report
        )
    else:
        corpus = ingest_mod.parse_canonical(config.source_input)
    ingest_mod.write_canonical(corpus, writer.path("corpus.jsonl"))
    if len(report):
        writer.write_json("ingest_report.json", {"skipped": report.skipped})
    return corpus, report


def _stage_subsets(config: PipelineConfig, corpus: Corpus, writer: _ArtifactWriter):
    all_collections = subsets_mod.generate_all_subsets(corpus, config.min_size)
    if config.classes is not None:
        missing = [c for c in config.classes if c not in all_collections]
        if missing:
            raise ValidationError(
                f"classes {missing} retain no subsets at min_size={config.min_size}"
            )
        selected = {c: all_collections[c] for c in config.classes}
    else:
        selected = all_collections
    for class_name in sorted(selected):
        payload = subsets_mod.collection_to_json(selected[class_name])
        payload["config_hash"] = config.config_hash
        writer.write_json(f"subsets/{_class_filename(class_name)}", payload)
    return all_collections, selected


def _stage_graphs(
    config: PipelineConfig, collections, writer: _ArtifactWriter
) -> dict[str, ClassArtifacts]:
    ordered = sorted(collections)
    if config.jobs > 1 and len(ordered) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=config.jobs) as pool:
            futures = {
                name: pool.submit(
                    process_class, collections[name], config.edge_threshold, config.k, config.seed
                )
                for name in ordered
            }
            artifacts = {name: futures[name].result() for name in ordered}
    else:
        artifacts = {
            name: process_class(collections[name], config.edge_threshold, config.k, config.seed)
            for name in ordered
        }

    for name in ordered:
        art = artifacts[name]
        fname = _class_filename(name)
        payload = metagraph_mod.graph_to_json(art.graph)
        payload["config_hash"] = config.config_hash
        writer.write_json(f"graphs/{fname}", payload)
        if art.embedding is not None:
            payload = spectral_mod.embedding_to_json(art.embedding)
            payload["config_hash"] = config.config_hash
            writer.write_json(f"embeddings/{fname}", payload)
        payload = community_mod.partition_to_json(art.graph, art.partition)
        payload["config_hash"] = config.config_hash
        writer.write_json(f"communities/{fname}", payload)
    return artifacts


def _stage_manifests(config: PipelineConfig, artifacts, writer: _ArtifactWriter) -> list[str]:
    if not config.tasks:
        return []
    created_from = {
        "corpus_hash": _sha256_file(writer.out / "corpus.jsonl"),
        "graph_hash": _combined_graph_hash(writer.out),
        "config_hash": config.config_hash,
    }
    written = []
    for task in config.tasks:
        kind = task["type"]
        if kind == "dg":
            manifests = [(task["name"], _dg_manifest(task, artifacts, config.seed, created_from))]
        elif kind == "subpop":
            manifests = _subpop_manifests(task, artifacts, config.seed, created_from)
        else:
            manifests = [
                (task["name"], _conflict_manifest(task, artifacts, config.seed, created_from))
            ]
        for name, manifest in manifests:
            relpath = "manifests/" + urllib.parse.quote(name, safe="") + ".json"
            sampler_mod.write_manifest(manifest, writer.path(relpath))
            written.append(relpath)
    return written


def _combined_graph_hash(out: Path) -> str:
    h = hashlib.sha256()
    graph_dir = out / "graphs"
    for path in sorted(graph_dir.glob("*.json")):
        h.update(path.name.encode("utf-8"))
        h.update(_sha256_file(path).encode("ascii"))
    return h.hexdigest()


def _stage_stats(
    config, corpus, report, all_collections, artifacts, manifest_files, writer: _ArtifactWriter
):
    stats = subsets_mod.summarize_collections(corpus, all_collections, config.min_size)
    stats["config_hash"] = config.config_hash
    stats["source"] = {"format": config.source_format, "input": config.source_input}
    stats["ingest_skipped"] = len(report)
    stats["classes_processed"] = len(artifacts)
    stats["classes_without_embedding"] = sorted(
        name for name, art in artifacts.items() if art.embedding is None
    )
    stats["manifests"] = manifest_files
    writer.write_json("stats.json", stats)

    files = {relpath: _sha256_file(writer.out / relpath) for relpath in sorted(writer.written)}
    writer.write_json("checksums.json", {"config_hash": config.config_hash, "files": files})
