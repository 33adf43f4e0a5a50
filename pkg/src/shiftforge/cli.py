"""Command-line interface wiring the pipeline stages.

Every command is a thin shell over one library operation. Exit codes are a
stable contract for scripting: 0 success, 1 usage error, 2 data/validation
error, 3 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import random
import sys
import urllib.parse
from pathlib import Path

from . import community as community_mod
from . import conflict as conflict_mod
from . import ingest as ingest_mod
from . import metagraph as metagraph_mod
from . import pipeline as pipeline_mod
from . import sampler as sampler_mod
from . import spectral as spectral_mod
from . import subsets as subsets_mod
from .errors import ShiftForgeError
from .seeding import substream_seed

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 for usage errors, not argparse's 2
        raise UsageError(message)


def _seed(args) -> int:
    seed = getattr(args, "seed", None)
    return 0 if seed is None else seed


def _load_class_artifacts(
    subsets_dir: str, embeddings_dir: str | None, class_name: str
) -> tuple[subsets_mod.SubsetCollection, spectral_mod.EmbeddingMatrix | None]:
    fname = urllib.parse.quote(class_name, safe="") + ".json"
    collection = subsets_mod.read_collection(Path(subsets_dir) / fname)
    embedding = None
    if embeddings_dir is not None:
        path = Path(embeddings_dir) / fname
        if path.exists():
            embedding = spectral_mod.read_embedding(path)
    return collection, embedding


def _parse_group_arg(arg: str) -> tuple[str, list[str]]:
    """'class=ctx1,ctx2' -> (class, [ctx1, ctx2])."""
    if "=" not in arg:
        raise UsageError(f"group {arg!r} must look like CLASS=CONTEXT[,CONTEXT...]")
    class_name, _, rest = arg.partition("=")
    contexts = [c for c in rest.split(",") if c]
    if not class_name or not contexts:
        raise UsageError(f"group {arg!r} must name a class and at least one context")
    return class_name, contexts


def cmd_ingest(args) -> int:
    report = ingest_mod.IngestReport()
    fmt = args.source.replace("-", "_")
    if fmt == "scene_graph":
        corpus = ingest_mod.parse_scene_graph(args.input, strict=args.strict, report=report)
    elif fmt == "coco":
        context_map = ingest_mod.load_context_map(args.context_map) if args.context_map else None
        corpus = ingest_mod.parse_coco(
            args.input, context_map=context_map, strict=args.strict, report=report
        )
    else:
        corpus = ingest_mod.parse_canonical(args.input)
    ingest_mod.write_canonical(corpus, args.out)
    stats = corpus.vocab_stats
    print(
        f"wrote {len(corpus)} records to {args.out} "
        f"({stats.object_names} object names, {stats.attributes} attributes, "
        f"{stats.general_contexts} general contexts)"
    )
    if len(report):
        print(f"skipped {len(report)} records; see --report for details", file=sys.stderr)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump({"skipped": report.skipped}, f, ensure_ascii=False, indent=2)
            f.write("\n")
    return EXIT_OK


def cmd_subsets(args) -> int:
    corpus = ingest_mod.parse_canonical(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.all:
        collections = subsets_mod.generate_all_subsets(corpus, args.min_size)
    else:
        collections = {
            args.class_name: subsets_mod.generate_subsets(corpus, args.class_name, args.min_size)
        }
    for class_name in sorted(collections):
        fname = urllib.parse.quote(class_name, safe="") + ".json"
        subsets_mod.write_collection(collections[class_name], out / fname)
    total = sum(len(c.subsets) for c in collections.values())
    print(f"wrote {total} subsets for {len(collections)} classes to {out}")
    return EXIT_OK


def cmd_graph(args) -> int:
    collection = subsets_mod.read_collection(args.subsets)
    graph = metagraph_mod.build_metagraph(collection, args.edge_threshold)
    metagraph_mod.export_graph(graph, "json", args.out)
    if args.dot:
        metagraph_mod.export_graph(graph, "dot", args.dot)
    print(f"{graph.class_name}: {graph.n} nodes, {len(graph.edges)} edges -> {args.out}")
    return EXIT_OK


def cmd_embed(args) -> int:
    graph = metagraph_mod.read_graph(args.graph)
    emb = spectral_mod.spectral_embedding(graph, args.k)
    spectral_mod.write_embedding(emb, args.out)
    print(f"{graph.class_name}: embedded {emb.n} nodes in {emb.k} dimensions -> {args.out}")
    return EXIT_OK


def cmd_distance(args) -> int:
    emb = spectral_mod.read_embedding(args.embeddings)
    d = spectral_mod.node_distance(emb, args.from_node, args.to_node)
    print(f"{d:.6f}")
    return EXIT_OK


def cmd_communities(args) -> int:
    graph = metagraph_mod.read_graph(args.graph)
    partition = community_mod.louvain(graph, seed=_seed(args))
    extra = {}
    if args.embeddings and args.subsets:
        collection = subsets_mod.read_collection(args.subsets)
        embedding = spectral_mod.read_embedding(args.embeddings)
        merged = community_mod.merge_by_community(collection, graph, partition, embedding)
        extra["merged"] = [
            {
                "community": m.community_id,
                "members": list(m.member_values),
                "image_count": m.size,
                "embedding": [float(v) for v in m.embedding],
            }
            for m in merged
        ]
    community_mod.write_partition(graph, partition, args.out, extra=extra)
    print(
        f"{graph.class_name}: {partition.n_communities} communities, "
        f"modularity {partition.modularity:.4f} -> {args.out}"
    )
    return EXIT_OK


def cmd_sample_dg(args) -> int:
    classes: list[str] = []
    entries = []
    for role, raw in [("test", g) for g in args.test] + [("train", g) for g in args.train]:
        class_name, contexts = _parse_group_arg(raw)
        if class_name not in classes:
            classes.append(class_name)
        entries.append((role, class_name, contexts))
    specs = []
    for role, class_name, contexts in entries:
        collection, embedding = _load_class_artifacts(args.subsets_dir, args.embeddings_dir, class_name)
        ids, context, vector = pipeline_mod.resolve_group_pool(collection, embedding, contexts)
        specs.append(
            sampler_mod.GroupSpec(
                name=f"{class_name}({context})",
                class_name=class_name,
                label=classes.index(class_name),
                role=role,
                image_ids=ids,
                context=context,
                embedding=vector,
            )
        )
    manifest = sampler_mod.sample_domain_split(
        specs, total_train_per_class=args.train_per_class, seed=_seed(args), task=args.task
    )
    sampler_mod.write_manifest(manifest, args.out)
    _print_manifest_summary(manifest)
    return EXIT_OK


def cmd_sample_subpop(args) -> int:
    pairs = []
    for label, raw in enumerate(args.cell):
        class_name, _, rest = raw.partition("=")
        majority_ref, _, minority_ref = rest.partition("/")
        if not class_name or not majority_ref or not minority_ref:
            raise UsageError(
                f"cell {raw!r} must look like CLASS=MAJORITY/MINORITY (context lists split by '/')"
            )
        collection, embedding = _load_class_artifacts(args.subsets_dir, args.embeddings_dir, class_name)

        def spec(refs: str):
            ref_list = [r for r in refs.split(",") if r]
            ids, context, vector = pipeline_mod.resolve_group_pool(collection, embedding, ref_list)
            return sampler_mod.GroupSpec(
                name=f"{class_name}({context})",
                class_name=class_name,
                label=label,
                role=sampler_mod.ROLE_TRAIN,
                image_ids=ids,
                context=context,
                embedding=vector,
            )

        pairs.append((spec(majority_ref), spec(minority_ref)))
    manifest = sampler_mod.sample_subpop_split(
        pairs,
        p=args.p,
        total_train=args.total_train,
        balanced_test=args.balanced_test,
        seed=_seed(args),
        task=args.task,
    )
    sampler_mod.write_manifest(manifest, args.out)
    _print_manifest_summary(manifest)
    return EXIT_OK


def cmd_sample_conflict(args) -> int:
    def lookup(ref: str) -> subsets_mod.Subset:
        class_name, _, context_ref = ref.partition(":")
        collection, _ = _load_class_artifacts(args.subsets_dir, None, class_name)
        tag = pipeline_mod.parse_context_ref(context_ref)
        by_context = collection.by_context()
        if tag not in by_context:
            raise UsageError(f"class {class_name!r} has no subset for context {tag}")
        return by_context[tag]

    seed = _seed(args)
    if args.train_subsets:
        train = [lookup(r) for r in args.train_subsets.split(",") if r]
        ood = [lookup(r) for r in (args.ood_subsets or "").split(",") if r]
        split = sampler_mod.build_conflict_split(train, ood, cap=args.cap, seed=seed)
    else:
        if not args.classes or args.num_train is None or args.num_ood is None:
            raise UsageError(
                "either --train-subsets/--ood-subsets or --classes with "
                "--num-train/--num-ood is required"
            )
        pool = []
        for class_name in args.classes.split(","):
            collection, _ = _load_class_artifacts(args.subsets_dir, None, class_name)
            pool.extend(collection.subsets)
        rng = random.Random(substream_seed(seed, "conflict-choose", args.task))
        if args.num_train + args.num_ood > len(pool):
            raise UsageError(
                f"requested {args.num_train + args.num_ood} subsets, classes have {len(pool)}"
            )
        chosen = rng.sample(pool, args.num_train + args.num_ood)
        split = sampler_mod.build_conflict_split(
            chosen[: args.num_train], chosen[args.num_train:], cap=args.cap, seed=seed
        )
    manifest = split.to_manifest(task=args.task)
    sampler_mod.write_manifest(manifest, args.out)
    _print_manifest_summary(manifest)
    return EXIT_OK


def _print_manifest_summary(manifest: sampler_mod.SplitManifest) -> None:
    train = manifest.ids_by_role(sampler_mod.ROLE_TRAIN)
    test = manifest.ids_by_role(sampler_mod.ROLE_TEST)
    print(
        f"task {manifest.task!r}: {len(manifest.groups)} groups, "
        f"{len(train)} train ids, {len(test)} test ids, leakage 0"
    )


def cmd_conflict(args) -> int:
    log = conflict_mod.parse_training_log(args.log)
    matrix = conflict_mod.fit_conflict_matrix(log)
    conflict_mod.export_matrix(matrix, "json", args.out)
    if args.csv:
        conflict_mod.export_matrix(matrix, "csv", args.csv)
    flag = " (ridge fallback)" if matrix.diagnostics.get("ridge") else ""
    print(
        f"fitted {len(matrix.train_subsets)}x{len(matrix.eval_subsets)} conflict matrix "
        f"from {matrix.diagnostics['steps']} steps{flag} -> {args.out}"
    )
    return EXIT_OK


def cmd_stats(args) -> int:
    if args.artifacts:
        with open(Path(args.artifacts) / "stats.json", "r", encoding="utf-8") as f:
            stats = json.load(f)
    else:
        if not args.corpus:
            raise UsageError("either --corpus or --artifacts is required")
        corpus = ingest_mod.parse_canonical(args.corpus)
        stats = subsets_mod.corpus_statistics(corpus, args.min_size)
    blob = json.dumps(stats, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(blob + "\n")
    print(blob)
    return EXIT_OK


def cmd_export(args) -> int:
    if args.graph:
        graph = metagraph_mod.read_graph(args.graph)
        metagraph_mod.export_graph(graph, args.format, args.out)
    elif args.matrix:
        matrix = conflict_mod.read_matrix(args.matrix)
        conflict_mod.export_matrix(matrix, args.format, args.out)
    else:
        raise UsageError("either --graph or --matrix is required")
    print(f"wrote {args.format} to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    config = pipeline_mod.load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.jobs is not None:
        config = dataclasses.replace(config, jobs=args.jobs)
    if args.strict:
        config = dataclasses.replace(config, strict=True)
    out = pipeline_mod.run_pipeline(config)
    with open(out / "stats.json", "r", encoding="utf-8") as f:
        stats = json.load(f)
    print(
        f"pipeline done -> {out} "
        f"({stats['classes_with_subsets']} classes, {stats['subsets_total']} subsets, "
        f"config {config.config_hash[:12]})"
    )
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="shiftforge", description=__doc__)
    parser.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    parser.add_argument("--jobs", type=int, default=None, help="worker processes for per-class stages")
    parser.add_argument("--strict", action="store_true", help="abort on record-level errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse source annotations into canonical JSONL")
    p.add_argument("--from", dest="source", required=True,
                   choices=["scene-graph", "coco", "canonical"])
    p.add_argument("--input", required=True)
    p.add_argument("--context-map", default=None)
    p.add_argument("--strict", action="store_true", default=argparse.SUPPRESS)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None, help="write skipped-record report JSON here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("subsets", help="build per-class context subsets")
    p.add_argument("--corpus", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--class", dest="class_name")
    group.add_argument("--all", action="store_true")
    p.add_argument("--min-size", type=int, default=subsets_mod.DEFAULT_MIN_SIZE)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_subsets)

    p = sub.add_parser("graph", help="build the meta-graph of a subset collection")
    p.add_argument("--subsets", required=True)
    p.add_argument("--edge-threshold", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.add_argument("--dot", default=None)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("embed", help="spectral-embed a meta-graph")
    p.add_argument("--graph", required=True)
    p.add_argument("-K", dest="k", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("distance", help="distance between two embedded nodes")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--from", dest="from_node", type=int, required=True)
    p.add_argument("--to", dest="to_node", type=int, required=True)
    p.set_defaults(func=cmd_distance)

    p = sub.add_parser("communities", help="Louvain communities of a meta-graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--subsets", default=None)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_communities)

    p = sub.add_parser("sample", help="materialize benchmark manifests")
    sample_sub = p.add_subparsers(dest="sample_kind", required=True)

    q = sample_sub.add_parser("dg", help="domain-generalization split")
    q.add_argument("--subsets-dir", required=True)
    q.add_argument("--embeddings-dir", default=None)
    q.add_argument("--task", required=True)
    q.add_argument("--test", action="append", required=True,
                   metavar="CLASS=CTX[,CTX...]")
    q.add_argument("--train", action="append", required=True,
                   metavar="CLASS=CTX[,CTX...]")
    q.add_argument("--train-per-class", type=int, required=True)
    q.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_sample_dg)

    q = sample_sub.add_parser("subpop", help="subpopulation-shift split")
    q.add_argument("--subsets-dir", required=True)
    q.add_argument("--embeddings-dir", default=None)
    q.add_argument("--task", required=True)
    q.add_argument("--cell", action="append", required=True,
                   metavar="CLASS=MAJORITY/MINORITY")
    q.add_argument("-p", type=float, required=True, help="combined minority fraction")
    q.add_argument("--total-train", type=int, required=True)
    q.add_argument("--balanced-test", type=int, required=True)
    q.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_sample_subpop)

    q = sample_sub.add_parser("conflict", help="training-conflict split")
    q.add_argument("--subsets-dir", required=True)
    q.add_argument("--task", required=True)
    q.add_argument("--classes", default=None, help="comma-separated class names")
    q.add_argument("--num-train", type=int, default=None)
    q.add_argument("--num-ood", type=int, default=None)
    q.add_argument("--train-subsets", default=None, help="comma-separated class:context refs")
    q.add_argument("--ood-subsets", default=None)
    q.add_argument("--cap", type=int, default=50)
    q.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_sample_conflict)

    p = sub.add_parser("conflict", help="fit a conflict matrix from a training log")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_conflict)

    p = sub.add_parser("stats", help="corpus / artifact statistics")
    p.add_argument("--corpus", default=None)
    p.add_argument("--artifacts", default=None)
    p.add_argument("--min-size", type=int, default=subsets_mod.DEFAULT_MIN_SIZE)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("export", help="re-export a graph or conflict matrix")
    p.add_argument("--graph", default=None)
    p.add_argument("--matrix", default=None)
    p.add_argument("--format", required=True, choices=["json", "dot", "csv"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("run", help="run the full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ShiftForgeError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # pragma: no cover - defensive
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
