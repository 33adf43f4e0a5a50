"""Shared builders and independent oracles for the test suite."""

from __future__ import annotations

import random

import numpy as np

from shiftforge.metagraph import GraphNode, MetaGraph
from shiftforge.records import Corpus, ImageRecord, ObjectAnnotation, merge_instances
from shiftforge.subsets import KIND_OBJECT


def make_graph(n: int, edges, name: str = "g", threshold: float = 0.0) -> MetaGraph:
    nodes = tuple(GraphNode(i, KIND_OBJECT, f"v{i}", 10) for i in range(n))
    return MetaGraph(name, threshold, nodes, tuple(edges))


def random_metagraph(n: int, p: float, seed: int, name: str = "r") -> MetaGraph:
    rng = random.Random(seed)
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                edges.append((i, j, round(rng.uniform(0.1, 1.0), 3)))
    return make_graph(n, edges, name=name)


# Vocabularies for the synthetic corpus generator. Kept small so subsets
# overlap heavily, the interesting regime for meta-graphs.
_OBJECTS = [
    "cat", "dog", "sofa", "bed", "shelf", "cabinet", "bag", "box", "bench",
    "bike", "boat", "surfboard", "table", "chair", "car", "tree", "fence",
    "sink", "faucet", "bathtub", "frisbee", "truck", "horse", "elephant",
]
_ATTRIBUTES = ["black", "white", "small", "large", "wet", "sitting", "striped"]
_CONTEXTS = ["indoor", "outdoor", "sunny", "rainy", "beach", "kitchen"]


def synth_corpus(n_records: int, seed: int, source: str = "canonical") -> Corpus:
    """Seeded synthetic corpus; same (n_records, seed) -> same corpus."""
    rng = random.Random(seed)
    records = []
    for i in range(n_records):
        names = rng.sample(_OBJECTS, rng.randint(2, 6))
        instances = []
        for name in names:
            attrs = set(rng.sample(_ATTRIBUTES, rng.randint(0, 2)))
            instances.append((name, attrs))
        contexts = frozenset(rng.sample(_CONTEXTS, rng.randint(0, 2)))
        records.append(
            ImageRecord(
                image_id=f"img{i:06d}",
                objects=merge_instances(instances),
                general_contexts=contexts,
            )
        )
    return Corpus(records=tuple(records), source=source)


def tiny_corpus() -> Corpus:
    """Three images of known composition, used by hand-derived examples."""
    def rec(image_id, names, contexts=()):
        return ImageRecord(
            image_id=image_id,
            objects=tuple(ObjectAnnotation(n, frozenset(a)) for n, a in names),
            general_contexts=frozenset(contexts),
        )

    return Corpus(
        records=(
            rec("a", [("cat", ["black"]), ("sofa", [])], ["indoor"]),
            rec("b", [("cat", []), ("sofa", ["red"])], ["indoor"]),
            rec("c", [("cat", ["black"]), ("bed", [])]),
        ),
        source="canonical",
    )


def iter_partitions(n: int):
    """All set partitions of range(n), as restricted growth strings."""
    def rec(i, maxlabel, cur):
        if i == n:
            yield tuple(cur)
            return
        for lab in range(maxlabel + 1):
            cur.append(lab)
            yield from rec(i + 1, max(maxlabel, lab + 1), cur)
            cur.pop()

    yield from rec(0, 0, [])


def exhaustive_best_modularity(graph: MetaGraph) -> float:
    """Brute-force optimum of modularity over every partition (n <= ~10)."""
    A = graph.adjacency_matrix()
    deg = A.sum(axis=1)
    total = deg.sum()
    if total == 0:
        return 0.0
    best = -2.0
    for part in iter_partitions(graph.n):
        coms: dict[int, list[int]] = {}
        for node, c in enumerate(part):
            coms.setdefault(c, []).append(node)
        q = 0.0
        for members in coms.values():
            idx = np.array(members)
            q += A[np.ix_(idx, idx)].sum() / total - (deg[idx].sum() / total) ** 2
        if q > best:
            best = q
    return float(best)
