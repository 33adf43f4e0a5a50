"""Per-class weighted undirected graphs over context subsets.

Nodes are a class's subsets (indices frozen at build time and reused by
every downstream stage); an edge's weight is the overlap coefficient of
the two subsets' image-id sets, and edges below a threshold are dropped to
sparsify the graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .subsets import SubsetCollection


@dataclass(frozen=True, slots=True)
class GraphNode:
    index: int
    kind: str
    value: str
    size: int


@dataclass(frozen=True)
class MetaGraph:
    class_name: str
    edge_threshold: float
    nodes: tuple[GraphNode, ...]
    edges: tuple[tuple[int, int, float], ...]  # (i, j, weight) with i < j

    @property
    def n(self) -> int:
        return len(self.nodes)

    def adjacency_matrix(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        for i, j, w in self.edges:
            A[i, j] = w
            A[j, i] = w
        return A

    def degrees(self) -> np.ndarray:
        return self.adjacency_matrix().sum(axis=1)


def overlap_coefficient(x: set | frozenset, y: set | frozenset) -> float:
    """|X ∩ Y| / min(|X|, |Y|); symmetric, in [0, 1], undefined on empties."""
    if not x or not y:
        raise ValidationError("overlap coefficient is undefined for empty sets")
    return len(x & y) / min(len(x), len(y))


def build_metagraph(collection: SubsetCollection, edge_threshold: float = 0.1) -> MetaGraph:
    """Build the meta-graph of a subset collection.

    One node per subset in collection order. An edge (i, j) exists iff the
    overlap coefficient is >= `edge_threshold`; weight-zero pairs are never
    materialized even at threshold 0.
    """
    if not 0.0 <= edge_threshold <= 1.0:
        raise ValidationError(f"edge_threshold must be in [0, 1], got {edge_threshold}")
    nodes = tuple(
        GraphNode(index=i, kind=s.context.kind, value=s.context.value, size=s.size)
        for i, s in enumerate(collection.subsets)
    )
    id_sets = [frozenset(s.image_ids) for s in collection.subsets]
    edges = []
    for i in range(len(id_sets)):
        for j in range(i + 1, len(id_sets)):
            w = overlap_coefficient(id_sets[i], id_sets[j])
            if w > 0.0 and w >= edge_threshold:
                edges.append((i, j, w))
    return MetaGraph(
        class_name=collection.class_name,
        edge_threshold=edge_threshold,
        nodes=nodes,
        edges=tuple(edges),
    )


def graph_to_json(graph: MetaGraph) -> dict:
    return {
        "class": graph.class_name,
        "edge_threshold": graph.edge_threshold,
        "nodes": [
            {"index": n.index, "kind": n.kind, "value": n.value, "size": n.size}
            for n in graph.nodes
        ],
        "edges": [{"i": i, "j": j, "w": w} for i, j, w in graph.edges],
    }


def graph_from_json(obj: dict) -> MetaGraph:
    try:
        nodes = tuple(
            GraphNode(n["index"], n["kind"], n["value"], n["size"]) for n in obj["nodes"]
        )
        edges = tuple((e["i"], e["j"], e["w"]) for e in obj["edges"])
        return MetaGraph(obj["class"], obj["edge_threshold"], nodes, edges)
    except KeyError as e:
        raise ParseError(f"graph JSON missing field {e}") from e


def _dot_quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def graph_to_dot(graph: MetaGraph) -> str:
    """Render as Graphviz dot with context values as labels."""
    lines = [f"graph {_dot_quote(graph.class_name)} {{"]
    for n in graph.nodes:
        lines.append(
            f"  {n.index} [label={_dot_quote(n.value)} kind={_dot_quote(n.kind)} size={n.size}];"
        )
    for i, j, w in graph.edges:
        lines.append(f"  {i} -- {j} [weight={w:.6g}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_graph(graph: MetaGraph, fmt: str, path: str | Path) -> None:
    """Write the graph as `json` (lossless) or `dot` (for visualization)."""
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as f:
            json.dump(graph_to_json(graph), f, ensure_ascii=False, sort_keys=True)
            f.write("\n")
    elif fmt == "dot":
        with open(path, "w", encoding="utf-8") as f:
            f.write(graph_to_dot(graph))
    else:
        raise ValidationError(f"unknown graph export format {fmt!r}")


def read_graph(path: str | Path) -> MetaGraph:
    with open(path, "r", encoding="utf-8") as f:
        return graph_from_json(json.load(f))
