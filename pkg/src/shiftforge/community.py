"""Louvain community detection over meta-graphs and community merging.

Modularity compares intra-community edge weight against a degree-based
null model; Louvain greedily maximizes it in two phases: local node moves
in seeded-shuffled order, then contraction of communities to super-nodes
(keeping aggregated edge weights as self-loops), repeated until no move
improves. Node visit order is the only randomness, so (graph, seed)
determines the partition exactly.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ParseError, ValidationError
from .metagraph import MetaGraph
from .spectral import EmbeddingMatrix, merged_embedding
from .subsets import SubsetCollection


@dataclass(frozen=True)
class Partition:
    """Node index -> community id (contiguous from 0), plus its modularity."""

    assignment: tuple[int, ...]
    modularity: float
    seed: int = 0

    @property
    def n_communities(self) -> int:
        return max(self.assignment) + 1 if self.assignment else 0

    def communities(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n_communities)]
        for node, com in enumerate(self.assignment):
            out[com].append(node)
        return out


@dataclass(frozen=True, eq=False)
class MergedSubset:
    """One community's subsets merged: union of images, weighted embedding."""

    community_id: int
    class_name: str
    member_indices: tuple[int, ...]
    member_values: tuple[str, ...]
    member_sizes: tuple[int, ...]
    image_ids: tuple[str, ...]  # deduplicated union, sorted
    embedding: np.ndarray | None

    @property
    def size(self) -> int:
        return len(self.image_ids)

    @property
    def name(self) -> str:
        return f"{self.class_name}({'+'.join(self.member_values)})"


def modularity(graph: MetaGraph, assignment: Sequence[int]) -> float:
    """Weighted modularity of a node-to-community assignment.

    Q = (1/2m) * sum_ij [A_ij - k_i k_j / 2m] * delta(c_i, c_j). A graph
    with zero total edge weight has Q defined as 0.0 for the all-singletons
    partition and no other.
    """
    if len(assignment) != graph.n:
        raise ValidationError(
            f"assignment covers {len(assignment)} nodes, graph has {graph.n}"
        )
    A = graph.adjacency_matrix()
    degrees = A.sum(axis=1)
    two_m = degrees.sum()
    if two_m == 0.0:
        if len(set(assignment)) == graph.n:
            return 0.0
        raise ValidationError(
            "modularity is undefined on an edgeless graph unless all nodes are singletons"
        )
    q = 0.0
    for members in _group(assignment).values():
        idx = np.array(members)
        q += A[np.ix_(idx, idx)].sum() / two_m - (degrees[idx].sum() / two_m) ** 2
    return float(q)


def _group(assignment: Sequence[int]) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    for node, com in enumerate(assignment):
        out.setdefault(com, []).append(node)
    return out


class _WorkGraph:
    """Adjacency in matrix convention: loops[i] carries the full ordered
    pair mass A_ii (twice the internal weight after contraction)."""

    def __init__(self, n: int):
        self.n = n
        self.weights: list[dict[int, float]] = [dict() for _ in range(n)]
        self.loops = [0.0] * n

    @classmethod
    def from_metagraph(cls, graph: MetaGraph) -> "_WorkGraph":
        g = cls(graph.n)
        for i, j, w in graph.edges:
            g.weights[i][j] = g.weights[i].get(j, 0.0) + w
            g.weights[j][i] = g.weights[j].get(i, 0.0) + w
        return g

    def degree(self, i: int) -> float:
        return sum(self.weights[i].values()) + self.loops[i]


def _one_level(g: _WorkGraph, rng: random.Random) -> tuple[list[int], bool]:
    """Phase 1: greedy local moves until a full sweep moves nothing.

    Gains are compared in units of 2m*Q/2, which preserves both sign and
    tie structure; ties go to the lowest community id because candidate
    communities are scanned in ascending order.
    """
    node2com = list(range(g.n))
    degrees = [g.degree(i) for i in range(g.n)]
    com_tot = degrees.copy()
    two_m = sum(degrees)
    order = list(range(g.n))
    rng.shuffle(order)
    moved_any = False
    while True:
        moves = 0
        for node in order:
            current = node2com[node]
            k_i = degrees[node]
            links: dict[int, float] = {}
            for nbr, w in g.weights[node].items():
                com = node2com[nbr]
                links[com] = links.get(com, 0.0) + w
            com_tot[current] -= k_i
            stay = links.get(current, 0.0) - com_tot[current] * k_i / two_m
            best_com, best_gain = current, 0.0
            for com in sorted(links):
                if com == current:
                    continue
                gain = links[com] - com_tot[com] * k_i / two_m - stay
                if gain > best_gain:
                    best_com, best_gain = com, gain
            com_tot[best_com] += k_i
            if best_com != current:
                node2com[node] = best_com
                moves += 1
                moved_any = True
        if moves == 0:
            break
    return node2com, moved_any


def _contract(g: _WorkGraph, node2com: list[int]) -> tuple[_WorkGraph, list[int]]:
    """Phase 2: shrink each community to one vertex, keeping edge mass."""
    coms = sorted(set(node2com))
    relabel = {c: i for i, c in enumerate(coms)}
    new = _WorkGraph(len(coms))
    for i in range(g.n):
        ci = relabel[node2com[i]]
        new.loops[ci] += g.loops[i]
        for j, w in g.weights[i].items():
            cj = relabel[node2com[j]]
            if ci == cj:
                new.loops[ci] += w  # each internal edge seen from both ends
            else:
                new.weights[ci][cj] = new.weights[ci].get(cj, 0.0) + w
    return new, [relabel[c] for c in node2com]


def louvain(graph: MetaGraph, seed: int = 0) -> Partition:
    """Two-phase Louvain on a meta-graph.

    The returned modularity is never below the all-singletons baseline
    (phase 1 starts there and only takes strictly improving moves).
    """
    if graph.n < 1:
        raise ValidationError("cannot partition an empty graph")
    if not graph.edges:
        # isolated nodes carry no merge evidence; keep them singletons
        return Partition(assignment=tuple(range(graph.n)), modularity=0.0, seed=seed)

    rng = random.Random(seed)
    g = _WorkGraph.from_metagraph(graph)
    node_map = list(range(graph.n))  # original node -> current super-node
    while g.n > 1:
        node2com, moved = _one_level(g, rng)
        if not moved:
            break
        g, contracted = _contract(g, node2com)
        node_map = [contracted[node_map[i]] for i in range(graph.n)]

    assignment = _renumber(node_map)
    return Partition(
        assignment=tuple(assignment),
        modularity=modularity(graph, assignment),
        seed=seed,
    )


def _renumber(assignment: Sequence[int]) -> list[int]:
    """Contiguous community ids ordered by smallest member node index."""
    first_seen: dict[int, int] = {}
    for com in assignment:
        if com not in first_seen:
            first_seen[com] = len(first_seen)
    return [first_seen[com] for com in assignment]


def merge_by_community(
    collection: SubsetCollection,
    graph: MetaGraph,
    partition: Partition,
    embeddings: EmbeddingMatrix | None = None,
) -> list[MergedSubset]:
    """One merged subset per community: image unions and size-weighted
    embeddings (sizes are the pre-merge subset sizes)."""
    if graph.class_name != collection.class_name:
        raise ValidationError(
            f"graph is for class {graph.class_name!r}, collection for {collection.class_name!r}"
        )
    if graph.n != len(collection.subsets):
        raise ValidationError(
            f"graph has {graph.n} nodes but collection has {len(collection.subsets)} subsets"
        )
    if len(partition.assignment) != graph.n:
        raise ValidationError("partition does not cover the graph's nodes")
    for node, subset in zip(graph.nodes, collection.subsets):
        if (node.kind, node.value, node.size) != (
            subset.context.kind,
            subset.context.value,
            subset.size,
        ):
            raise ValidationError(
                f"node {node.index} ({node.kind}:{node.value}) does not match the collection; "
                "graph and subsets come from different builds"
            )
    if embeddings is not None:
        if embeddings.class_name != graph.class_name or embeddings.n != graph.n:
            raise ValidationError("embeddings do not match the graph")

    merged = []
    for community_id, members in enumerate(partition.communities()):
        union: set[str] = set()
        for i in members:
            union.update(collection.subsets[i].image_ids)
        vector = None
        if embeddings is not None:
            vector = merged_embedding(
                embeddings, [(i, collection.subsets[i].size) for i in members]
            )
        merged.append(
            MergedSubset(
                community_id=community_id,
                class_name=collection.class_name,
                member_indices=tuple(members),
                member_values=tuple(collection.subsets[i].context.value for i in members),
                member_sizes=tuple(collection.subsets[i].size for i in members),
                image_ids=tuple(sorted(union)),
                embedding=vector,
            )
        )
    return merged


def partition_to_json(graph: MetaGraph, partition: Partition) -> dict:
    return {
        "class": graph.class_name,
        "seed": partition.seed,
        "modularity": partition.modularity,
        "communities": partition.communities(),
    }


def partition_from_json(obj: dict) -> Partition:
    try:
        size = sum(len(c) for c in obj["communities"])
        assignment = [0] * size
        for com, members in enumerate(obj["communities"]):
            for node in members:
                assignment[node] = com
        return Partition(
            assignment=tuple(assignment),
            modularity=obj["modularity"],
            seed=obj["seed"],
        )
    except KeyError as e:
        raise ParseError(f"partition JSON missing field {e}") from e


def write_partition(
    graph: MetaGraph, partition: Partition, path: str | Path, extra: dict | None = None
) -> None:
    payload = partition_to_json(graph, partition)
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, sort_keys=True)
        f.write("\n")


def read_partition(path: str | Path) -> Partition:
    with open(path, "r", encoding="utf-8") as f:
        return partition_from_json(json.load(f))
