"""Laplacian spectral embeddings of meta-graph nodes.

Nodes are embedded with the eigenvectors of the unnormalized graph
Laplacian L = D - A for the K smallest nontrivial eigenvalues; the
Euclidean distance between two rows quantifies the shift between the two
subsets. On disconnected graphs every per-component constant eigenvector
(eigenvalue 0) is excluded and the remaining eigenvectors are taken in
ascending eigenvalue order.

Embeddings are made reproducible by a sign convention (the largest-
magnitude entry of each column is positive) plus a lexicographic ordering
of columns within degenerate eigenvalue groups; node distances are
invariant to both choices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ParseError, ValidationError
from .metagraph import MetaGraph

DEFAULT_K = 8
_DEGENERACY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Row i holds the embedding of node i; columns are eigenvectors."""

    class_name: str
    k: int
    vectors: np.ndarray  # (n, k)
    eigenvalues: np.ndarray  # (k,) ascending, of the selected columns
    n_components: int

    def row(self, i: int) -> np.ndarray:
        return self.vectors[i]

    @property
    def n(self) -> int:
        return self.vectors.shape[0]


def laplacian(graph: MetaGraph) -> np.ndarray:
    """Dense L = D - A; meta-graphs have tens to low hundreds of nodes."""
    A = graph.adjacency_matrix()
    return np.diag(A.sum(axis=1)) - A


def connected_components(graph: MetaGraph) -> list[list[int]]:
    """Components as sorted node-index lists, ordered by smallest member."""
    neighbors: dict[int, list[int]] = {i: [] for i in range(graph.n)}
    for i, j, _ in graph.edges:
        neighbors[i].append(j)
        neighbors[j].append(i)
    seen: set[int] = set()
    components = []
    for start in range(graph.n):
        if start in seen:
            continue
        stack = [start]
        comp = []
        seen.add(start)
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in neighbors[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        components.append(sorted(comp))
    return components


def _fix_signs(X: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    X = X.copy()
    for k in range(X.shape[1]):
        idx = int(np.argmax(np.abs(X[:, k])))
        if X[idx, k] < 0:
            X[:, k] = -X[:, k]
    return X


def _order_degenerate(values: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Within groups of equal eigenvalues, order columns lexicographically."""
    order = list(range(len(values)))
    start = 0
    while start < len(values):
        stop = start + 1
        while stop < len(values) and values[stop] - values[start] <= _DEGENERACY_TOL:
            stop += 1
        if stop - start > 1:
            group = sorted(order[start:stop], key=lambda c: tuple(X[:, c]))
            order[start:stop] = group
        start = stop
    return np.array(order)


def spectral_embedding(graph: MetaGraph, k: int | None = None) -> EmbeddingMatrix:
    """Embed the graph's nodes with the K smallest nontrivial eigenvectors.

    K defaults to min(8, n - c) where c is the number of connected
    components. Raises when fewer than K nontrivial eigenvectors exist,
    naming the component sizes.
    """
    if graph.n < 1:
        raise ValidationError("cannot embed an empty graph")
    components = connected_components(graph)
    c = len(components)
    available = graph.n - c
    if k is None:
        k = min(DEFAULT_K, available)
    if k < 1 or k > available:
        sizes = ", ".join(str(len(comp)) for comp in components)
        raise ValidationError(
            f"K={k} but only {available} nontrivial eigenvectors exist "
            f"({c} connected components with sizes [{sizes}])"
        )

    L = laplacian(graph)
    values, vectors = np.linalg.eigh(L)
    # The Laplacian kernel is spanned by exactly one constant vector per
    # component, so the c smallest eigenpairs are the trivial ones.
    selected = slice(c, c + k)
    eigenvalues = values[selected].copy()
    X = _fix_signs(vectors[:, selected])
    order = _order_degenerate(eigenvalues, X)
    return EmbeddingMatrix(
        class_name=graph.class_name,
        k=k,
        vectors=np.ascontiguousarray(X[:, order]),
        eigenvalues=eigenvalues[order],
        n_components=c,
    )


def node_distance(emb: EmbeddingMatrix, i: int, j: int) -> float:
    """Euclidean distance between the embeddings of nodes i and j."""
    n = emb.n
    for idx in (i, j):
        if not 0 <= idx < n:
            raise IndexError(f"node index {idx} out of range for {n} nodes")
    return float(np.linalg.norm(emb.vectors[i] - emb.vectors[j]))


def merged_embedding(
    emb: EmbeddingMatrix, members: Sequence[tuple[int, int]]
) -> np.ndarray:
    """Size-weighted mean embedding of the member nodes being merged."""
    if not members:
        raise ValidationError("merged_embedding needs at least one member")
    total = 0
    acc = np.zeros(emb.k)
    for node, size in members:
        if size < 1:
            raise ValidationError(f"member node {node} has size {size}; sizes must be >= 1")
        acc += size * emb.vectors[node]
        total += size
    return acc / total


def embedding_to_json(emb: EmbeddingMatrix) -> dict:
    return {
        "class": emb.class_name,
        "K": emb.k,
        "n_components": emb.n_components,
        "eigenvalues": [float(v) for v in emb.eigenvalues],
        "nodes": [
            {"index": i, "vector": [float(v) for v in emb.vectors[i]]} for i in range(emb.n)
        ],
    }


def embedding_from_json(obj: dict) -> EmbeddingMatrix:
    try:
        nodes = sorted(obj["nodes"], key=lambda n: n["index"])
        vectors = np.array([n["vector"] for n in nodes], dtype=float)
        if vectors.size == 0:
            vectors = vectors.reshape(len(nodes), obj["K"])
        return EmbeddingMatrix(
            class_name=obj["class"],
            k=obj["K"],
            vectors=vectors,
            eigenvalues=np.array(obj["eigenvalues"], dtype=float),
            n_components=obj.get("n_components", 1),
        )
    except KeyError as e:
        raise ParseError(f"embedding JSON missing field {e}") from e


def write_embedding(emb: EmbeddingMatrix, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(embedding_to_json(emb), f, ensure_ascii=False, sort_keys=True)
        f.write("\n")


def read_embedding(path: str | Path) -> EmbeddingMatrix:
    with open(path, "r", encoding="utf-8") as f:
        return embedding_from_json(json.load(f))
