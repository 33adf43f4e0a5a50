import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shiftforge.errors import ValidationError
from shiftforge.metagraph import (
    build_metagraph,
    export_graph,
    graph_from_json,
    graph_to_dot,
    graph_to_json,
    overlap_coefficient,
    read_graph,
)
from shiftforge.subsets import KIND_OBJECT, ContextTag, Subset, SubsetCollection

from conftest import random_metagraph


def make_collection(id_lists, class_name="cat", min_size=1):
    subsets = tuple(
        Subset(class_name, ContextTag(KIND_OBJECT, f"ctx{i}"), tuple(sorted(ids)))
        for i, ids in enumerate(id_lists)
    )
    return SubsetCollection(
        class_name=class_name,
        min_size=min_size,
        class_image_count=len({x for ids in id_lists for x in ids}),
        subsets=subsets,
    )


class TestOverlapCoefficient:
    def test_identity(self):
        assert overlap_coefficient({"a", "b"}, {"a", "b"}) == 1.0

    def test_disjoint(self):
        assert overlap_coefficient({"a"}, {"b"}) == 0.0

    def test_direct_evaluation(self):
        x = set(map(str, range(6)))
        y = set(map(str, range(3, 13)))
        assert len(x & y) == 3 and len(x) == 6 and len(y) == 10
        assert overlap_coefficient(x, y) == 0.5

    def test_empty_is_domain_error(self):
        with pytest.raises(ValidationError, match="empty"):
            overlap_coefficient(set(), {"a"})

    @given(
        st.frozensets(st.integers(0, 30), min_size=1),
        st.frozensets(st.integers(0, 30), min_size=1),
    )
    @settings(max_examples=100, deadline=None)
    def test_symmetric_and_bounded(self, x, y):
        w = overlap_coefficient(x, y)
        assert w == overlap_coefficient(y, x)
        assert 0.0 <= w <= 1.0


class TestBuildMetagraph:
    def test_single_subset(self):
        graph = build_metagraph(make_collection([["1", "2"]]))
        assert graph.n == 1
        assert graph.edges == ()

    def test_identical_subsets(self):
        graph = build_metagraph(make_collection([["1", "2"], ["1", "2"]]), 0.1)
        assert graph.edges == ((0, 1, 1.0),)

    def test_three_subset_hand_example(self):
        a = [str(i) for i in range(1, 11)]
        b = [str(i) for i in range(6, 16)]
        c = [str(i) for i in range(20, 30)]
        graph = build_metagraph(make_collection([a, b, c]), 0.1)
        assert graph.edges == ((0, 1, 0.5),)

    def test_zero_overlap_never_materialized(self):
        graph = build_metagraph(make_collection([["1"], ["2"]]), 0.0)
        assert graph.edges == ()

    def test_edge_equal_to_threshold_kept(self):
        # overlap 2/10 = 0.2 exactly
        a = [str(i) for i in range(10)]
        b = [str(i) for i in range(8, 18)]
        graph = build_metagraph(make_collection([a, b]), 0.2)
        assert graph.edges == ((0, 1, 0.2),)

    def test_threshold_monotonicity(self):
        coll = _random_collection(seed=5, n=10)
        low = build_metagraph(coll, 0.1)
        high = build_metagraph(coll, 0.4)
        assert set(high.edges) <= set(low.edges)
        assert high.nodes == low.nodes

    def test_node_metadata_frozen_in_collection_order(self):
        coll = _random_collection(seed=9, n=6)
        graph = build_metagraph(coll, 0.1)
        for node, subset in zip(graph.nodes, coll.subsets):
            assert node.index == coll.subsets.index(subset)
            assert (node.kind, node.value, node.size) == (
                subset.context.kind, subset.context.value, subset.size,
            )

    def test_bad_threshold(self):
        with pytest.raises(ValidationError):
            build_metagraph(make_collection([["1"]]), 1.5)


def _random_collection(seed, n, class_name="cat"):
    rng = random.Random(seed)
    universe = [f"img{i}" for i in range(60)]
    id_lists = [rng.sample(universe, rng.randint(3, 25)) for _ in range(n)]
    return make_collection(id_lists, class_name=class_name)


def brute_force_edges(collection, threshold):
    """Independent O(n^2) recomputation straight from the id sets."""
    sets = [set(s.image_ids) for s in collection.subsets]
    edges = []
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            inter = len(sets[i] & sets[j])
            if inter == 0:
                continue
            w = inter / min(len(sets[i]), len(sets[j]))
            if w >= threshold:
                edges.append((i, j, w))
    return tuple(edges)


def test_brute_force_equivalence_50_collections():
    rng = random.Random(424242)
    for trial in range(50):
        n = rng.randint(1, 12)
        threshold = rng.choice([0.0, 0.1, 0.25, 0.5])
        coll = _random_collection(seed=rng.randrange(10**9), n=n)
        graph = build_metagraph(coll, threshold)
        assert graph.edges == brute_force_edges(coll, threshold)


GOLDEN_DOT = """graph "cat" {
  0 [label="ctx0" kind="object_presence" size=10];
  1 [label="ctx1" kind="object_presence" size=10];
  2 [label="ctx2" kind="object_presence" size=10];
  0 -- 1 [weight=0.5];
}
"""


class TestExport:
    def test_one_node_dot(self):
        graph = build_metagraph(make_collection([["1", "2"]]))
        dot = graph_to_dot(graph)
        assert 'label="ctx0"' in dot
        assert dot.startswith('graph "cat"')

    def test_json_round_trip_random(self):
        graph = random_metagraph(9, 0.5, seed=77, name="cat")
        assert graph_from_json(graph_to_json(graph)) == graph

    def test_json_file_round_trip(self, tmp_path):
        graph = random_metagraph(7, 0.5, seed=78, name="dog")
        export_graph(graph, "json", tmp_path / "g.json")
        assert read_graph(tmp_path / "g.json") == graph

    def test_golden_dot(self):
        a = [str(i) for i in range(1, 11)]
        b = [str(i) for i in range(6, 16)]
        c = [str(i) for i in range(20, 30)]
        graph = build_metagraph(make_collection([a, b, c]), 0.1)
        assert graph_to_dot(graph) == GOLDEN_DOT

    def test_unknown_format(self, tmp_path):
        graph = build_metagraph(make_collection([["1"]]))
        with pytest.raises(ValidationError, match="format"):
            export_graph(graph, "graphml", tmp_path / "g.xml")

    def test_json_schema_field_names(self):
        graph = build_metagraph(make_collection([["1", "2"], ["1", "2"]]), 0.1)
        payload = graph_to_json(graph)
        assert set(payload) == {"class", "edge_threshold", "nodes", "edges"}
        assert set(payload["nodes"][0]) == {"index", "kind", "value", "size"}
        assert set(payload["edges"][0]) == {"i", "j", "w"}
        json.dumps(payload)  # JSON-serializable
