import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hinlp.core_network import CoreGraph, build_core
from hinlp.features import (SEGMENTS, canonical_signature, core_relation_features,
                            edge_signatures, enumerate_paths, extract, load_features,
                            path_features, path_segment_features, save_features, segment_of,
                            select_top_paths)

from helpers import brute_paths, store_from_triples

SEGMENT_TABLE = {(1, 1): "1", (1, 2): "2", (2, 2): "2", (1, 3): "3:1", (3, 3): "3:1",
                 (2, 3): "3:2", (1, 4): "4:1", (4, 4): "4:1", (2, 4): "4:2", (3, 4): "4:2"}


class TestSegments:
    def test_full_table(self):
        for (pos, length), seg in SEGMENT_TABLE.items():
            assert segment_of(pos, length) == seg
        assert set(SEGMENT_TABLE.values()) == set(SEGMENTS)

    @pytest.mark.parametrize("pos,length", [(1, 5), (0, 3), (4, 3)])
    def test_invalid(self, pos, length):
        with pytest.raises(ValueError):
            segment_of(pos, length)

    @given(st.integers(1, 4).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n))))
    def test_mirror_symmetry(self, case):
        n, pos = case
        assert segment_of(pos, n) == segment_of(n + 1 - pos, n)


class TestEnumeratePaths:
    def test_worked_pruning_example(self):
        store = store_from_triples([("A", "is_in", "c"), ("c", "is_in", "B"),
                                    ("c", "alliance", "d"), ("d", "supports", "B")])
        paths = enumerate_paths(store, ("A", "B"))
        assert [(p.nodes, p.relations) for p in paths] == [(("A", "c", "B"), ("is_in", "is_in"))]

    def test_direct_only(self):
        store = store_from_triples([("A", "supplier", "B")])
        (p,) = enumerate_paths(store, ("A", "B"))
        assert len(p) == 1 and p.relations == ("supplier",)

    def test_diamond_keeps_both(self):
        store = store_from_triples([("A", "r", "x"), ("x", "r", "B"), ("A", "s", "y"), ("y", "s", "B")])
        nodes = sorted(p.nodes for p in enumerate_paths(store, ("A", "B")))
        assert nodes == [("A", "x", "B"), ("A", "y", "B")]

    def test_length_four_blocked_by_length_three(self):
        store = store_from_triples([("A", "r", "a"), ("a", "r", "b"), ("b", "r", "B"),
                                    ("b", "r", "m"), ("m", "r", "n"), ("n", "r", "B"),
                                    ("a", "r", "m")])
        nodes = {p.nodes for p in enumerate_paths(store, ("A", "B"))}
        assert nodes == {("A", "a", "b", "B")}

    def test_parallel_relation_types_expand(self):
        store = store_from_triples([("A", "r", "c"), ("A", "s", "c"), ("c", "t", "B")])
        rels = sorted(p.relations for p in enumerate_paths(store, ("A", "B")))
        assert rels == [("r", "t"), ("s", "t")]

    def test_unknown_endpoint(self):
        with pytest.raises(KeyError):
            enumerate_paths(store_from_triples([("A", "r", "B")]), ("A", "Z"))

    def test_expansion_cap_excludes_hub(self):
        triples = [("A", "r", "h"), ("h", "r", "B")] + [("h", "r", f"x{k}") for k in range(5)]
        store = store_from_triples(triples)
        assert enumerate_paths(store, ("A", "B"), expansion_cap=3) == []
        assert len(enumerate_paths(store, ("A", "B"), expansion_cap=None)) == 1

    @given(st.lists(st.tuples(st.sampled_from("ABcdefg"), st.sampled_from(["r", "s"]),
                              st.sampled_from("ABcdefg")), min_size=1, max_size=14),
           st.integers(1, 4))
    def test_matches_brute_force(self, triples, max_len):
        triples = [t for t in triples if t[0] != t[2]] + [("A", "r", "z"), ("B", "r", "z2")]
        store = store_from_triples(triples)
        got = {(p.nodes, p.relations) for p in enumerate_paths(store, ("A", "B"), max_len,
                                                               expansion_cap=None)}
        assert got == brute_paths(store, "A", "B", max_len)

    @given(st.lists(st.tuples(st.sampled_from("ABcdef"), st.sampled_from(["r", "s"]),
                              st.sampled_from("ABcdef")), min_size=1, max_size=12))
    def test_retained_paths_are_simple(self, triples):
        triples = [t for t in triples if t[0] != t[2]] + [("A", "r", "z"), ("B", "r", "z2")]
        store = store_from_triples(triples)
        for p in enumerate_paths(store, ("A", "B")):
            assert len(set(p.nodes)) == len(p.nodes)
            assert (p.nodes[0], p.nodes[-1]) == ("A", "B")


class TestSelectTopPaths:
    def test_fewer_than_k(self):
        assert select_top_paths([{("a",)}, {("b",)}], k=10) == [("a",), ("b",)]

    def test_count_wins(self):
        sigs = [{("x",)}] * 5 + [{("y",)}] * 3
        assert select_top_paths(sigs, k=1) == [("x",)]

    def test_tie_lexicographic(self):
        assert select_top_paths([{("b",), ("a", "c")}], k=1) == [("a", "c")]

    def test_canonical_signature(self):
        assert canonical_signature(["s", "r"]) == ("r", "s")
        assert canonical_signature(["r", "s", "t"]) == ("r", "s", "t")


@pytest.fixture
def small_world():
    triples = [("A", "supplier", "B"), ("A", "strategic_alliance", "B"),
               ("B", "customer", "C"), ("A", "owns", "C"),
               ("A", "is_in", "loc"), ("loc", "is_in", "C")]
    store = store_from_triples(triples)
    core = build_core(store, {"A", "B", "C"})
    return store, core


class TestFeatureMatrices:
    def test_core_relation_rows(self, small_world):
        _, core = small_world
        fm = core_relation_features(core)
        assert fm.catalog == ["customer", "owns", "strategic_alliance", "supplier"]
        assert core.edge_keys() == [("A", "B"), ("A", "C"), ("B", "C")]
        np.testing.assert_array_equal(fm.dense(), [[0, 0, 1, 1], [0, 1, 0, 0], [1, 0, 0, 0]])
        fm.check_aligned(core)

    def test_segment_single_path(self):
        store = store_from_triples([("A", "is_in", "c"), ("c", "is_in", "B")])
        sigs = [{p.signature for p in enumerate_paths(store, ("A", "B"))}]
        fm = path_segment_features(core_with_edge("A", "B"), sigs)
        assert fm.catalog == [("is_in", "2")]
        np.testing.assert_array_equal(fm.dense(), [[1]])

    def test_segment_direct_edge(self):
        store = store_from_triples([("A", "supplier", "B")])
        core = build_core(store, {"A", "B"})
        fm = extract("segment", core, store)
        assert fm.catalog == [("supplier", "1")]
        np.testing.assert_array_equal(fm.dense(), [[1]])

    def test_path_columns(self, small_world):
        store, core = small_world
        sigs = edge_signatures(store, core)
        fm = path_features(core, select_top_paths(sigs, 3000), sigs)
        # A-C: direct, via B (supplier or alliance, then customer) and via loc
        row = dict(zip(fm.catalog, fm.dense()[core.edge_keys().index(("A", "C"))]))
        assert row[("is_in", "is_in")] == 1
        assert row[("customer", "supplier")] == 1
        assert row[("customer", "strategic_alliance")] == 1
        assert row[("owns",)] == 1
        assert sum(row.values()) == 4

    def test_path_vocab_truncation_drops_columns(self, small_world):
        store, core = small_world
        fm = extract("path", core, store, top_k=1)
        assert fm.shape == (core.n_edges, 1)

    def test_identical_neighbourhoods_identical_rows(self):
        store = store_from_triples([("A", "r", "B"), ("C", "r", "D")])
        fm = extract("path", build_core(store, "ABCD"), store)
        np.testing.assert_array_equal(fm.dense()[0], fm.dense()[1])

    def test_segment_is_collapse_of_path(self, rng):
        rels = ["r", "s", "t"]
        nodes = [f"v{k}" for k in range(12)]
        triples = {(nodes[a], rels[r], nodes[b]) for a, r, b in
                   zip(rng.integers(0, 12, 40), rng.integers(0, 3, 40), rng.integers(0, 12, 40)) if a != b}
        store = store_from_triples(sorted(triples))
        core = build_core(store, nodes[:6])
        sigs = edge_signatures(store, core)
        path = path_features(core, select_top_paths(sigs, 10**6), sigs).dense()
        seg_fm = path_segment_features(core, sigs)
        col = {c: k for k, c in enumerate(seg_fm.catalog)}
        expect = np.zeros_like(seg_fm.dense())
        vocab = select_top_paths(sigs, 10**6)
        for r in range(core.n_edges):
            for k, sig in enumerate(vocab):
                if path[r, k]:
                    for pos, rel in enumerate(sig, 1):
                        expect[r, col[(rel, segment_of(pos, len(sig)))]] = 1
        np.testing.assert_array_equal(seg_fm.dense(), expect)

    @pytest.mark.parametrize("scheme", ["relation", "path", "segment"])
    def test_round_trip(self, tmp_path, small_world, scheme):
        store, core = small_world
        fm = extract(scheme, core, store)
        save_features(fm, str(tmp_path / "f.tsv"))
        back = load_features(str(tmp_path / "f.tsv"))
        assert back.scheme == scheme and back.catalog == fm.catalog
        assert back.edge_keys == fm.edge_keys
        np.testing.assert_array_equal(back.dense(), fm.dense())

    def test_misaligned(self, small_world):
        store, core = small_world
        fm = extract("relation", core)
        fm.edge_keys = fm.edge_keys[::-1]
        with pytest.raises(ValueError):
            fm.check_aligned(core)

    def test_unknown_scheme(self, small_world):
        with pytest.raises(ValueError):
            extract("meta", small_world[1])


def core_with_edge(a, b):
    return CoreGraph(nodes=[a, b], edges=[(0, 1)], edge_relations=[frozenset()])
