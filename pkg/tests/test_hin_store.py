from datetime import date

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hinlp.hin_store import (HinStore, IngestError, IngestReport, MatchRules, Relation,
                             collapse_temporal_edges, filter_relations, ingest_edges, ingest_files,
                             ingest_nodes, lcs_length, load_store, merge_entities, name_similarity,
                             parse_edge_line, prepare_store, save_store)


def firm(store, key, **attrs):
    ent = store.entity(key, "firm")
    ent.kind = "firm"
    ent.attributes.update(attrs)
    return ent


class TestIngest:
    def test_empty_stream(self):
        store = HinStore()
        report = ingest_edges(store, [])
        assert (report.entities, report.relations, report.merged_entities) == (0, 0, 0)
        assert report.dropped_relations == {} and report.errors == []

    def test_two_records_sharing_endpoint(self):
        store = HinStore()
        report = ingest_edges(store, ["a\tsupplier\tb\t-\t-\n", "b\tcustomer\tc\t2015-01-01\t-\n"])
        assert (report.entities, report.relations) == (3, 2)

    def test_malformed_line_recorded_with_line_number(self):
        lines = [f"f{k}\tsupplier\tf{k + 1}\t-\t-\n" for k in range(10)]
        lines[6] = "f6\tsupplier\n"
        store = HinStore()
        report = ingest_edges(store, lines, source="edges.tsv")
        assert report.relations == 9
        assert len(report.errors) == 1
        assert (report.errors[0].source, report.errors[0].line) == ("edges.tsv", 7)

    @pytest.mark.parametrize("line", [
        "a\tsupplier\tb\t2015-13-01\t-",
        "a\tsupplier\tb\t-\t1.5",
        "a\t\tb\t-\t-",
        "a\tsupplier\tb\t-",
    ])
    def test_bad_fields_rejected(self, line):
        with pytest.raises(ValueError):
            parse_edge_line(line)

    def test_parse_dated_weighted(self):
        r = parse_edge_line("a\town_stock\tb\t2016-03-31\t0.25\n")
        assert r == Relation("a", "b", "own_stock", date(2016, 3, 31), date(2016, 3, 31), 0.25)
        assert r.dated

    def test_self_loop_dropped(self):
        store = HinStore()
        report = ingest_edges(store, ["a\tsupplier\ta\t-\t-\n"])
        assert report.relations == 0 and report.dropped_relations == {"self_loop": 1}

    def test_node_attributes_and_validation(self):
        store = HinStore()
        report = ingest_nodes(store, ["a\tkind\tfirm\n", "a\tname\tAcme\n",
                                      "a\tlatitude\t91.0\n", "b\tkind\tspaceship\n"])
        assert store.entities["a"].kind == "firm"
        assert store.entities["a"].name == "Acme"
        assert [e.line for e in report.errors] == [3, 4]

    def test_unreadable_source_names_it(self, tmp_path):
        missing = tmp_path / "nope.tsv"
        with pytest.raises(IngestError, match="nope.tsv"):
            ingest_files(HinStore(), [str(missing)])

    @given(st.lists(st.tuples(st.sampled_from("abcdef"), st.sampled_from(["r1", "r2"]),
                              st.sampled_from("abcdef")), max_size=30))
    def test_report_counts_match_recount(self, triples):
        store = HinStore()
        report = ingest_edges(store, [f"{s}\t{r}\t{d}\t-\t-\n" for s, r, d in triples])
        assert report.relations == len(store.relations) == sum(s != d for s, _, d in triples)
        assert report.entities == len(store.entities)
        assert report.entities == len({n for s, _, d in triples if s != d for n in (s, d)})


class TestNameSimilarity:
    def test_lcs(self):
        assert lcs_length("abcbdab", "bdcaba") == 4
        assert lcs_length("", "abc") == 0

    def test_ratio(self):
        # "acme corp" vs "acme corporation": LCS 9, lengths 9 and 16
        assert name_similarity("Acme Corp", "ACME Corporation") == pytest.approx(18 / 25)
        assert name_similarity("Acme, Inc.", "acme inc") == 1.0
        assert name_similarity(None, "acme") == 0.0

    @given(st.text(max_size=12), st.text(max_size=12))
    def test_symmetric_and_bounded(self, a, b):
        s = name_similarity(a, b)
        assert s == name_similarity(b, a)
        assert 0.0 <= s <= 1.0


class TestMerge:
    def test_shared_ticker_merges(self):
        store = HinStore()
        firm(store, "f1", name="Acme Corp", ticker="XYZ")
        firm(store, "f2", name="ACME Corporation", ticker="xyz")
        store.add_relation(Relation("f2", "g", "supplier"))
        res = merge_entities(store, MatchRules(threshold=0.5))
        assert res == {"f2": "f1"}
        assert "f2" not in store.entities
        assert store.relations == [Relation("f1", "g", "supplier")]

    def test_identical_names_without_key_do_not_merge(self):
        store = HinStore()
        firm(store, "f1", name="Acme")
        firm(store, "f2", name="Acme")
        assert merge_entities(store, MatchRules(threshold=0.5)) == {}

    def test_transitive_chain(self):
        store = HinStore()
        firm(store, "a", name="Acme", homepage="acme.com")
        firm(store, "b", name="Acme", homepage="acme.com", ticker="ACM")
        firm(store, "c", name="Acme", ticker="ACM")
        res = merge_entities(store, MatchRules(threshold=0.9))
        assert res == {"b": "a", "c": "a"}
        assert set(store.entities) == {"a"}

    def test_conflicting_kinds_rejected(self):
        store = HinStore()
        firm(store, "a", name="Acme", ticker="ACM")
        p = store.entity("b", "person")
        p.attributes.update(name="Acme", ticker="ACM")
        assert merge_entities(store) == {}
        assert store.merge_conflicts == [("a", "b")]

    def test_self_loop_from_merge_dropped(self):
        store = HinStore()
        firm(store, "a", name="Acme", ticker="ACM")
        firm(store, "b", name="Acme", ticker="ACM")
        store.add_relation(Relation("a", "b", "subsidiary"))
        merge_entities(store)
        assert store.relations == []

    def test_coordinates_round_to_five_decimals(self):
        store = HinStore()
        firm(store, "a", name="Acme", latitude="35.000001", longitude="139.0")
        firm(store, "b", name="Acme", latitude="35.000004", longitude="139.000000")
        assert merge_entities(store) == {"b": "a"}

    def test_attribute_conflict_keeps_lexicographic_first(self):
        store = HinStore()
        firm(store, "a", name="Acme", ticker="ACM", country="US")
        firm(store, "b", name="Acme", ticker="ACM", country="JP")
        merge_entities(store)
        assert store.entities["a"].attributes["country"] == "JP"

    @given(st.lists(st.tuples(st.sampled_from(["Acme", "Acme Co", "Beta", "Gamma Ltd"]),
                              st.sampled_from(["t1", "t2", None]),
                              st.sampled_from(["h1", "h2", None])), min_size=1, max_size=8))
    def test_no_residual_matches(self, ents):
        store = HinStore()
        for k, (name, ticker, home) in enumerate(ents):
            attrs = {"name": name}
            if ticker:
                attrs["ticker"] = ticker
            if home:
                attrs["homepage"] = home
            firm(store, f"e{k}", **attrs)
        rules = MatchRules(threshold=0.8)
        merge_entities(store, rules)
        ids = sorted(store.entities)
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                ea, eb = store.entities[a], store.entities[b]
                shares = any(ea.attributes.get(k) and ea.attributes.get(k) == eb.attributes.get(k)
                             for k in ("ticker", "homepage"))
                assert not (shares and name_similarity(ea.name, eb.name) >= rules.threshold)


class TestFilterAndCollapse:
    def make(self, counts):
        store = HinStore()
        for rel, n in counts.items():
            for k in range(n):
                store.add_relation(Relation(f"s{k}", f"d{k}", rel))
        return store

    def test_identity(self):
        store = self.make({"a": 3, "b": 1})
        assert filter_relations(store, 0).relations == store.relations

    def test_min_count(self):
        store = self.make({"supplier": 99, "customer": 100})
        out = filter_relations(store, 100)
        assert set(out.catalog()) == {"customer"}

    def test_blacklist(self):
        store = self.make({"wikiPageWikiLink": 5, "customer": 5})
        out = filter_relations(store, 0, {"wikiPageWikiLink"})
        assert out.catalog()["wikiPageWikiLink"] == 0 and out.catalog()["customer"] == 5

    @given(st.dictionaries(st.sampled_from(["a", "b", "c"]), st.integers(0, 6)), st.integers(0, 5))
    def test_filter_idempotent(self, counts, k):
        store = self.make(counts)
        once = filter_relations(store, k)
        assert filter_relations(once, k).relations == once.relations

    def test_quarterly_ownership(self):
        store = HinStore()
        for q, share in zip(["2016-03-31", "2016-06-30", "2016-09-30", "2016-12-31"],
                            [0.03, 0.06, 0.07, 0.06]):
            d = date.fromisoformat(q)
            store.add_relation(Relation("p", "f", "own_stock", d, d, share))
        out = collapse_temporal_edges(store, 0.05)
        assert out.relations == [Relation("p", "f", "own_stock", date(2016, 6, 30),
                                          date(2016, 12, 31), 0.07)]

    def test_span_recorded(self):
        store = HinStore()
        for d in (date(2016, 6, 1), date(2015, 1, 1)):
            store.add_relation(Relation("a", "b", "send_goods", d, d))
        (r,) = collapse_temporal_edges(store).relations
        assert (r.first, r.last) == (date(2015, 1, 1), date(2016, 6, 1))

    def test_single_relation_unchanged(self):
        store = HinStore()
        store.add_relation(Relation("a", "b", "supplier"))
        assert collapse_temporal_edges(store).relations == store.relations

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            collapse_temporal_edges(HinStore(), 1.5)

    @given(st.lists(st.tuples(st.sampled_from("abc"), st.sampled_from("xy"), st.integers(0, 3)),
                    max_size=20))
    def test_collapse_unique_triples(self, recs):
        store = HinStore()
        for s, rel, day in recs:
            d = date(2015, 1, 1 + day) if day else None
            store.add_relation(Relation(s, "z", rel, d, d))
        out = collapse_temporal_edges(store)
        triples = [r.triple for r in out.relations]
        assert len(triples) == len(set(triples)) == len({(s, "z", r) for s, r, _ in recs})


class TestPersistence:
    def test_round_trip(self, tmp_path):
        store = HinStore()
        firm(store, "a", name="Acme")
        store.add_relation(Relation("a", "b", "own_stock", date(2015, 1, 1), date(2016, 1, 1), 0.5))
        store.add_relation(Relation("b", "c", "supplier"))
        save_store(store, str(tmp_path / "s"))
        back = load_store(str(tmp_path / "s"))
        assert sorted(back.relations, key=lambda r: r.triple) == sorted(store.relations, key=lambda r: r.triple)
        assert back.entities["a"].kind == "firm" and back.entities["a"].name == "Acme"

    def test_prepare_accounts_drops(self):
        store = HinStore()
        report = ingest_edges(store, ["a\tx\tb\t2015-01-01\t-\n", "a\tx\tb\t2016-01-01\t-\n",
                                      "a\trare\tc\t-\t-\n"])
        out = prepare_store(store, report, min_count=2)
        assert report.dropped_relations == {"filtered_type": 1, "collapsed_or_low_ownership": 1}
        assert len(out.relations) == report.relations == 1
        assert isinstance(report, IngestReport)
