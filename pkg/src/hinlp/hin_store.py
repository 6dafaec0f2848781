"""Heterogeneous information network store: ingestion, entity resolution and cleaning.

Edge files are tab separated, one relation per line::

    src_key <TAB> rel_type <TAB> dst_key <TAB> YYYY-MM-DD|- <TAB> weight|-

Node attribute files carry ``node_key <TAB> attr_name <TAB> value``.  The
attribute ``kind`` sets the node type tag.
"""

from __future__ import annotations

import logging
import os
import re
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from datetime import date
from typing import Iterable, Iterator

logger = logging.getLogger(__name__)

NODE_KINDS = ("firm", "person", "stock", "location", "goods", "page", "other")
EXACT_KEYS = ("homepage", "coordinates", "ticker")
OWNERSHIP_TYPES = frozenset({"own_stock"})
UNDATED = "-"


class IngestError(Exception):
    """A source could not be read at all."""


@dataclass
class Entity:
    id: str
    kind: str = "other"
    attributes: dict[str, str] = field(default_factory=dict)

    @property
    def name(self) -> str | None:
        return self.attributes.get("name")


@dataclass(frozen=True)
class Relation:
    """A typed relation.  ``first``/``last`` are both None for undated relations."""

    src: str
    dst: str
    rel_type: str
    first: date | None = None
    last: date | None = None
    weight: float | None = None

    @property
    def dated(self) -> bool:
        return self.first is not None

    @property
    def triple(self) -> tuple[str, str, str]:
        return (self.src, self.dst, self.rel_type)


@dataclass(frozen=True)
class RecordError:
    source: str
    line: int
    message: str


@dataclass
class IngestReport:
    sources_loaded: int = 0
    entities: int = 0
    relations: int = 0
    merged_entities: int = 0
    dropped_relations: dict[str, int] = field(default_factory=dict)
    errors: list[RecordError] = field(default_factory=list)

    def drop(self, reason: str, count: int = 1) -> None:
        if count:
            self.dropped_relations[reason] = self.dropped_relations.get(reason, 0) + count


@dataclass(frozen=True)
class MatchRules:
    threshold: float = 0.9
    homepage: bool = True
    coordinates: bool = True
    ticker: bool = True

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"name-similarity threshold must lie in [0, 1], got {self.threshold}")

    @property
    def active_keys(self) -> tuple[str, ...]:
        return tuple(k for k in EXACT_KEYS if getattr(self, k))


class HinStore:
    """Typed multigraph of entities and relations.

    Mutated only while ingesting and merging; ``filter_relations`` and
    ``collapse_temporal_edges`` return new stores.
    """

    def __init__(self):
        self.entities: dict[str, Entity] = {}
        self.relations: list[Relation] = []
        self.merge_conflicts: list[tuple[str, str]] = []
        self._adjacency = None

    def __len__(self):
        return len(self.entities)

    def __contains__(self, node_id):
        return node_id in self.entities

    def entity(self, node_id: str, kind: str | None = None) -> Entity:
        ent = self.entities.get(node_id)
        if ent is None:
            ent = Entity(node_id, kind or "other")
            self.entities[node_id] = ent
        elif kind and ent.kind == "other":
            ent.kind = kind
        return ent

    def add_relation(self, rel: Relation) -> None:
        self.entity(rel.src)
        self.entity(rel.dst)
        self.relations.append(rel)
        self._adjacency = None

    def catalog(self) -> Counter:
        """Relation-type counts (the relation-type catalog)."""
        return Counter(r.rel_type for r in self.relations)

    def copy_with(self, relations: list[Relation]) -> "HinStore":
        out = HinStore()
        out.entities = {k: replace(v, attributes=dict(v.attributes)) for k, v in self.entities.items()}
        out.relations = list(relations)
        return out

    def adjacency(self) -> dict[str, dict[str, tuple[str, ...]]]:
        """Undirected adjacency: node -> neighbour -> sorted relation types (self-loops skipped)."""
        if self._adjacency is None:
            adj: dict[str, dict[str, set]] = defaultdict(lambda: defaultdict(set))
            for r in self.relations:
                if r.src == r.dst:
                    continue
                adj[r.src][r.dst].add(r.rel_type)
                adj[r.dst][r.src].add(r.rel_type)
            self._adjacency = {
                u: {v: tuple(sorted(rs)) for v, rs in nbrs.items()} for u, nbrs in adj.items()
            }
        return self._adjacency


# --------------------------------------------------------------------------
# parsing and ingestion


def _parse_date(text: str) -> date | None:
    text = text.strip()
    if text == UNDATED or text == "":
        return None
    return date.fromisoformat(text)


def _parse_weight(text: str) -> float | None:
    text = text.strip()
    if text == UNDATED or text == "":
        return None
    w = float(text)
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"weight {w} outside [0, 1]")
    return w


def parse_edge_line(line: str) -> Relation:
    parts = line.rstrip("\r\n").split("\t")
    if len(parts) != 5:
        raise ValueError(f"expected 5 tab-separated fields, got {len(parts)}")
    src, rel_type, dst, when, weight = (p.strip() for p in parts)
    if not src or not dst or not rel_type:
        raise ValueError("empty src, dst or rel_type")
    d = _parse_date(when)
    return Relation(src, dst, rel_type, d, d, _parse_weight(weight))


def ingest_edges(store: HinStore, lines: Iterable[str], source: str = "<stream>",
                 report: IngestReport | None = None) -> IngestReport:
    """Load edge-list lines into ``store``; malformed lines are recorded, not fatal."""
    report = report or IngestReport()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            rel = parse_edge_line(line)
        except ValueError as exc:
            report.errors.append(RecordError(source, lineno, str(exc)))
            continue
        if rel.src == rel.dst:
            report.drop("self_loop")
            continue
        store.add_relation(rel)
    report.sources_loaded += 1
    report.entities = len(store.entities)
    report.relations = len(store.relations)
    return report


def _check_attribute(name: str, value: str) -> None:
    if name == "latitude" and not -90.0 <= float(value) <= 90.0:
        raise ValueError(f"latitude {value} outside [-90, 90]")
    if name == "longitude" and not -180.0 <= float(value) <= 180.0:
        raise ValueError(f"longitude {value} outside [-180, 180]")
    if name == "kind" and value not in NODE_KINDS:
        raise ValueError(f"unknown node kind {value!r}")


def ingest_nodes(store: HinStore, lines: Iterable[str], source: str = "<stream>",
                 report: IngestReport | None = None) -> IngestReport:
    report = report or IngestReport()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.rstrip("\r\n").split("\t")
        try:
            if len(parts) != 3 or not parts[0].strip() or not parts[1].strip():
                raise ValueError(f"expected 3 tab-separated fields, got {len(parts)}")
            key, name, value = (p.strip() for p in parts)
            _check_attribute(name, value)
        except ValueError as exc:
            report.errors.append(RecordError(source, lineno, str(exc)))
            continue
        ent = store.entity(key)
        if name == "kind":
            ent.kind = value
        else:
            ent.attributes[name] = value
    report.sources_loaded += 1
    report.entities = len(store.entities)
    report.relations = len(store.relations)
    return report


def _read_lines(path: str) -> Iterator[str]:
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read source {path}: {exc.strerror}") from exc
    with fh:
        yield from fh


def ingest_files(store: HinStore, edge_paths: Iterable[str] = (), node_paths: Iterable[str] = (),
                 report: IngestReport | None = None) -> IngestReport:
    report = report or IngestReport()
    for path in edge_paths:
        ingest_edges(store, list(_read_lines(path)), source=str(path), report=report)
    for path in node_paths:
        ingest_nodes(store, list(_read_lines(path)), source=str(path), report=report)
    return report


# --------------------------------------------------------------------------
# entity resolution


_PUNCT = re.compile(r"[^\w\s]", re.UNICODE)
_SPACE = re.compile(r"\s+")


def normalize_name(name: str) -> str:
    name = unicodedata.normalize("NFKC", name).casefold()
    name = _PUNCT.sub("", name)
    return _SPACE.sub(" ", name).strip()


def lcs_length(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0]
        for j, cb in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if ca == cb else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def name_similarity(a: str | None, b: str | None) -> float:
    """Normalized LCS ratio ``2*LCS / (|a| + |b|)`` on case-folded, punctuation-free names.

    A missing name scores 0, so such entities merge only when the threshold is 0.
    """
    if not a or not b:
        return 0.0
    a, b = normalize_name(a), normalize_name(b)
    if not a and not b:
        return 1.0
    return 2.0 * lcs_length(a, b) / (len(a) + len(b))


def _key_value(ent: Entity, key: str) -> str | None:
    attrs = ent.attributes
    if key == "coordinates":
        lat, lon = attrs.get("latitude"), attrs.get("longitude")
        if lat is None or lon is None:
            return None
        try:
            return f"{round(float(lat), 5):.5f},{round(float(lon), 5):.5f}"
        except ValueError:
            return None
    value = attrs.get(key)
    if value is None or not value.strip():
        return None
    return value.strip().casefold()


class _UnionFind:
    def __init__(self):
        self.parent: dict[str, str] = {}

    def find(self, x: str) -> str:
        root = x
        while self.parent.get(root, root) != root:
            root = self.parent[root]
        while x != root:
            self.parent[x], x = root, self.parent.get(x, x)
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            lo, hi = sorted((ra, rb))
            self.parent[hi] = lo


def _match_pairs(store: HinStore, rules: MatchRules, conflicts: list) -> list[tuple[str, str]]:
    blocks: dict[tuple[str, str], list[str]] = defaultdict(list)
    for ent in store.entities.values():
        for key in rules.active_keys:
            value = _key_value(ent, key)
            if value is not None:
                blocks[(key, value)].append(ent.id)
    pairs = set()
    for members in blocks.values():
        members = sorted(members)
        for i, a in enumerate(members):
            for b in members[i + 1:]:
                pairs.add((a, b))
    accepted = []
    for a, b in sorted(pairs):
        ea, eb = store.entities[a], store.entities[b]
        if name_similarity(ea.name, eb.name) < rules.threshold:
            continue
        if ea.kind != eb.kind:
            logger.warning("merge rejected: %s (%s) vs %s (%s) have conflicting kinds",
                           a, ea.kind, b, eb.kind)
            conflicts.append((a, b))
            continue
        accepted.append((a, b))
    return accepted


def merge_entities(store: HinStore, rules: MatchRules = MatchRules()) -> dict[str, str]:
    """Merge duplicate entities in place and return the old-id -> canonical-id map.

    Two entities match iff their names are similar enough AND at least one
    active exact key agrees.  Matches are closed transitively and the
    canonical id is the smallest member id.  Merging repeats until no new
    match appears, since merged attributes can create fresh matches.
    """
    resolution: dict[str, str] = {}
    conflicts: list[tuple[str, str]] = []
    while True:
        pairs = _match_pairs(store, rules, conflicts)
        if not pairs:
            break
        uf = _UnionFind()
        for a, b in pairs:
            uf.union(a, b)
        groups: dict[str, list[str]] = defaultdict(list)
        for node in {n for p in pairs for n in p}:
            groups[uf.find(node)].append(node)
        for canon, members in groups.items():
            merged_attrs: dict[str, str] = {}
            for member in members:
                for k, v in store.entities[member].attributes.items():
                    if v and (k not in merged_attrs or v < merged_attrs[k]):
                        merged_attrs[k] = v
            store.entities[canon].attributes = merged_attrs
            for member in members:
                if member != canon:
                    del store.entities[member]
                    resolution[member] = canon
        # re-point earlier resolutions at the newest canonical ids
        for old, new in resolution.items():
            while new in resolution and resolution[new] != new:
                new = resolution[new]
            resolution[old] = new
    if resolution:
        relations = []
        for r in store.relations:
            src, dst = resolution.get(r.src, r.src), resolution.get(r.dst, r.dst)
            if src == dst:
                continue
            relations.append(replace(r, src=src, dst=dst))
        store.relations = relations
        store._adjacency = None
    store.merge_conflicts = conflicts
    return resolution


# --------------------------------------------------------------------------
# cleaning


def filter_relations(store: HinStore, min_count: int = 100, blacklist: Iterable[str] = ()) -> HinStore:
    """Drop blacklisted relation types and types occurring fewer than ``min_count`` times."""
    if min_count < 0:
        raise ValueError("min_count must be non-negative")
    blacklist = set(blacklist)
    counts = store.catalog()
    keep = {t for t, c in counts.items() if c >= min_count and t not in blacklist}
    return store.copy_with([r for r in store.relations if r.rel_type in keep])


def _span_min(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return min(a, b)


def _span_max(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return max(a, b)


def collapse_temporal_edges(store: HinStore, ownership_threshold: float = 0.05,
                            ownership_types: Iterable[str] = OWNERSHIP_TYPES) -> HinStore:
    """Collapse repeated (src, dst, rel_type) relations to one spanning relation.

    Ownership relations below ``ownership_threshold`` are dropped first.  The
    collapsed relation keeps the earliest and latest dates and the largest
    weight seen.
    """
    if not 0.0 <= ownership_threshold <= 1.0:
        raise ValueError("ownership_threshold must lie in [0, 1]")
    ownership_types = set(ownership_types)
    merged: dict[tuple[str, str, str], Relation] = {}
    for r in store.relations:
        if (r.rel_type in ownership_types and r.weight is not None
                and r.weight < ownership_threshold):
            continue
        prev = merged.get(r.triple)
        if prev is None:
            merged[r.triple] = r
            continue
        weight = prev.weight if r.weight is None else (
            r.weight if prev.weight is None else max(prev.weight, r.weight))
        merged[r.triple] = Relation(r.src, r.dst, r.rel_type,
                                    _span_min(prev.first, r.first),
                                    _span_max(prev.last, r.last), weight)
    return store.copy_with(list(merged.values()))


def prepare_store(store: HinStore, report: IngestReport, rules: MatchRules = MatchRules(),
                  min_count: int = 100, blacklist: Iterable[str] = (),
                  ownership_threshold: float = 0.05) -> HinStore:
    """Run merge -> filter -> collapse, accounting every dropped relation in ``report``."""
    n0 = len(store.relations)
    resolution = merge_entities(store, rules)
    report.merged_entities += len(resolution)
    report.drop("merge_self_loop", n0 - len(store.relations))

    n1 = len(store.relations)
    store = filter_relations(store, min_count, blacklist)
    report.drop("filtered_type", n1 - len(store.relations))

    n2 = len(store.relations)
    store = collapse_temporal_edges(store, ownership_threshold)
    report.drop("collapsed_or_low_ownership", n2 - len(store.relations))

    report.entities = len(store.entities)
    report.relations = len(store.relations)
    return store


# --------------------------------------------------------------------------
# persistence


def _fmt_date(d: date | None) -> str:
    return UNDATED if d is None else d.isoformat()


def save_store(store: HinStore, path: str) -> None:
    """Write ``nodes.tsv`` and ``edges.tsv`` (with first/last date columns) under ``path``."""
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "nodes.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("node_key\tattr_name\tvalue\n")
        for node_id in sorted(store.entities):
            ent = store.entities[node_id]
            fh.write(f"{node_id}\tkind\t{ent.kind}\n")
            for k in sorted(ent.attributes):
                fh.write(f"{node_id}\t{k}\t{ent.attributes[k]}\n")
    rels = sorted(store.relations, key=lambda r: (r.src, r.dst, r.rel_type,
                                                  _fmt_date(r.first), _fmt_date(r.last)))
    with open(os.path.join(path, "edges.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("src\trel_type\tdst\tfirst\tlast\tweight\n")
        for r in rels:
            w = UNDATED if r.weight is None else repr(r.weight)
            fh.write(f"{r.src}\t{r.rel_type}\t{r.dst}\t{_fmt_date(r.first)}\t{_fmt_date(r.last)}\t{w}\n")


def load_store(path: str) -> HinStore:
    store = HinStore()
    with open(os.path.join(path, "nodes.tsv"), encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            key, name, value = line.rstrip("\n").split("\t")
            ent = store.entity(key)
            if name == "kind":
                ent.kind = value
            else:
                ent.attributes[name] = value
    with open(os.path.join(path, "edges.tsv"), encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            src, rel_type, dst, first, last, w = line.rstrip("\n").split("\t")
            store.add_relation(Relation(src, dst, rel_type, _parse_date(first), _parse_date(last),
                                        None if w == UNDATED else float(w)))
    return store
