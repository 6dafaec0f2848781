"""Binary edge features for the core network.

Three schemes are supported:

``relation``
    one column per relation type directly linking the edge's endpoints.
``path``
    one column per relation-type signature of a path (length <= 4) through
    the full heterogeneous store, restricted to the most frequent signatures.
``segment``
    one column per ``(relation type, path segment)`` pair, a collapsed form of
    ``path`` that keeps where along a path each relation type occurs.

Paths are undirected and simple.  A path is discarded when one of its
intermediate nodes is already an intermediate node of a retained shorter path
between the same endpoints; lengths are processed in ascending order.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from itertools import product
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .core_network import CoreGraph
from .hin_store import HinStore

SCHEMES = ("relation", "path", "segment")
SEGMENTS = ("1", "2", "3:1", "3:2", "4:1", "4:2")
MAX_PATH_LEN = 4
DEFAULT_EXPANSION_CAP = 10_000

Signature = tuple[str, ...]


def segment_of(position: int, length: int) -> str:
    """Symmetry-reduced segment id of the ``position``-th edge (1-based) of a path."""
    if length > MAX_PATH_LEN:
        raise ValueError(f"paths longer than {MAX_PATH_LEN} have no segment id")
    if not 1 <= position <= length:
        raise ValueError(f"position {position} outside path of length {length}")
    if length <= 2:
        return str(length)
    return f"{length}:{1 if position in (1, length) else 2}"


def canonical_signature(rels: Sequence[str]) -> Signature:
    rels = tuple(rels)
    rev = rels[::-1]
    return min(rels, rev)


@dataclass(frozen=True)
class Path:
    nodes: tuple[str, ...]
    relations: tuple[str, ...]

    def __len__(self):
        return len(self.relations)

    @property
    def intermediates(self) -> tuple[str, ...]:
        return self.nodes[1:-1]

    @property
    def signature(self) -> Signature:
        return canonical_signature(self.relations)


def _expansion_ok(adj, cap):
    if cap is None or math.isinf(cap):
        return lambda node: True
    heavy = {u for u, nbrs in adj.items() if sum(len(rs) for rs in nbrs.values()) > cap}
    return lambda node: node not in heavy


def _node_paths(adj, i, j, max_len, ok):
    """Node sequences of retained simple paths between ``i`` and ``j`` by ascending length."""
    ni, nj = adj.get(i, {}), adj.get(j, {})
    out = []
    if j in ni:
        out.append((i, j))
    if max_len < 2:
        return out
    ends = {i, j}
    mids = sorted(c for c in ni if c in nj and c not in ends and ok(c))
    out.extend((i, c, j) for c in mids)
    blocked = set(mids)
    if max_len < 3:
        return out

    len3 = []
    for a in sorted(ni):
        if a in ends or a in blocked or not ok(a):
            continue
        for b in sorted(adj[a]):
            if b in nj and b not in ends and b != a and b not in blocked and ok(b):
                len3.append((i, a, b, j))
    out.extend(len3)
    for p in len3:
        blocked.update(p[1:3])
    if max_len < 4:
        return out

    for a in sorted(ni):
        if a in ends or a in blocked or not ok(a):
            continue
        for m in sorted(adj[a]):
            if m in ends or m == a or m in blocked or not ok(m):
                continue
            nm = adj[m]
            small, big = (nm, nj) if len(nm) <= len(nj) else (nj, nm)
            for b in sorted(x for x in small if x in big):
                if b not in ends and b != a and b != m and b not in blocked and ok(b):
                    out.append((i, a, m, b, j))
    return out


def enumerate_paths(store: HinStore, pair: tuple[str, str], max_len: int = MAX_PATH_LEN,
                    expansion_cap: float | None = DEFAULT_EXPANSION_CAP) -> list[Path]:
    """Retained simple paths between ``pair``, one per choice of relation type on each hop.

    Nodes incident to more than ``expansion_cap`` relations are never used as
    intermediates.
    """
    i, j = pair
    if i == j:
        raise ValueError("path endpoints must differ")
    for node in pair:
        if node not in store.entities:
            raise KeyError(f"unknown endpoint {node!r}")
    if not 1 <= max_len <= MAX_PATH_LEN:
        raise ValueError(f"max_len must be in [1, {MAX_PATH_LEN}]")
    adj = store.adjacency()
    ok = _expansion_ok(adj, expansion_cap)
    paths = []
    for nodes in _node_paths(adj, i, j, max_len, ok):
        hops = [adj[a][b] for a, b in zip(nodes, nodes[1:])]
        for rels in product(*hops):
            paths.append(Path(nodes, rels))
    return paths


def edge_signatures(store: HinStore, core: CoreGraph, max_len: int = MAX_PATH_LEN,
                    expansion_cap: float | None = DEFAULT_EXPANSION_CAP) -> list[set[Signature]]:
    """Set of canonical path signatures for each core edge, in core edge order."""
    adj = store.adjacency()
    ok = _expansion_ok(adj, expansion_cap)
    out = []
    for a, b in core.edge_keys():
        sigs: set[Signature] = set()
        for nodes in _node_paths(adj, a, b, max_len, ok):
            hops = [adj[u][v] for u, v in zip(nodes, nodes[1:])]
            for rels in product(*hops):
                sigs.add(canonical_signature(rels))
        out.append(sigs)
    return out


def select_top_paths(edge_sigs: Iterable[set[Signature]], k: int = 3000) -> list[Signature]:
    """The ``k`` signatures present on the most edges; ties go to the lexicographically smaller."""
    if k <= 0:
        raise ValueError("k must be positive")
    counts = Counter(s for sigs in edge_sigs for s in sigs)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [s for s, _ in ranked[:k]]


@dataclass
class FeatureMatrix:
    """Binary edge-feature matrix; rows follow the core graph's edge order."""

    scheme: str
    catalog: list
    matrix: sparse.csr_matrix
    edge_keys: list[tuple[str, str]]

    @property
    def shape(self):
        return self.matrix.shape

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def check_aligned(self, core: CoreGraph) -> None:
        if self.edge_keys != core.edge_keys():
            raise ValueError("feature rows are not aligned with the core graph edges")


def _build(scheme, core, row_items, catalog=None) -> FeatureMatrix:
    if catalog is None:
        catalog = sorted({item for items in row_items for item in items})
    col = {c: k for k, c in enumerate(catalog)}
    rows, cols = [], []
    for r, items in enumerate(row_items):
        for c in sorted(col[item] for item in items if item in col):
            rows.append(r)
            cols.append(c)
    mat = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)),
                            shape=(core.n_edges, len(catalog)))
    return FeatureMatrix(scheme, list(catalog), mat, core.edge_keys())


def core_relation_features(core: CoreGraph) -> FeatureMatrix:
    return _build("relation", core, core.edge_relations)


def path_features(core: CoreGraph, vocab: Sequence[Signature],
                  edge_sigs: Sequence[set[Signature]]) -> FeatureMatrix:
    return _build("path", core, edge_sigs, catalog=list(vocab))


def segment_items(sigs: Iterable[Signature]) -> set[tuple[str, str]]:
    items = set()
    for sig in sigs:
        n = len(sig)
        for pos, rel in enumerate(sig, start=1):
            items.add((rel, segment_of(pos, n)))
    return items


def _segment_key(item):
    rel, seg = item
    return (SEGMENTS.index(seg), rel)


def path_segment_features(core: CoreGraph, edge_sigs: Sequence[set[Signature]]) -> FeatureMatrix:
    """Columns are ``(rel_type, segment)`` pairs seen at least once, grouped by segment."""
    row_items = [segment_items(sigs) for sigs in edge_sigs]
    catalog = sorted({it for items in row_items for it in items}, key=_segment_key)
    return _build("segment", core, row_items, catalog=catalog)


def extract(scheme: str, core: CoreGraph, store: HinStore | None = None, *,
            max_len: int = MAX_PATH_LEN, top_k: int = 3000,
            expansion_cap: float | None = DEFAULT_EXPANSION_CAP,
            edge_sigs: Sequence[set[Signature]] | None = None) -> FeatureMatrix:
    if scheme == "relation":
        return core_relation_features(core)
    if scheme not in SCHEMES:
        raise ValueError(f"unknown feature scheme {scheme!r}")
    if edge_sigs is None:
        if store is None:
            raise ValueError(f"scheme {scheme!r} needs the heterogeneous store")
        edge_sigs = edge_signatures(store, core, max_len, expansion_cap)
    if scheme == "path":
        return path_features(core, select_top_paths(edge_sigs, top_k), edge_sigs)
    return path_segment_features(core, edge_sigs)


# --------------------------------------------------------------------------
# persistence: catalog header, edge header, then sparse (row, col) pairs


def save_features(fm: FeatureMatrix, path: str) -> None:
    coo = fm.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#scheme\t{fm.scheme}\n")
        for k, desc in enumerate(fm.catalog):
            enc = json.dumps(list(desc) if isinstance(desc, tuple) else desc)
            fh.write(f"#feature\t{k}\t{enc}\n")
        for r, (a, b) in enumerate(fm.edge_keys):
            fh.write(f"#edge\t{r}\t{a}\t{b}\n")
        fh.write("row\tcol\n")
        for r, c in zip(coo.row[order], coo.col[order]):
            fh.write(f"{r}\t{c}\n")


def load_features(path: str) -> FeatureMatrix:
    scheme, catalog, edges, rows, cols = None, [], [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if parts[0] == "#scheme":
                scheme = parts[1]
            elif parts[0] == "#feature":
                desc = json.loads(parts[2])
                catalog.append(tuple(desc) if isinstance(desc, list) else desc)
            elif parts[0] == "#edge":
                edges.append((parts[2], parts[3]))
            elif parts[0] == "row":
                continue
            else:
                rows.append(int(parts[0]))
                cols.append(int(parts[1]))
    mat = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(edges), len(catalog)))
    return FeatureMatrix(scheme, catalog, mat, edges)
