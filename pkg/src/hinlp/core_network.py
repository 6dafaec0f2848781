"""Undirected core network over the prediction universe."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy import sparse

from .hin_store import HinStore

logger = logging.getLogger(__name__)


@dataclass
class CoreGraph:
    """Simple undirected graph ``G = (V, E, W)``.

    ``nodes`` is sorted by id; ``edges`` holds index pairs ``(i, j)`` with
    ``i < j`` in lexicographic order, which is the canonical row order used by
    every feature matrix.
    """

    nodes: list[str]
    edges: list[tuple[int, int]]
    edge_relations: list[frozenset[str]]
    weights: np.ndarray = None
    isolated: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.index = {n: i for i, n in enumerate(self.nodes)}
        if self.weights is None:
            self.weights = np.ones(len(self.edges))
        self._nbrs = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_array(self) -> np.ndarray:
        return np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)

    def edge_keys(self) -> list[tuple[str, str]]:
        return [(self.nodes[i], self.nodes[j]) for i, j in self.edges]

    def degrees(self) -> np.ndarray:
        """Edge counts per node, ``D_ii = sum_j 1[ij in E]``."""
        e = self.edge_array()
        return np.bincount(e.ravel(), minlength=self.n_nodes).astype(float)

    def neighbors(self, node: str) -> set[str]:
        if node not in self.index:
            raise KeyError(f"unknown node {node!r}")
        if self._nbrs is None:
            nbrs: list[set[int]] = [set() for _ in self.nodes]
            for i, j in self.edges:
                nbrs[i].add(j)
                nbrs[j].add(i)
            self._nbrs = nbrs
        return {self.nodes[k] for k in self._nbrs[self.index[node]]}

    def adjacency(self, weights=None) -> sparse.csr_matrix:
        """Symmetric sparse weight matrix; unit weights when ``weights`` is None."""
        w = np.ones(self.n_edges) if weights is None else np.asarray(weights, dtype=float)
        e = self.edge_array()
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sparse.csr_matrix((np.concatenate([w, w]), (rows, cols)),
                                 shape=(self.n_nodes, self.n_nodes))


def build_core(store: HinStore, universe: Iterable[str]) -> CoreGraph:
    universe = set(universe)
    if not universe:
        raise ValueError("empty universe")
    missing = universe - store.entities.keys()
    if missing:
        logger.warning("%d universe members are not in the store", len(missing))
    pair_rels: dict[tuple[str, str], set[str]] = {}
    for r in store.relations:
        if r.src == r.dst or r.src not in universe or r.dst not in universe:
            continue
        key = (r.src, r.dst) if r.src < r.dst else (r.dst, r.src)
        pair_rels.setdefault(key, set()).add(r.rel_type)
    connected = {n for pair in pair_rels for n in pair}
    nodes = sorted(connected)
    index = {n: i for i, n in enumerate(nodes)}
    keys = sorted(pair_rels)
    graph = CoreGraph(
        nodes=nodes,
        edges=[(index[a], index[b]) for a, b in keys],
        edge_relations=[frozenset(pair_rels[k]) for k in keys],
        isolated=sorted(universe - connected),
    )
    if graph.isolated:
        logger.info("core network excludes %d isolated universe members", len(graph.isolated))
    return graph


def save_core(graph: CoreGraph, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("src\tdst\tweight\trelations\n")
        for (a, b), rels, w in zip(graph.edge_keys(), graph.edge_relations, graph.weights):
            fh.write(f"{a}\t{b}\t{float(w)!r}\t{json.dumps(sorted(rels))}\n")


def load_core(path: str) -> CoreGraph:
    rows = []
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            a, b, w, rels = line.rstrip("\n").split("\t")
            rows.append((a, b, float(w), frozenset(json.loads(rels))))
    nodes = sorted({r[0] for r in rows} | {r[1] for r in rows})
    index = {n: i for i, n in enumerate(nodes)}
    rows.sort(key=lambda r: (r[0], r[1]))
    return CoreGraph(nodes=nodes,
                     edges=[(index[a], index[b]) for a, b, _, _ in rows],
                     edge_relations=[r[3] for r in rows],
                     weights=np.array([r[2] for r in rows], dtype=float))
