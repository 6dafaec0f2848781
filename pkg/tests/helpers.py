"""Graph builders and independent oracles shared by the test modules."""

import warnings
from itertools import product

import networkx as nx
import numpy as np
from scipy import sparse
from scipy.integrate import IntegrationWarning, quad
from scipy.sparse.linalg import spsolve

from hinlp.core_network import CoreGraph
from hinlp.hin_store import HinStore, Relation
from hinlp.interpret import FactorModel
from hinlp.propagation import EdgeWeightModel, loss_and_grad


def random_core(rng, n, extra_edges=None, rel_types=("r0", "r1", "r2")) -> CoreGraph:
    """Connected random graph: a random spanning tree plus extra random edges."""
    nodes = [f"n{k:03d}" for k in range(n)]
    pairs = set()
    order = rng.permutation(n)
    for k in range(1, n):
        a, b = int(order[k]), int(order[rng.integers(0, k)])
        pairs.add((min(a, b), max(a, b)))
    extra = n if extra_edges is None else extra_edges
    for _ in range(extra):
        a, b = rng.integers(0, n, 2)
        if a != b:
            pairs.add((int(min(a, b)), int(max(a, b))))
    edges = sorted(pairs)
    rels = [frozenset(rng.choice(rel_types, rng.integers(1, len(rel_types) + 1), replace=False).tolist())
            for _ in edges]
    return CoreGraph(nodes=nodes, edges=edges, edge_relations=rels)


def core_from_edges(n, edges) -> CoreGraph:
    nodes = [f"n{k:03d}" for k in range(n)]
    edges = sorted((min(a, b), max(a, b)) for a, b in edges)
    return CoreGraph(nodes=nodes, edges=edges, edge_relations=[frozenset({"r"})] * len(edges))


def store_from_triples(triples, kinds=None) -> HinStore:
    store = HinStore()
    for src, rel, dst in triples:
        store.add_relation(Relation(src, dst, rel))
    for node, kind in (kinds or {}).items():
        store.entity(node).kind = kind
    return store


def textbook_lp(core, labeled, y):
    """Label propagation as the minimiser of sum_labeled (f_i - y_i)^2 + f' L f."""
    G = nx.Graph()
    G.add_nodes_from(range(core.n_nodes))
    G.add_edges_from(core.edges)
    L = nx.laplacian_matrix(G, nodelist=range(core.n_nodes)).astype(float)
    M = sparse.diags(labeled.astype(float)) + L
    return spsolve(M.tocsc(), labeled * y)


def finite_difference(model, X, core, src, tgt, config, h=1e-5):
    theta = model.get_flat()
    out = np.zeros_like(theta)
    for k in range(theta.size):
        vals = []
        for sign in (1, -1):
            t = theta.copy()
            t[k] += sign * h
            model.set_flat(t)
            vals.append(loss_and_grad(model, X, core, src, tgt, config)[0])
        out[k] = (vals[0] - vals[1]) / (2 * h)
    model.set_flat(theta)
    return out


def flat_grad(model, grads):
    return np.concatenate([grads[k].ravel() for k in model.PARAMS])


def random_instance(seed, n=10, d=5):
    rng = np.random.default_rng(seed)
    core = random_core(rng, n, extra_edges=n)
    X = (rng.random((core.n_edges, d)) < 0.4).astype(float)
    perm = rng.permutation(n)
    src = np.zeros(n, bool)
    tgt = np.zeros(n, bool)
    src[perm[:2]] = True
    tgt[perm[2:4]] = True
    model = EdgeWeightModel(d, hidden_dim=6, seed=seed)
    # larger weights than the default init so the gradient has some curvature to check
    model.set_flat(model.get_flat() * 6)
    return model, X, core, src, tgt


def pairwise_roc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def enumerated_pr(scores, labels):
    """Every distinct score as a threshold; precision interpolated between points and integrated numerically."""
    scores, labels = np.asarray(scores), np.asarray(labels, bool)
    n_pos = labels.sum()
    pts = [(0, 0)]
    for t in sorted(set(scores.tolist()), reverse=True):
        sel = scores >= t
        pts.append((int(np.sum(sel & labels)), int(np.sum(sel & ~labels))))
    area = 0.0
    for (tp0, fp0), (tp1, fp1) in zip(pts, pts[1:]):
        dtp, dfp = tp1 - tp0, fp1 - fp0
        if dtp == 0:
            continue
        prec = lambda s: (tp0 + s * dtp) / (tp0 + fp0 + s * (dtp + dfp))
        with warnings.catch_warnings():
            # quad flags roundoff once it is already at machine precision
            warnings.simplefilter("ignore", IntegrationWarning)
            val, _ = quad(prec, 0.0, 1.0, epsabs=1e-15, epsrel=1e-14)
        area += val * dtp / n_pos
    return area


def brute_ks(a, b):
    best = 0.0
    for x in list(a) + list(b):
        fa = sum(v <= x for v in a) / len(a)
        fb = sum(v <= x for v in b) / len(b)
        best = max(best, abs(fa - fb))
    return best


def brute_paths(store, i, j, max_len):
    """All simple paths by DFS, then dominance pruning applied length by length."""
    adj = store.adjacency()
    found = {L: [] for L in range(1, max_len + 1)}

    def dfs(path):
        u = path[-1]
        if u == j:
            found[len(path) - 1].append(tuple(path))
            return
        if len(path) - 1 == max_len:
            return
        for v in adj.get(u, {}):
            if v not in path:
                dfs(path + [v])

    dfs([i])
    kept, seen = [], set()
    for L in range(1, max_len + 1):
        layer = [p for p in found[L] if not set(p[1:-1]) & seen]
        kept.extend(layer)
        for p in layer:
            seen.update(p[1:-1])
    out = set()
    for nodes in kept:
        for rels in product(*[adj[a][b] for a, b in zip(nodes, nodes[1:])]):
            out.add((nodes, rels))
    return out


def monotone_model(j, sign, d):
    """Edge weight increasing (sign=+1) or decreasing (sign=-1) in feature ``j`` only."""
    m = EdgeWeightModel.zeros(d, hidden_dim=1)
    m.params["W1"][j, 0] = 4.0 * sign
    m.params["w2"][0] = 4.0
    m.params["b2"] = np.array(-2.0)
    return m


def planted_factors(seed, d=8, rank=3, n=200):
    """Basis 0 concentrated on feature 0; coefficients vary across rows."""
    rng = np.random.default_rng(seed)
    V = rng.uniform(0, 0.05, (d, rank))
    V[0, 0] = 3.0
    V[1:, 0] = 0.0
    U = rng.uniform(0, 1, (n, rank))
    return FactorModel(V, U, bias=-1.0)
