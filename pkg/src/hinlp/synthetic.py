"""Planted heterogeneous networks with label diffusion along hidden conductive relations.

Firms fall into random communities.  Pairs inside a community mostly carry a
conductive firm-firm relation type and pairs across communities an inert one,
with ``relation_noise`` flipping the choice.  Firms also link to auxiliary
nodes (locations, industries, goods, pages), preferring a per-community home
node.  A few seed firms are hit by exogenous news at random rounds; after
that, every reported node passes the label to each unreported neighbour with
probability ``diffusion_prob`` per round and per relation, but only across
conductive relation types.  When a firm-aux type is conductive, auxiliary
nodes relay the label without reporting it.  Rounds are dated, so the temporal
split runs on real dates.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta

import numpy as np

from . import features as feat
from .core_network import build_core
from .evaluation import METHODS, EvalReport, evaluate_category
from .hin_store import HinStore, IngestReport, MatchRules, ingest_edges, ingest_nodes, prepare_store
from .label_store import CategoryList, NewsEvent, SplitSpec, build_lists, make_split
from .propagation import TrainConfig, predict, train

logger = logging.getLogger(__name__)

FIRM_RELATIONS = (
    "customer", "supplier", "strategic_alliance", "creditor", "borrower", "competitor",
    "distributor", "subsidiary", "parent-company", "associate", "landlord", "receive_goods",
    "send_goods", "international_shipping", "employer",
)
AUX_RELATIONS = (
    ("located_in", "location"), ("belongs_to_industry", "other"), ("part_of_industry", "other"),
    ("make_products", "goods"), ("domain", "page"),
)
CATEGORY = "Product/Service"


@dataclass
class PlantedConfig:
    n_firms: int = 2000
    n_aux_nodes: int = 500
    n_rel_types: int = 20
    n_aux_rel_types: int = 5
    n_conductive: int = 4
    n_conductive_aux: int = 0
    home_conductive_prob: float = 0.8
    firm_degree: float = 3.0
    n_communities: int = 100
    intra_fraction: float = 0.5
    relation_noise: float = 0.1
    extra_relation_prob: float = 0.2
    aux_per_firm: int = 2
    home_aux_prob: float = 0.5
    diffusion_prob: float = 0.15
    n_seeds: int = 60
    n_rounds: int = 24
    cutoff_round: int = 16
    round_days: int = 30
    start: str = "2012-01-02"
    delta_days: int = 31
    rng_seed: int = 0

    def __post_init__(self):
        n_firm_types = self.n_rel_types - self.n_aux_rel_types
        n_firm_conductive = self.n_conductive - self.n_conductive_aux
        if not (0 <= self.n_conductive_aux <= self.n_aux_rel_types and 1 <= self.n_conductive
                and 0 <= n_firm_conductive < n_firm_types):
            raise ValueError("conductive subset must be non-empty and a proper subset of relation types")
        probs = (self.diffusion_prob, self.extra_relation_prob, self.intra_fraction,
                 self.relation_noise, self.home_aux_prob, self.home_conductive_prob)
        if not all(0.0 <= p <= 1.0 for p in probs):
            raise ValueError("probabilities must lie in [0, 1]")
        if not 0 < self.cutoff_round < self.n_rounds - 1:
            raise ValueError("cutoff_round must leave rounds on both sides")
        if self.n_aux_rel_types < 1 or self.n_aux_nodes < 1:
            raise ValueError("need at least one auxiliary node and relation type")

    @property
    def start_date(self) -> date:
        return date.fromisoformat(self.start)

    def round_date(self, r: int) -> date:
        return self.start_date + timedelta(days=r * self.round_days)

    def split_spec(self) -> SplitSpec:
        return SplitSpec(self.round_date(self.cutoff_round), self.delta_days,
                         self.round_date(self.n_rounds - 1))

    def relation_names(self):
        n_firm = self.n_rel_types - self.n_aux_rel_types
        firm = list(FIRM_RELATIONS[:n_firm]) + [f"firm_rel_{k}" for k in range(len(FIRM_RELATIONS), n_firm)]
        aux = list(AUX_RELATIONS[:self.n_aux_rel_types])
        aux += [(f"aux_rel_{k}", "other") for k in range(len(AUX_RELATIONS), self.n_aux_rel_types)]
        return firm, aux


@dataclass
class PlantedTruth:
    infection_round: dict[str, int]
    conductive: tuple[str, ...]
    seeds: dict[str, int]


@dataclass
class PlantedNetwork:
    config: PlantedConfig
    edge_lines: list[str]
    node_lines: list[str]
    events: list[NewsEvent]
    truth: PlantedTruth
    firms: list[str] = field(default_factory=list)

    def event_lines(self) -> list[str]:
        return [f"{e.date.isoformat()}\t{e.firm}\t{e.category}\n" for e in self.events]


def generate_hin(config: PlantedConfig) -> PlantedNetwork:
    rng = np.random.default_rng(config.rng_seed)
    firm_rels, aux_rels = config.relation_names()
    n_firm_conductive = config.n_conductive - config.n_conductive_aux
    firm_conductive = rng.choice(firm_rels, n_firm_conductive, replace=False).tolist()
    aux_pick = rng.choice(len(aux_rels), config.n_conductive_aux, replace=False).tolist()
    aux_conductive = [aux_rels[k] for k in sorted(aux_pick)]
    conductive = tuple(sorted(firm_conductive + [r for r, _ in aux_conductive]))
    conductive_set = set(conductive)
    inert = [r for r in firm_rels if r not in conductive_set]

    n = config.n_firms
    firms = [f"F{k:05d}" for k in range(n)]
    aux = [f"X{k:05d}" for k in range(config.n_aux_nodes)]
    community = rng.integers(0, config.n_communities, n)
    members: dict[int, list[int]] = {}
    for k, c in enumerate(community.tolist()):
        members.setdefault(c, []).append(k)
    home_aux = rng.integers(0, config.n_aux_nodes, config.n_communities)
    aux_kind = {}
    edge_lines = []

    def emit(src, rel, dst):
        if rng.random() < 0.5:
            edge_lines.append(f"{src}\t{rel}\t{dst}\t-\t-\n")
            return
        # dated relations sometimes repeat, exercising temporal collapsing
        for _ in range(1 + int(rng.random() < 0.3)):
            when = config.round_date(int(rng.integers(0, config.cutoff_round)))
            edge_lines.append(f"{src}\t{rel}\t{dst}\t{when.isoformat()}\t-\n")

    # intra-community pairs mostly carry conductive types, cross pairs inert ones
    n_pairs = int(round(n * config.firm_degree / 2))
    pairs: dict[tuple[int, int], bool] = {}
    while len(pairs) < n_pairs:
        a = int(rng.integers(0, n))
        intra = rng.random() < config.intra_fraction and len(members[community[a]]) > 1
        pool = members[community[a]] if intra else None
        b = int(rng.choice(pool)) if intra else int(rng.integers(0, n))
        if a != b and (min(a, b), max(a, b)) not in pairs:
            pairs[(min(a, b), max(a, b))] = community[a] == community[b]
    # node ids: firms 0..n-1, auxiliary nodes n..n+n_aux-1
    nbrs: dict[int, list[tuple[int, str]]] = {k: [] for k in range(n + config.n_aux_nodes)}
    for (a, b), intra in sorted(pairs.items()):
        flip = rng.random() < config.relation_noise
        pool = firm_conductive if (intra != flip and firm_conductive) else inert
        rels = [rng.choice(pool)]
        if rng.random() < config.extra_relation_prob:
            rels.append(rng.choice(inert))
        for rel in sorted(set(str(r) for r in rels)):
            src, dst = (a, b) if rng.random() < 0.5 else (b, a)
            emit(firms[src], rel, firms[dst])
            nbrs[a].append((b, rel))
            nbrs[b].append((a, rel))
    # home auxiliary links mostly use a conductive firm-aux type, other links a random type
    for k, firm in enumerate(firms):
        picks = rng.choice(config.n_aux_nodes, config.aux_per_firm, replace=False).tolist()
        home = rng.random() < config.home_aux_prob
        if home:
            picks[0] = int(home_aux[community[k]])
        for j, x in enumerate(dict.fromkeys(picks)):
            if home and j == 0 and aux_conductive and rng.random() < config.home_conductive_prob:
                rel, kind = aux_conductive[int(rng.integers(0, len(aux_conductive)))]
            else:
                rel, kind = aux_rels[int(rng.integers(0, len(aux_rels)))]
            aux_kind.setdefault(aux[x], kind)
            emit(firm, rel, aux[x])
            nbrs[k].append((n + x, rel))
            nbrs[n + x].append((k, rel))

    node_lines = [f"{f}\tkind\tfirm\n" for f in firms]
    node_lines += [f"{x}\tkind\t{aux_kind.get(x, 'other')}\n" for x in aux]

    # exogenous seeds, then dated diffusion rounds; auxiliary nodes relay but never report
    seed_idx = rng.choice(n, min(config.n_seeds, n), replace=False)
    seed_round = rng.integers(0, config.n_rounds, len(seed_idx))
    seeds = {int(f): int(r) for f, r in zip(seed_idx, seed_round)}
    infected: dict[int, int] = {}
    for r in range(config.n_rounds):
        newly = set()
        if config.diffusion_prob > 0:
            for u in sorted(k for k, ru in infected.items() if ru < r):
                for v, rel in nbrs[u]:
                    if (rel in conductive_set and v not in infected and v not in newly
                            and rng.random() < config.diffusion_prob):
                        newly.add(v)
        newly |= {f for f, fr in seeds.items() if fr == r and f not in infected}
        for v in newly:
            infected[v] = r
    infected = {k: r for k, r in infected.items() if k < n}

    events = []
    for f in sorted(infected):
        r = infected[f]
        events.append(NewsEvent(firms[f], CATEGORY, config.round_date(r)))
        if rng.random() < 0.3:
            later = int(rng.integers(r, config.n_rounds))
            events.append(NewsEvent(firms[f], CATEGORY, config.round_date(later)))
    events.sort(key=lambda e: (e.date, e.firm))
    truth = PlantedTruth({firms[f]: r for f, r in infected.items()}, conductive,
                         {firms[f]: r for f, r in seeds.items()})
    if config.n_seeds == 0:
        logger.warning("planted config has no seed firms; no labels will be generated")
    return PlantedNetwork(config, edge_lines, node_lines, events, truth, firms)


def build_store(net: PlantedNetwork, min_count: int = 0) -> tuple[HinStore, IngestReport]:
    store = HinStore()
    report = ingest_edges(store, net.edge_lines, source="planted-edges")
    ingest_nodes(store, net.node_lines, source="planted-nodes", report=report)
    store = prepare_store(store, report, MatchRules(), min_count=min_count)
    return store, report


# --------------------------------------------------------------------------
# benchmark


METHOD_SCHEME = {"lp-core-relation": "relation", "lp-path": "path", "lp-path-segment": "segment"}

# raw gradients here are tiny (1e-9 to 1e-5) and badly scaled, so plain descent only moves
# the output bias; the larger eps keeps Adam from amplifying near-zero gradients
BENCH_TRAIN = TrainConfig(learning_rate=0.01, epochs=200, optimizer="adam", adam_eps=3e-6)


@dataclass
class SeedRun:
    seed: int
    reports: dict[str, EvalReport] = field(default_factory=dict)
    weights: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    losses: dict[str, list[float]] = field(default_factory=dict, repr=False)
    error: str | None = None


@dataclass
class MethodSummary:
    method: str
    n_seeds: int
    auc_roc_mean: float
    auc_roc_sd: float
    auc_pr_mean: float
    auc_pr_sd: float


@dataclass
class BenchResult:
    summaries: list[MethodSummary]
    runs: list[SeedRun]
    seconds: float = 0.0

    def summary(self, method: str) -> MethodSummary:
        return next(s for s in self.summaries if s.method == method)

    def to_tsv(self) -> str:
        lines = ["method\tn_seeds\tauc_roc_mean\tauc_roc_sd\tauc_pr_mean\tauc_pr_sd\n"]
        for s in self.summaries:
            lines.append(f"{s.method}\t{s.n_seeds}\t{s.auc_roc_mean:.6f}\t{s.auc_roc_sd:.6f}"
                         f"\t{s.auc_pr_mean:.6f}\t{s.auc_pr_sd:.6f}\n")
        lines.append("#seed\tmethod\tauc_roc\tauc_pr\tn_candidates\tn_positives\n")
        for run in self.runs:
            if run.error:
                lines.append(f"#{run.seed}\tFAILED\t{run.error}\n")
                continue
            for m, r in run.reports.items():
                lines.append(f"#{run.seed}\t{m}\t{r.auc_roc:.6f}\t{r.auc_pr:.6f}"
                             f"\t{r.n_candidates}\t{r.n_positives}\n")
        return "".join(lines)


def run_seed(config: PlantedConfig, methods, seed: int,
             train_config: TrainConfig = BENCH_TRAIN, top_k: int = 3000) -> SeedRun:
    """One full pipeline: generate, ingest, core, features, split, train, predict, evaluate."""
    run = SeedRun(seed)
    cfg = PlantedConfig(**{**asdict(config), "rng_seed": seed})
    net = generate_hin(cfg)
    store, _ = build_store(net)
    core = build_core(store, net.firms)
    lists, _ = build_lists(net.events, categories=None)
    split = make_split(lists.get(CATEGORY, CategoryList(CATEGORY)), core.nodes, cfg.split_spec())
    if not split.source or not split.target or not split.positives:
        raise ValueError(f"degenerate split: {len(split.source)} sources, {len(split.target)} "
                         f"targets, {len(split.positives)} positives")
    sigs = None
    if any(METHOD_SCHEME.get(m) in ("path", "segment") for m in methods):
        sigs = feat.edge_signatures(store, core)
    tc = TrainConfig(**{**asdict(train_config), "seed": seed})
    for method in methods:
        if method == "lp-fixed":
            scores = predict(None, None, core, split.known, split.candidates)
            run.weights[method] = np.ones(core.n_edges)
        else:
            fm = feat.extract(METHOD_SCHEME[method], core, store, top_k=top_k, edge_sigs=sigs)
            result = train(fm, core, split.source, split.target, tc)
            scores = predict(result.model, fm, core, split.known, split.candidates)
            run.weights[method] = result.model(fm.matrix)
            run.losses[method] = result.losses
        run.reports[method] = evaluate_category(scores, split.candidates, split.positives,
                                                CATEGORY, method)
    return run


def _safe_run_seed(args):
    config, methods, seed, train_config, top_k = args
    try:
        return run_seed(config, methods, seed, train_config, top_k)
    except Exception as exc:  # a failed seed is recorded, the table still gets built
        logger.warning("benchmark seed %d failed: %s", seed, exc)
        return SeedRun(seed, error=f"{type(exc).__name__}: {exc}")


def run_benchmark(config: PlantedConfig = PlantedConfig(), methods=METHODS, seeds=range(10),
                  train_config: TrainConfig = BENCH_TRAIN, top_k: int = 3000,
                  threads: int = 1) -> BenchResult:
    methods = list(methods)
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods: {sorted(unknown)}")
    seeds = list(seeds)
    t0 = time.perf_counter()
    jobs = [(config, methods, s, train_config, top_k) for s in seeds]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(_safe_run_seed, jobs))
    else:
        runs = [_safe_run_seed(j) for j in jobs]
    summaries = []
    for m in methods:
        roc = np.array([r.reports[m].auc_roc for r in runs if not r.error])
        pr = np.array([r.reports[m].auc_pr for r in runs if not r.error])
        sd = (lambda x: float(np.std(x, ddof=1)) if len(x) > 1 else 0.0)
        summaries.append(MethodSummary(m, len(roc),
                                       float(roc.mean()) if len(roc) else float("nan"), sd(roc),
                                       float(pr.mean()) if len(pr) else float("nan"), sd(pr)))
    return BenchResult(summaries, runs, time.perf_counter() - t0)
