"""Command-line entry point.

Every subcommand writes its primary output plus ``<out>.manifest.json``
recording the command line, the effective configuration, input digests, the
tool version, seeds and wall-clock time.  Errors exit 1 with one
``error: ...`` line on stderr; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, fields, replace
from datetime import date

import numpy as np

from . import __version__
from .core_network import build_core, load_core, save_core
from .evaluation import METHODS, evaluate_category
from .event_study import QUANTILE_LEVELS, ks_two_sample, read_prices, sample_stats, window_log_returns
from .features import DEFAULT_EXPANSION_CAP, MAX_PATH_LEN, SCHEMES, extract, load_features, save_features
from .hin_store import HinStore, MatchRules, RecordError, ingest_files, load_store, prepare_store, save_store
from .interpret import bnmf, repeated_importance, segment_peaks
from .label_store import SplitSpec, build_lists, choose_delta, load_split, make_split, parse_event_lines, save_split
from .propagation import (TrainConfig, extreme_fraction, load_model, predict, save_model, train,
                          weight_histogram)
from .synthetic import BENCH_TRAIN, PlantedConfig, run_benchmark

logger = logging.getLogger("hinlp")

METHOD_ALIASES = {"lp-relation": "lp-core-relation", "lp-segment": "lp-path-segment"}


class CliError(Exception):
    """User-facing failure; reported as a single line."""


# --------------------------------------------------------------------------
# helpers


def sha256_of(path: str) -> str:
    """Digest of a file, or of a directory's files (relative names and contents, sorted)."""
    h = hashlib.sha256()
    if os.path.isdir(path):
        for root, dirs, files in os.walk(path):
            dirs.sort()
            for name in sorted(files):
                full = os.path.join(root, name)
                h.update(os.path.relpath(full, path).encode())
                h.update(bytes.fromhex(sha256_of(full)))
        return h.hexdigest()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read_config(path: str) -> dict:
    """JSON object, or ``key = value`` lines with ``#`` comments and optional quotes."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        return json.loads(text)
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise CliError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip()] = value.strip().strip("\"'")
    return out


def _coerce(cls, values: dict):
    kinds = {f.name: type(getattr(cls(), f.name)) for f in fields(cls)}
    return cls(**{k: kinds[k](v) for k, v in values.items()})


def read_keys(path: str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        keys = [line.split("\t", 1)[0].strip() for line in fh]
    return [k for k in keys if k and not k.startswith("#")]


def _parse_date(text: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {text!r}") from None


class Run:
    """Collects manifest fields while a subcommand executes."""

    def __init__(self, argv: list[str], args: argparse.Namespace):
        self.t0 = time.perf_counter()
        self.argv = argv
        self.config = {k: v for k, v in vars(args).items() if k != "func"}
        self.inputs: dict[str, str] = {}
        self.seeds: list[int] = []
        self.extra: dict = {}

    def input(self, path: str) -> str:
        if not os.path.exists(path):
            raise CliError(f"input not found: {path}")
        self.inputs[path] = sha256_of(path)
        return path

    def write_manifest(self, out: str, outputs: list[str]) -> str:
        doc = {
            "command": ["hinlp"] + list(self.argv),
            "config": self.config,
            "inputs": self.inputs,
            "outputs": outputs,
            "version": __version__,
            "seeds": self.seeds,
            "duration_seconds": round(time.perf_counter() - self.t0, 6),
            **self.extra,
        }
        path = f"{out.rstrip(os.sep + '/')}.manifest.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True, default=str)
        return path


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


# --------------------------------------------------------------------------
# subcommands


def cmd_ingest(args, run: Run):
    store = HinStore()
    report = ingest_files(store, [run.input(p) for p in args.edges],
                          [run.input(p) for p in args.nodes or []])
    blacklist = [t for t in (args.blacklist or "").split(",") if t]
    rules = MatchRules(threshold=args.name_threshold)
    store = prepare_store(store, report, rules, args.min_count, blacklist, args.ownership_threshold)
    save_store(store, args.out)
    with open(os.path.join(args.out, "errors.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("source\tline\tmessage\n")
        for e in report.errors:
            fh.write(f"{e.source}\t{e.line}\t{e.message}\n")
    run.extra["report"] = {"sources_loaded": report.sources_loaded, "entities": report.entities,
                           "relations": report.relations, "merged_entities": report.merged_entities,
                           "dropped_relations": report.dropped_relations,
                           "errors": len(report.errors), "merge_conflicts": len(store.merge_conflicts)}
    return [args.out]


def cmd_build_core(args, run: Run):
    store = load_store(run.input(args.store))
    core = build_core(store, read_keys(run.input(args.universe)))
    _ensure_parent(args.out)
    save_core(core, args.out)
    run.extra["core"] = {"nodes": core.n_nodes, "edges": core.n_edges, "isolated": len(core.isolated)}
    return [args.out]


def cmd_split(args, run: Run):
    with open(run.input(args.events), encoding="utf-8") as fh:
        lists, errors = build_lists(parse_event_lines(fh, args.events), categories=None)
    if args.category not in lists:
        raise CliError(f"no events for category {args.category!r}")
    cl = lists[args.category]
    delta = choose_delta(cl, args.cutoff) if args.delta == "auto" else int(args.delta)
    spec = SplitSpec(args.cutoff, delta, args.horizon_end)
    split = make_split(cl, read_keys(run.input(args.universe)), spec)
    _ensure_parent(args.out)
    save_split(split, args.out)
    run.extra["split"] = {"delta_days": delta, "source": len(split.source), "target": len(split.target),
                          "candidates": len(split.candidates), "positives": len(split.positives),
                          "event_errors": len(errors)}
    return [args.out]


def cmd_features(args, run: Run):
    store = load_store(run.input(args.store))
    core = load_core(run.input(args.core))
    cap = None if args.expansion_cap <= 0 else args.expansion_cap
    fm = extract(args.scheme, core, store, max_len=args.max_len, top_k=args.top_k, expansion_cap=cap)
    _ensure_parent(args.out)
    save_features(fm, args.out)
    run.extra["features"] = {"scheme": fm.scheme, "rows": fm.shape[0], "columns": fm.shape[1]}
    return [args.out]


def cmd_train(args, run: Run):
    fm = load_features(run.input(args.features))
    core = load_core(run.input(args.core))
    split = load_split(run.input(args.splits))
    config = TrainConfig.from_mapping(read_config(run.input(args.config))) if args.config else TrainConfig()
    result = train(fm, core, split.source, split.target, config)
    _ensure_parent(args.out)
    save_model(args.out, result.model, {"config": asdict(config), "scheme": fm.scheme,
                                        "losses": result.losses})
    run.config["train_config"] = asdict(config)
    run.seeds = [config.seed]
    run.extra["loss"] = {"initial": result.losses[0], "final": result.losses[-1]}
    return [args.out]


def _load_weights_model(args, run: Run):
    model, meta = load_model(run.input(args.model))
    fm = load_features(run.input(args.features)) if args.features else None
    if model is not None and fm is None:
        raise CliError("a learned model needs --features")
    return model, meta, fm


def cmd_predict(args, run: Run):
    if args.fixed:
        model, fm = None, None
    elif args.model:
        model, _, fm = _load_weights_model(args, run)
    else:
        raise CliError("give --model or --fixed")
    core = load_core(run.input(args.core))
    split = load_split(run.input(args.splits))
    if fm is not None:
        fm.check_aligned(core)
    scores = predict(model, fm, core, split.known, split.candidates)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    _ensure_parent(args.out)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("firm_key\tscore\trank\n")
        for rank, (firm, s) in enumerate(ranked, start=1):
            fh.write(f"{firm}\t{s!r}\t{rank}\n")
    return [args.out]


def read_scores(path: str) -> dict[str, float]:
    scores = {}
    with open(path, encoding="utf-8") as fh:
        header = next(fh, "").rstrip("\n").split("\t")
        if header[:2] != ["firm_key", "score"]:
            raise CliError(f"{path}: expected a 'firm_key<TAB>score' header")
        for line in fh:
            if line.strip():
                firm, score = line.rstrip("\n").split("\t")[:2]
                scores[firm] = float(score)
    return scores


def read_positives(path: str) -> set[str]:
    """A split file (positives column) or a plain list of firm keys."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if first.rstrip("\n").split("\t") == ["firm", "role", "positive"]:
        return load_split(path).positives
    return set(read_keys(path))


def cmd_evaluate(args, run: Run):
    scores = read_scores(run.input(args.scores))
    positives = read_positives(run.input(args.positives)) & scores.keys()
    r = evaluate_category(scores, scores.keys(), positives, args.category, args.method)
    _ensure_parent(args.out)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("category\tmethod\tauc_roc\tauc_pr\tn_candidates\tn_positives\n")
        fh.write(f"{r.category}\t{r.method}\t{r.auc_roc!r}\t{r.auc_pr!r}\t{r.n_candidates}\t{r.n_positives}\n")
    return [args.out]


def cmd_event_study(args, run: Run):
    with open(run.input(args.prices), encoding="utf-8") as fh:
        series = read_prices(fh)
    by_firm: dict[str, set[date]] = {}
    errors = 0
    with open(run.input(args.events), encoding="utf-8") as fh:
        for ev in parse_event_lines(fh, args.events):
            if isinstance(ev, RecordError):
                errors += 1
            elif not args.category or ev.category == args.category:
                by_firm.setdefault(ev.firm, set()).add(ev.date)
    with_news, without_news = [], []
    for symbol in sorted(series):
        w, wo = window_log_returns(series[symbol], sorted(by_firm.get(symbol, ())), args.window)
        with_news.extend(w.tolist())
        without_news.extend(wo.tolist())
    d, p = ks_two_sample(with_news, without_news)
    _ensure_parent(args.out)
    cols = "\t".join(f"q{lv:g}" for lv in QUANTILE_LEVELS)
    summaries = [(name, sample_stats(sample))
                 for name, sample in (("with_news", with_news), ("without_news", without_news))]
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"sample\tcount\t{cols}\tskewness\tks_statistic\tks_pvalue\n")
        for name, st in summaries:
            qs = "\t".join(repr(st.quantiles[lv]) for lv in QUANTILE_LEVELS)
            fh.write(f"{name}\t{st.count}\t{qs}\t{st.skewness!r}\t{d!r}\t{p!r}\n")
    run.extra["event_errors"] = errors
    return [args.out]


def cmd_explain(args, run: Run):
    model, meta, fm = _load_weights_model(args, run)
    if model is None:
        raise CliError("a fixed-mode model has no learned weights to explain")
    factors = bnmf(fm, rank=args.rank, iters=args.iters, seed=args.seed)
    seeds = list(range(args.seed, args.seed + args.reps))
    if args.reps == 1:
        table = repeated_importance(lambda _: model, factors, 1, seeds)
    else:
        if not (args.core and args.splits):
            raise CliError("--reps above 1 retrains the model and needs --core and --splits")
        core = load_core(run.input(args.core))
        split = load_split(run.input(args.splits))
        config = TrainConfig(**meta.get("config", {}))
        table = repeated_importance(
            lambda s: train(fm, core, split.source, split.target, replace(config, seed=s)).model,
            factors, args.reps, seeds)
    run.seeds = seeds
    out_imp, out_peaks = f"{args.out}.importance.tsv", f"{args.out}.peaks.tsv"
    _ensure_parent(out_imp)
    with open(out_imp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("rank\tbasis\tmean_effect\tabs_mean_effect\tmean_abs_effect\n")
        for i, row in enumerate(table.rows, start=1):
            fh.write(f"{i}\t{row.basis}\t{row.mean_effect!r}\t{row.abs_mean_effect!r}\t{row.mean_abs_effect!r}\n")
    outputs = [out_imp]
    if fm.scheme == "segment":
        with open(out_peaks, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("basis\tsegment\trel_type\tvalue\n")
            for row in table.rows[:args.peak_bases]:
                for seg, rel, v in segment_peaks(factors, row.basis, args.top_n):
                    fh.write(f"{row.basis}\t{seg}\t{rel}\t{v!r}\n")
        outputs.append(out_peaks)
    else:
        logger.warning("peaks are only defined for segment features; skipped for scheme %r", fm.scheme)
    run.extra["repetitions"] = table.repetitions
    run.extra["failures"] = table.failures
    run.extra["bnmf_objective"] = factors.objective[-1]
    return outputs


def _parse_methods(text: str) -> list[str]:
    methods = [METHOD_ALIASES.get(m.strip(), m.strip()) for m in text.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise CliError(f"unknown methods {unknown}; choose from {list(METHODS)}")
    return methods


def cmd_bench(args, run: Run):
    values = read_config(run.input(args.config)) if args.config else {}
    planted_keys = {f.name for f in fields(PlantedConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    unknown = set(values) - planted_keys - train_keys - {"top_k"}
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}")
    planted = _coerce(PlantedConfig, {k: v for k, v in values.items() if k in planted_keys})
    overrides = {k: v for k, v in values.items() if k in train_keys}
    parsed = TrainConfig.from_mapping(overrides)
    tc = replace(BENCH_TRAIN, **{k: getattr(parsed, k) for k in overrides})
    top_k = int(values.get("top_k", 3000))
    seeds = list(range(args.seed_start, args.seed_start + args.seeds))
    result = run_benchmark(planted, _parse_methods(args.methods), seeds, tc, top_k, threads=args.threads)
    failed = [r for r in result.runs if r.error]
    if len(failed) == len(result.runs):
        raise CliError(f"every benchmark seed failed, first: {failed[0].error}")
    _ensure_parent(args.out)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(result.to_tsv())
    run.seeds = seeds
    run.config["planted_config"] = asdict(planted)
    run.config["train_config"] = asdict(tc)
    run.extra["failed_seeds"] = [r.seed for r in failed]
    return [args.out]


def cmd_export_weights(args, run: Run):
    model, _, fm = _load_weights_model(args, run)
    if model is None:
        if fm is None:
            raise CliError("a fixed-mode model needs --features to know the edge count")
        weights = np.ones(fm.shape[0])
    else:
        weights = model(fm.matrix)
    rows = weight_histogram(weights, args.bins)
    _ensure_parent(args.out)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("bin_lo\tbin_hi\tcount\tdensity\n")
        for lo, hi, count, dens in rows:
            fh.write(f"{lo!r}\t{hi!r}\t{count}\t{float(dens)!r}\n")
    run.extra["extreme_fraction"] = extreme_fraction(weights)
    run.extra["edges"] = int(len(weights))
    return [args.out]


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hinlp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=1, help="cap on worker processes (bench)")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("ingest", help="load, merge, filter and collapse raw edge/node files")
    s.add_argument("--edges", nargs="+", required=True)
    s.add_argument("--nodes", nargs="*", default=[])
    s.add_argument("--min-count", type=int, default=100)
    s.add_argument("--blacklist", default="", help="comma-separated relation types to drop")
    s.add_argument("--ownership-threshold", type=float, default=0.05)
    s.add_argument("--name-threshold", type=float, default=0.9)
    s.add_argument("--out", required=True, help="store directory")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("build-core", help="project the store onto firm-firm edges")
    s.add_argument("--store", required=True)
    s.add_argument("--universe", required=True, help="file with one firm key per line")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_core)

    s = sub.add_parser("split", help="temporal source/target/candidate split for one category")
    s.add_argument("--events", required=True)
    s.add_argument("--cutoff", type=_parse_date, required=True)
    s.add_argument("--delta", default="31", help="window in days, or 'auto'")
    s.add_argument("--horizon-end", type=_parse_date, required=True)
    s.add_argument("--category", required=True)
    s.add_argument("--universe", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("features", help="edge feature matrix")
    s.add_argument("--store", required=True)
    s.add_argument("--core", required=True)
    s.add_argument("--scheme", choices=SCHEMES, required=True)
    s.add_argument("--max-len", type=int, default=MAX_PATH_LEN)
    s.add_argument("--top-k", type=int, default=3000)
    s.add_argument("--expansion-cap", type=int, default=DEFAULT_EXPANSION_CAP,
                   help="skip intermediates with more incident relations; 0 disables")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("train", help="learn the edge-weight model")
    s.add_argument("--features", required=True)
    s.add_argument("--core", required=True)
    s.add_argument("--splits", required=True)
    s.add_argument("--config", help="key = value or JSON file of training settings")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="score candidate firms")
    s.add_argument("--model")
    s.add_argument("--fixed", action="store_true", help="unit weights (classic label propagation)")
    s.add_argument("--features")
    s.add_argument("--core", required=True)
    s.add_argument("--splits", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="AUC-ROC and AUC-PR of a score file")
    s.add_argument("--scores", required=True)
    s.add_argument("--positives", required=True, help="split file or one firm key per line")
    s.add_argument("--category", default="")
    s.add_argument("--method", default="")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("event-study", help="log returns around news versus elsewhere")
    s.add_argument("--prices", required=True)
    s.add_argument("--events", required=True)
    s.add_argument("--window", type=int, default=10)
    s.add_argument("--category")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_event_study)

    s = sub.add_parser("explain", help="factor features and rank basis importance")
    s.add_argument("--model", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--rank", type=int, default=50)
    s.add_argument("--reps", type=int, default=30)
    s.add_argument("--iters", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--core")
    s.add_argument("--splits")
    s.add_argument("--peak-bases", type=int, default=5)
    s.add_argument("--top-n", type=int, default=3)
    s.add_argument("--out", required=True, help="output prefix")
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("bench", help="planted synthetic benchmark")
    s.add_argument("--config", help="key = value or JSON file of planted and training settings")
    s.add_argument("--methods", default=",".join(METHODS))
    s.add_argument("--seeds", type=int, default=10)
    s.add_argument("--seed-start", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("export-weights", help="histogram of learned edge weights")
    s.add_argument("--model", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--bins", type=int, default=20)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_weights)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    run = Run(argv, args)
    try:
        if args.threads < 1:
            raise CliError("--threads must be at least 1")
        outputs = args.func(args, run)
        run.write_manifest(args.out, outputs)
    except Exception as exc:  # every failure becomes one machine-parsable line
        text = str(exc).strip().splitlines()
        print(f"error: {text[0] if text else type(exc).__name__}", file=sys.stderr)
        logger.debug("traceback", exc_info=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
