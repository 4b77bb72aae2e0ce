"""Command-line entry point: ``gais <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .data import Splits, load_csv, preprocess, read_bundle, resolve_dataset, stratified_split, write_bundle
from .errors import ConfigError, DataError, GaisError, NumericError
from .gat import AttentionTrace, train
from .graph import read_graph, write_graph, write_sidecar
from .numerics.checkpoint import save_checkpoint
from .select import SelectionSpec, importance, scores_for_dataset, select, selection_record, write_reduced_csv, write_selection

logger = logging.getLogger("gais")

EXIT_CODES = {ConfigError: 2, DataError: 3, NumericError: 4}


def _load_config(args) -> pl.PipelineConfig:
    cfg = pl.PipelineConfig.load(args.config) if args.config else pl.PipelineConfig()
    over = {}
    for name in ("dataset", "method", "downstream"):
        if getattr(args, name, None) is not None:
            over[name] = getattr(args, name)
    if getattr(args, "strategy", None) is not None:
        over["selection.strategy"] = args.strategy
    if getattr(args, "rho", None) is not None:
        over["selection.rho"] = args.rho
    cfg = pl.apply_overrides(cfg, over)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seeds=(args.seed,))
    cfg.validate()
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _attach(g, ds, node_ids):
    g.node_ids = np.asarray(node_ids, dtype=np.int64)
    g.features = ds.X[g.node_ids]
    g.labels = ds.y[g.node_ids]
    return g


def _read_graph_dir(d: Path, ds):
    g = read_graph(d / "graph.txt")
    side = json.loads((d / "graph.json").read_text())
    return _attach(g, ds, side["node_ids"])


def cmd_preprocess(args) -> int:
    cfg = _load_config(args)
    ds = preprocess(load_csv(resolve_dataset(cfg.dataset), cfg.target))
    masks = stratified_split(ds.y, cfg.split, seed=cfg.seeds[0])
    out = write_bundle(_out(args), ds, masks)
    print(f"wrote bundle to {out}: n={ds.n} d={ds.d} classes={ds.n_classes} "
          f"train/valid/test={len(masks.train)}/{len(masks.valid)}/{len(masks.test)}")
    return 0


def cmd_build_graph(args) -> int:
    cfg = _load_config(args).with_seed(args.seed or 0)
    ds, masks = read_bundle(args.bundle)
    with pl.stage("build-graph"):
        g, report = pl.build_graph(cfg, ds, masks)
    out = _out(args)
    report["node_ids"] = g.node_ids
    write_graph(g, out / "graph.txt")
    write_sidecar(out / "graph.json", report)
    print(f"{cfg.method}: {g.n} nodes, {g.num_arcs()} arcs in {len(g.arc_sets)} arc set(s), "
          f"{report['gct_seconds']:.3f}s")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args).with_seed(args.seed or 0)
    ds, _ = read_bundle(args.bundle)
    g = _read_graph_dir(Path(args.graph), ds)
    with pl.stage("train"):
        res = train(g, cfg.gat, cfg.train, n_classes=ds.n_classes)
    out = _out(args)
    save_checkpoint(out / "model", res.model.params, {"gat": cfg.gat.to_json(), "best_iter": res.fit.best_iter})
    res.trace.write(out / "trace")
    res.write_log(out / "train_log.jsonl")
    print(f"trained {res.fit.iterations} iterations (best {res.fit.best_iter}), "
          f"internal validation accuracy {res.val_accuracy:.3f}, {res.gtt_seconds:.2f}s")
    return 0


def cmd_select(args) -> int:
    cfg = _load_config(args)
    ds, masks = read_bundle(args.bundle)
    g = _read_graph_dir(Path(args.graph), ds)
    trace = AttentionTrace.read(Path(args.trace) / "trace")
    scores = scores_for_dataset(importance(trace, cfg.importance), g.node_ids, masks.train)
    rows = masks.train[select(scores, ds.y[masks.train], cfg.selection)]
    out = _out(args)
    record = selection_record(cfg.selection, rows, ds.y, len(masks.train), ds.class_names)
    record["not_in_graph"] = int(len(masks.train) - g.n)
    write_selection(out / "selection.json", record)
    write_reduced_csv(resolve_dataset(cfg.dataset), out / "reduced.csv", rows)
    print(f"selected {len(rows)} of {len(masks.train)} training instances (R={record['R']:.4f})")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    ds, masks = read_bundle(args.bundle)
    record = json.loads(Path(args.selection).read_text())
    rows = np.asarray(record["selected"], dtype=np.int64)
    splits = Splits(ds, masks)
    splits.unlock_test()
    X_test, y_test = splits.test()
    rep = pl.downstream_report(cfg.downstream, ds, rows, X_test, y_test, len(masks.train))
    out = _out(args)
    (out / "metrics.json").write_text(json.dumps(rep.to_json(), indent=2, sort_keys=True))
    print(json.dumps(rep.to_json(), indent=2))
    return 0


def cmd_pipeline(args) -> int:
    cfg = _load_config(args)
    out = _out(args)
    for seed in cfg.seeds:
        m = pl.run_pipeline(cfg, out, seed)
        g, r = m["gais"], m["random"]
        print(f"seed {seed}: GAIS AC={g['AC']:.4f} R={g['R']:.4f} E={g['E']:.4f} | random E={r['E']:.4f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    if args.grid:
        grid = json.loads(Path(args.grid).read_text())
    else:
        grid = {"selection.rho": [0.01, 0.02, 0.03, 0.05, 0.1]}
    ranked = pl.sweep(cfg, grid, confirm=args.confirm)
    out = _out(args)
    (out / "sweep.json").write_text(json.dumps([c.to_json() for c in ranked], indent=2))
    for i, c in enumerate(ranked):
        print(f"{i + 1:3d}  valid E={c.mean_E:.4f}  {json.dumps(c.overrides, sort_keys=True)}")
    if args.confirm:
        t = ranked[0].test
        print(f"test: GAIS E={t['gais_E']:.4f} (R={t['gais_R']:.4f}) vs random E={t['random_E']:.4f}")
    return 0


def cmd_bench_graph(args) -> int:
    rows = pl.bench_graph(args.sizes, args.methods, repeats=args.repeats, d=args.dim, n_classes=args.classes,
                          seed=args.seed or 0)
    out = _out(args)
    with open(out / "bench_graph.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"n={r['n']:>8d} {r['method']:>10s} {r['mean_s']:.3f}s ± {r['std_s']:.3f}")
    return 0


def cmd_lsh_quality(args) -> int:
    cfg = _load_config(args)
    res = pl.lsh_quality(cfg, seed=cfg.seeds[0])
    (_out(args) / "lsh_quality.json").write_text(json.dumps(res, indent=2))
    print(json.dumps(res, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="root random seed")
    common.add_argument("--out", default="runs", help="output directory")
    common.add_argument("--config", default=None, help="JSON pipeline config")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="gais", description="Graph-attention instance selection")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
        return p

    p = add("preprocess", cmd_preprocess, "load, encode, scale and split a CSV")
    p.add_argument("--dataset", help="CSV path or bundled dataset name")

    p = add("build-graph", cmd_build_graph, "build the instance graph from a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--method", choices=pl.METHODS)

    p = add("train", cmd_train, "train the attention network on a graph")
    p.add_argument("--bundle", required=True)
    p.add_argument("--graph", required=True, help="directory holding graph.txt and graph.json")

    p = add("select", cmd_select, "score instances and apply a selection strategy")
    p.add_argument("--bundle", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--trace", required=True, help="directory holding trace.bin/trace.json")
    p.add_argument("--dataset", help="source CSV for the reduced copy")
    p.add_argument("--strategy", choices=("global", "balanced", "proportional"))
    p.add_argument("--rho", type=float)

    p = add("evaluate", cmd_evaluate, "train the downstream model on a selection and score the test split")
    p.add_argument("--bundle", required=True)
    p.add_argument("--selection", required=True)
    p.add_argument("--downstream", choices=pl.DOWNSTREAM)

    p = add("pipeline", cmd_pipeline, "run every stage end to end")
    p.add_argument("--dataset")
    p.add_argument("--method", choices=pl.METHODS)
    p.add_argument("--strategy", choices=("global", "balanced", "proportional"))
    p.add_argument("--rho", type=float)
    p.add_argument("--downstream", choices=pl.DOWNSTREAM)

    p = add("sweep", cmd_sweep, "grid search on the validation split")
    p.add_argument("--dataset")
    p.add_argument("--method", choices=pl.METHODS)
    p.add_argument("--grid", help="JSON object mapping dotted config fields to value lists")
    p.add_argument("--confirm", action="store_true", help="evaluate the best cell on the test split")

    p = add("bench-graph", cmd_bench_graph, "time graph construction on synthetic blobs")
    p.add_argument("--sizes", type=int, nargs="+", default=[10_000, 100_000])
    p.add_argument("--methods", nargs="+", default=["dm", "exact-knn"], choices=pl.BENCH_METHODS)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--classes", type=int, default=3)

    p = add("lsh-quality", cmd_lsh_quality, "bucket quality of single- vs multi-level hashing")
    p.add_argument("--dataset")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GaisError as e:
        code = next((c for cls, c in EXIT_CODES.items() if isinstance(e, cls)), 1)
        print(f"error: {e}", file=sys.stderr)
        if isinstance(e, NumericError):
            print("hint: try a lower learning rate", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
