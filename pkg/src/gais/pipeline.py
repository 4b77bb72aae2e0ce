"""End-to-end orchestration: config, staged runs, sweeps and graph benchmarks."""

from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import itertools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, Splits, SplitMasks, load_csv, preprocess, resolve_dataset, stratified_split, write_bundle
from .dm import DmParams, build_dm_graph
from .errors import ConfigError, GaisError
from .evaluation import (
    MetricsReport,
    StageTimer,
    Timings,
    exact_knn_graph,
    fit_predict,
    random_baseline,
)
from .gat import GatConfig, NystromConfig, TrainConfig, train
from .gat.train import TrainResult
from .graph import MultiGraph, write_graph, write_sidecar
from .lsh import LshParams, build_ml_graph, build_mvml_graph, build_sl_graph, bucket_quality
from .numerics.checkpoint import save_checkpoint
from .select import (
    ImportanceConfig,
    SelectionSpec,
    config_dict,
    importance,
    scores_for_dataset,
    select,
    selection_record,
    write_reduced_csv,
    write_selection,
)

logger = logging.getLogger(__name__)

METHODS = ("dm", "sl-lsh", "ml-lsh", "mvml-lsh")
DOWNSTREAM = ("logreg", "knn")


def _default_views() -> list[LshParams]:
    return [LshParams(family="angular"), LshParams(family="euclidean")]


@dataclass(frozen=True)
class PipelineConfig:
    dataset: str = "banana"
    target: str = "class"
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    method: str = "dm"
    dm: DmParams = field(default_factory=DmParams)
    lsh: LshParams = field(default_factory=LshParams)
    views: tuple[LshParams, ...] = field(default_factory=lambda: tuple(_default_views()))
    gat: GatConfig = field(default_factory=GatConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    importance: ImportanceConfig = field(default_factory=ImportanceConfig)
    selection: SelectionSpec = field(default_factory=SelectionSpec)
    downstream: str = "logreg"
    seeds: tuple[int, ...] = (0,)

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.downstream not in DOWNSTREAM:
            raise ConfigError(f"unknown downstream model {self.downstream!r}; expected one of {DOWNSTREAM}")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        self.gat.validate()
        self.train.validate()
        self.importance.validate(self.gat.layers)
        self.selection.validate()
        if self.method == "dm":
            self.dm.validate()
        elif self.method == "mvml-lsh":
            for v in self.views:
                v.validate()
        else:
            self.lsh.validate()

    def to_json(self) -> dict:
        d = asdict(self)
        d["importance"] = config_dict(self.importance)
        d["views"] = [asdict(v) for v in self.views]
        d["split"] = list(self.split)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            kw = dict(d)
            if "dm" in kw:
                kw["dm"] = DmParams(**kw["dm"])
            if "lsh" in kw:
                kw["lsh"] = LshParams(**kw["lsh"])
            if "views" in kw:
                kw["views"] = tuple(LshParams(**v) for v in kw["views"])
            if "gat" in kw:
                kw["gat"] = GatConfig.from_json(kw["gat"])
            if "train" in kw:
                kw["train"] = TrainConfig(**kw["train"])
            if "importance" in kw:
                imp = dict(kw["importance"])
                if imp.get("beta") is not None:
                    imp["beta"] = tuple(imp["beta"])
                kw["importance"] = ImportanceConfig(**imp)
            if "selection" in kw:
                kw["selection"] = SelectionSpec(**kw["selection"])
            if "split" in kw:
                kw["split"] = tuple(kw["split"])
            if "seeds" in kw:
                kw["seeds"] = tuple(int(s) for s in kw["seeds"])
            cfg = cls(**kw)
        except TypeError as e:
            raise ConfigError(f"invalid config: {e}") from e
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            return cls.from_json(json.loads(p.read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: not valid JSON ({e})") from e

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Route one root seed into every randomized stage."""
        return dataclasses.replace(
            self,
            dm=dataclasses.replace(self.dm, seed=seed),
            lsh=dataclasses.replace(self.lsh, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
        )


def apply_overrides(cfg: PipelineConfig, overrides: dict) -> PipelineConfig:
    """Replace dotted fields, e.g. ``{"selection.rho": 0.05, "dm.p": 97}``."""
    for path, value in overrides.items():
        parts = path.split(".")
        cfg = _replace_path(cfg, parts, value)
    return cfg


def _replace_path(obj, parts, value):
    if not dataclasses.is_dataclass(obj) or parts[0] not in {f.name for f in dataclasses.fields(obj)}:
        raise ConfigError(f"unknown config field {'.'.join(parts)!r}")
    if len(parts) == 1:
        return dataclasses.replace(obj, **{parts[0]: value})
    return dataclasses.replace(obj, **{parts[0]: _replace_path(getattr(obj, parts[0]), parts[1:], value)})


@contextlib.contextmanager
def stage(name: str):
    """Prefix any pipeline error with the stage it came from."""
    try:
        yield
    except GaisError as e:
        if str(e).startswith(f"[{name}]"):
            raise
        raise type(e)(f"[{name}] {e}") from e


# ---------------------------------------------------------------- stages


def load_dataset(cfg: PipelineConfig, seed: int) -> tuple[Dataset, SplitMasks]:
    path = resolve_dataset(cfg.dataset)
    ds = preprocess(load_csv(path, cfg.target))
    masks = stratified_split(ds.y, cfg.split, seed=seed)
    return ds, masks


def build_graph(cfg: PipelineConfig, ds: Dataset, masks: SplitMasks) -> tuple[MultiGraph, dict]:
    if cfg.method == "dm":
        return build_dm_graph(ds.X, ds.y, masks.train, cfg.dm)
    if cfg.method == "sl-lsh":
        g, _, report = build_sl_graph(ds.X, ds.y, masks.train, cfg.lsh)
    elif cfg.method == "ml-lsh":
        g, _, report = build_ml_graph(ds.X, ds.y, masks.train, cfg.lsh)
    else:
        views = [dataclasses.replace(v, seed=cfg.lsh.seed) for v in cfg.views]
        g, _, report = build_mvml_graph(ds.X, ds.y, masks.train, views, cfg.lsh.M, seed=cfg.lsh.seed)
    return g, report


def train_scores(cfg: PipelineConfig, g: MultiGraph, ds: Dataset, masks: SplitMasks) -> tuple[TrainResult, np.ndarray]:
    """Train the GAT and return importance scores aligned with ``masks.train``."""
    res = train(g, cfg.gat, cfg.train, n_classes=ds.n_classes)
    node_scores = importance(res.trace, cfg.importance)
    return res, scores_for_dataset(node_scores, g.node_ids, masks.train)


def selected_rows(scores: np.ndarray, ds: Dataset, masks: SplitMasks, spec: SelectionSpec) -> np.ndarray:
    return masks.train[select(scores, ds.y[masks.train], spec)]


def downstream_report(model: str, ds: Dataset, rows: np.ndarray, X_eval, y_eval, n_total: int) -> MetricsReport:
    pred = fit_predict(model, ds.X[rows], ds.y[rows], X_eval, ds.n_classes)
    return MetricsReport.from_predictions(y_eval, pred, len(rows), n_total)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(run_dir: Path, cfg: PipelineConfig, seed: int, artifacts: list[str], volatile: list[str]) -> dict:
    manifest = {
        "config_hash": cfg.config_hash(),
        "seed": seed,
        "artifacts": {a: _sha256(run_dir / a) for a in sorted(artifacts)},
        "volatile": sorted(volatile),
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def verify_manifest(run_dir: str | Path) -> list[str]:
    """Names of artifacts whose checksum no longer matches the manifest."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    return [a for a, h in manifest["artifacts"].items() if not (run_dir / a).exists() or _sha256(run_dir / a) != h]


def run_pipeline(cfg: PipelineConfig, out_dir: str | Path, seed: int | None = None) -> dict:
    """Run every stage for one seed and write the run directory.

    Returns the metrics dict (also written to ``metrics.json``).
    """
    cfg.validate()
    seed = cfg.seeds[0] if seed is None else seed
    cfg_s = cfg.with_seed(seed)
    run_dir = Path(out_dir) / f"seed-{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    timings = Timings()

    with stage("preprocess"):
        ds, masks = load_dataset(cfg_s, seed)
        write_bundle(run_dir / "dataset", ds, masks)
        splits = Splits(ds, masks)
    with stage("build-graph"), StageTimer(timings, "GCT"):
        g, report = build_graph(cfg_s, ds, masks)
    report.pop("gct_seconds", None)
    report["node_ids"] = g.node_ids
    write_graph(g, run_dir / "graph.txt")
    write_sidecar(run_dir / "graph.json", report)
    with stage("train"):
        res, scores = train_scores(cfg_s, g, ds, masks)
    timings.GTT = res.gtt_seconds
    save_checkpoint(run_dir / "model", res.model.params, {"gat": cfg.gat.to_json(), "best_iter": res.fit.best_iter})
    res.trace.write(run_dir / "trace")
    res.write_log(run_dir / "train_log.jsonl")
    with stage("select"), StageTimer(timings, "IST"):
        rows = selected_rows(scores, ds, masks, cfg.selection)
    record = selection_record(cfg.selection, rows, ds.y, len(masks.train), ds.class_names)
    write_selection(run_dir / "selection.json", record)
    src_csv = resolve_dataset(cfg.dataset)
    write_reduced_csv(src_csv, run_dir / "reduced.csv", rows)

    with stage("evaluate"):
        splits.unlock_test()
        X_test, y_test = splits.test()
        n_total = len(masks.train)
        with StageTimer(timings, "MLT"):
            gais = downstream_report(cfg.downstream, ds, rows, X_test, y_test, n_total)
        rand_rows = random_baseline(ds.y, masks.train, seed=seed, size=len(rows))
        rand = downstream_report(cfg.downstream, ds, rand_rows, X_test, y_test, n_total)
        full = downstream_report(cfg.downstream, ds, masks.train, X_test, y_test, n_total)
    metrics = {
        "dataset": cfg.dataset,
        "method": cfg.method,
        "downstream": cfg.downstream,
        "seed": seed,
        "gais": gais.to_json(),
        "random": rand.to_json(),
        "full": full.to_json(),
        "train": {"iterations": res.fit.iterations, "best_iter": res.fit.best_iter,
                  "val_accuracy": res.val_accuracy},
        "graph": {"nodes": int(g.n), "arcs": int(g.num_arcs()), "leftover": int(len(masks.train) - g.n)},
    }
    (run_dir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
    (run_dir / "config.json").write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True))
    _write_timings(run_dir / "timings.csv", cfg, seed, gais, timings)
    artifacts = ["config.json", "metrics.json", "selection.json", "reduced.csv", "graph.txt", "graph.json",
                 "model.bin", "model.json", "trace.bin", "trace.json", "train_log.jsonl"]
    write_manifest(run_dir, cfg, seed, artifacts, ["timings.csv"])
    return metrics


TIMING_COLUMNS = ("method", "dataset", "seed", "AC", "F1", "R", "E", "E_F1", "GCT", "GTT", "IST", "MLT")


def _write_timings(path: Path, cfg: PipelineConfig, seed: int, rep: MetricsReport, t: Timings) -> None:
    row = [cfg.method, cfg.dataset, seed, rep.AC, rep.F1, rep.R, rep.E, rep.E_F1, t.GCT, t.GTT, t.IST, t.MLT]
    path.write_text(",".join(TIMING_COLUMNS) + "\n" + ",".join(str(v) for v in row) + "\n")


# ---------------------------------------------------------------- sweep


@dataclass
class SweepCell:
    overrides: dict
    valid_E: list[float] = field(default_factory=list)
    valid_E_F1: list[float] = field(default_factory=list)
    test: dict | None = None

    @property
    def mean_E(self) -> float:
        return float(np.mean(self.valid_E))

    @property
    def rho(self) -> float:
        return float(self.overrides.get("selection.rho", math.nan))

    def to_json(self) -> dict:
        return {"overrides": self.overrides, "valid_E": self.mean_E, "valid_E_F1": float(np.mean(self.valid_E_F1)),
                "per_seed_E": self.valid_E, "test": self.test}


# fields applied after training: changing them never needs a new model
POST_TRAIN_PREFIXES = ("selection.", "importance.")


def _model_key(overrides: dict) -> str:
    return json.dumps({k: v for k, v in overrides.items() if not k.startswith(POST_TRAIN_PREFIXES)}, sort_keys=True)


def expand_grid(grid: dict[str, list]) -> list[dict]:
    if not grid:
        raise ConfigError("sweep grid is empty")
    keys = sorted(grid)
    for k in keys:
        if not isinstance(grid[k], list) or not grid[k]:
            raise ConfigError(f"grid entry {k!r} must be a non-empty list")
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def rank_cells(cells: list[SweepCell]) -> list[SweepCell]:
    """Best validation effectiveness first; equal scores prefer the smaller rho."""
    return sorted(cells, key=lambda c: (-round(c.mean_E, 12), c.rho if not math.isnan(c.rho) else math.inf))


def sweep(cfg: PipelineConfig, grid: dict[str, list], confirm: bool = False) -> list[SweepCell]:
    """Grid search scored on the validation split, averaged over ``cfg.seeds``.

    Cells that differ only in selection or importance fields share one
    trained model per seed. The test split is read only when ``confirm`` is
    set, and only for the best cell.
    """
    cfg.validate()
    cells = [SweepCell(o) for o in expand_grid(grid)]
    for c in cells:
        apply_overrides(cfg, c.overrides).validate()
    traces: dict[tuple[int, str], tuple] = {}
    for seed in cfg.seeds:
        ds, masks = load_dataset(cfg.with_seed(seed), seed)
        X_val, y_val = Splits(ds, masks).valid()
        for c in cells:
            cell_cfg = apply_overrides(cfg, c.overrides).with_seed(seed)
            scores = _cell_scores(cell_cfg, ds, masks, traces, (seed, _model_key(c.overrides)))
            rows = selected_rows(scores, ds, masks, cell_cfg.selection)
            rep = downstream_report(cfg.downstream, ds, rows, X_val, y_val, len(masks.train))
            c.valid_E.append(rep.E)
            c.valid_E_F1.append(rep.E_F1)
            logger.info("seed %d %s -> valid E %.4f", seed, c.overrides, rep.E)
    ranked = rank_cells(cells)
    if confirm:
        best = ranked[0]
        best.test = confirm_cell(cfg, best.overrides, traces)
    return ranked


def _cell_scores(cfg: PipelineConfig, ds: Dataset, masks: SplitMasks, traces: dict, key) -> np.ndarray:
    if key not in traces:
        g, _ = build_graph(cfg, ds, masks)
        res = train(g, cfg.gat, cfg.train, n_classes=ds.n_classes)
        traces[key] = (res.trace, g.node_ids)
    trace, node_ids = traces[key]
    return scores_for_dataset(importance(trace, cfg.importance), node_ids, masks.train)


def confirm_cell(cfg: PipelineConfig, overrides: dict, traces: dict | None = None) -> dict:
    """Test-split evaluation of one configuration, mean over seeds, with the random baseline.

    ``traces`` may carry attention traces already trained during a sweep.
    """
    traces = {} if traces is None else traces
    rows_out = []
    for seed in cfg.seeds:
        cell_cfg = apply_overrides(cfg, overrides).with_seed(seed)
        ds, masks = load_dataset(cell_cfg, seed)
        splits = Splits(ds, masks)
        scores = _cell_scores(cell_cfg, ds, masks, traces, (seed, _model_key(overrides)))
        rows = selected_rows(scores, ds, masks, cell_cfg.selection)
        splits.unlock_test()
        X_test, y_test = splits.test()
        gais = downstream_report(cfg.downstream, ds, rows, X_test, y_test, len(masks.train))
        rand_rows = random_baseline(ds.y, masks.train, seed=seed, size=len(rows))
        rand = downstream_report(cfg.downstream, ds, rand_rows, X_test, y_test, len(masks.train))
        rows_out.append((gais, rand))
    return {
        "gais_E": float(np.mean([g.E for g, _ in rows_out])),
        "random_E": float(np.mean([r.E for _, r in rows_out])),
        "gais_R": float(np.mean([g.R for g, _ in rows_out])),
        "per_seed": [{"gais": g.to_json(), "random": r.to_json()} for g, r in rows_out],
    }


# ---------------------------------------------------------------- benchmarks


def make_blobs(n: int, d: int = 10, n_classes: int = 3, seed: int = 0, spread: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic Gaussian clusters, one per class, centers uniform in [-10, 10]^d."""
    rng = np.random.default_rng([seed, 0x424C])
    centers = rng.uniform(-10, 10, size=(n_classes, d))
    y = rng.integers(0, n_classes, size=n)
    X = centers[y] + rng.normal(scale=spread, size=(n, d))
    return X, y


BENCH_METHODS = ("dm", "exact-knn", "sl-lsh", "ml-lsh")


def time_graph_method(method: str, X: np.ndarray, y: np.ndarray, seed: int, dm: DmParams, lsh: LshParams,
                      k: int = 10) -> float:
    idx = np.arange(len(X))
    t0 = time.perf_counter()
    if method == "dm":
        build_dm_graph(X, y, idx, dataclasses.replace(dm, seed=seed))
    elif method == "exact-knn":
        exact_knn_graph(X, k)
    elif method == "sl-lsh":
        build_sl_graph(X, y, idx, dataclasses.replace(lsh, seed=seed))
    elif method == "ml-lsh":
        build_ml_graph(X, y, idx, dataclasses.replace(lsh, seed=seed))
    else:
        raise ConfigError(f"unknown benchmark method {method!r}; expected one of {BENCH_METHODS}")
    return time.perf_counter() - t0


def bench_graph(sizes: list[int], methods: list[str], repeats: int = 3, d: int = 10, n_classes: int = 3,
                seed: int = 0, dm: DmParams = DmParams(K=5, w_max=2000), lsh: LshParams = LshParams(),
                k: int = 10) -> list[dict]:
    """Graph construction time per (size, method): mean and std over repeats."""
    rows = []
    for n in sizes:
        X, y = make_blobs(int(n), d, n_classes, seed)
        for method in methods:
            ts = [time_graph_method(method, X, y, seed + r, dm, lsh, k) for r in range(repeats)]
            rows.append({"n": int(n), "method": method, "mean_s": float(np.mean(ts)), "std_s": float(np.std(ts)),
                         "repeats": repeats})
            logger.info("n=%d %s: %.3fs", n, method, np.mean(ts))
    return rows


def lsh_quality(cfg: PipelineConfig, seed: int = 0) -> dict:
    """Bucket-quality metrics of single- and multi-level hashing on the training rows."""
    ds, masks = load_dataset(cfg, seed)
    params = dataclasses.replace(cfg.lsh, seed=seed)
    X, y = ds.X[masks.train], ds.y[masks.train]
    out = {}
    for name, builder in (("sl", build_sl_graph), ("ml", build_ml_graph)):
        _, index, _ = builder(ds.X, ds.y, masks.train, params)
        out[name] = bucket_quality(index, X, y, seed=seed).to_json()
    return out
