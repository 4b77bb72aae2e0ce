"""Attention-based node importance and instance selection strategies."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .gat.model import AttentionTrace

logger = logging.getLogger(__name__)

STRATEGIES = ("global", "balanced", "proportional")


@dataclass(frozen=True)
class ImportanceConfig:
    w_s: float = 0.5
    w_r: float = 0.5
    beta: tuple[float, ...] | None = None  # per-layer weights; None = uniform
    self_loops: bool = True  # count self-arcs in the attention sums and degrees

    def validate(self, n_layers: int | None = None) -> None:
        if self.w_s < 0 or self.w_r < 0 or self.w_s + self.w_r <= 0:
            raise ConfigError(f"need w_s, w_r >= 0 with a positive sum, got {self.w_s}, {self.w_r}")
        if self.beta is not None:
            b = np.asarray(self.beta, dtype=float)
            if np.any(b < 0) or b.sum() <= 0:
                raise ConfigError(f"layer weights must be non-negative with a positive sum, got {self.beta}")
            if n_layers is not None and len(b) != n_layers:
                raise ConfigError(f"got {len(b)} layer weights for {n_layers} layers")

    def layer_weights(self, n_layers: int) -> np.ndarray:
        self.validate(n_layers)
        b = np.ones(n_layers) if self.beta is None else np.asarray(self.beta, dtype=float)
        return b / b.sum()


@dataclass(frozen=True)
class SelectionSpec:
    strategy: str = "global"
    rho: float = 0.05

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if not 0 < self.rho < 1:
            raise ConfigError(f"retention rate must be in (0, 1), got {self.rho}")


def importance(trace: AttentionTrace, cfg: ImportanceConfig = ImportanceConfig()) -> np.ndarray:
    """Degree-normalized sender/receiver attention mass per graph node.

    For an arc ``j -> i`` the weight is what ``i`` pays to ``j``. A node's
    sender score sums weights on its outgoing arcs, its receiver score sums
    those on incoming arcs, over all arc sets, heads and (weighted) layers.
    Self-loops count in both sums and degrees unless ``cfg.self_loops`` is
    off, in which case a node without neighbors scores 0.
    """
    beta = cfg.layer_weights(trace.n_layers)
    n = trace.n
    send = np.zeros(n)
    recv = np.zeros(n)
    d_out = np.zeros(n)
    d_in = np.zeros(n)
    for s in range(len(trace.arc_keys)):
        keep = np.ones(len(trace.src[s]), bool) if cfg.self_loops else trace.src[s] != trace.dst[s]
        src, dst = trace.src[s][keep], trace.dst[s][keep]
        d_out += np.bincount(src, minlength=n)
        d_in += np.bincount(dst, minlength=n)
        for l in range(trace.n_layers):
            w = beta[l] * trace.weights[l][s][keep].sum(axis=1)
            send += np.bincount(src, weights=w, minlength=n)
            recv += np.bincount(dst, weights=w, minlength=n)
    I_s = send / np.sqrt(d_out + 1.0)
    I_r = recv / np.sqrt(d_in + 1.0)
    return cfg.w_s * I_s + cfg.w_r * I_r


def scores_for_dataset(node_scores: np.ndarray, node_ids: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Map graph-node scores onto ``candidates`` (dataset rows); absent rows score 0."""
    candidates = np.asarray(candidates, dtype=np.int64)
    out = np.zeros(len(candidates))
    pos = np.searchsorted(candidates, node_ids)
    ok = (pos < len(candidates)) & (candidates[np.minimum(pos, len(candidates) - 1)] == node_ids)
    out[pos[ok]] = node_scores[ok]
    missing = len(candidates) - int(ok.sum())
    if missing:
        logger.warning("%d instances are not in the graph and score 0", missing)
    return out


def _top(scores: np.ndarray, idx: np.ndarray, k: int) -> np.ndarray:
    """The ``k`` best of ``idx`` by score, ties to the smaller index."""
    order = np.lexsort((idx, -scores[idx]))
    return idx[order[:k]]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


def select_global(scores: np.ndarray, rho: float) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    N = len(scores)
    k = min(N, max(1, _round_half_up(rho * N)))
    return np.sort(_top(scores, np.arange(N), k))


def select_balanced(scores: np.ndarray, labels: np.ndarray, rho: float) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    quota = max(1, int(math.floor(rho * len(scores) / len(classes) + 1e-9)))
    picked = [_top(scores, np.flatnonzero(labels == c), quota) for c in classes]
    return np.sort(np.concatenate(picked))


def select_proportional(scores: np.ndarray, labels: np.ndarray, rho: float) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    picked = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        quota = max(1, int(math.floor(rho * len(members) + 1e-9)))
        picked.append(_top(scores, members, quota))
    return np.sort(np.concatenate(picked))


def select(scores: np.ndarray, labels: np.ndarray, spec: SelectionSpec) -> np.ndarray:
    """Positions (into ``scores``) chosen by ``spec``."""
    spec.validate()
    if spec.strategy == "global":
        return select_global(scores, spec.rho)
    if spec.strategy == "balanced":
        return select_balanced(scores, labels, spec.rho)
    return select_proportional(scores, labels, spec.rho)


def reduction_rate(n_selected: int, n_total: int) -> float:
    return 1.0 - n_selected / n_total


def selection_record(spec: SelectionSpec, selected_rows: np.ndarray, labels: np.ndarray, n_total: int,
                     class_names: list[str] | None = None) -> dict:
    selected_rows = np.sort(np.asarray(selected_rows, dtype=np.int64))
    counts = {}
    for c in np.unique(labels[selected_rows]):
        name = class_names[c] if class_names else str(int(c))
        counts[name] = int(np.sum(labels[selected_rows] == c))
    return {
        "strategy": spec.strategy,
        "rho": spec.rho,
        "selected": selected_rows.tolist(),
        "class_counts": counts,
        "n_total": int(n_total),
        "R": reduction_rate(len(selected_rows), n_total),
    }


def write_selection(path: str | Path, record: dict) -> None:
    Path(path).write_text(json.dumps(record, indent=2))


def write_reduced_csv(src_csv: str | Path, dst_csv: str | Path, rows: np.ndarray) -> int:
    """Copy the header and the chosen data rows (0-based, header excluded) verbatim."""
    keep = set(int(r) for r in rows)
    written = 0
    with open(src_csv, newline="") as fin, open(dst_csv, "w", newline="") as fout:
        reader = csv.reader(fin)
        writer = csv.writer(fout)
        writer.writerow(next(reader))
        for i, row in enumerate(reader):
            if i in keep:
                writer.writerow(row)
                written += 1
    return written


def config_dict(cfg: ImportanceConfig) -> dict:
    d = asdict(cfg)
    d["beta"] = None if cfg.beta is None else list(cfg.beta)
    return d
