"""Graph construction from stratified mini-batches with percentile-thresholded similarity."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError
from .graph import MultiGraph

logger = logging.getLogger(__name__)

METRICS = ("euclidean", "cosine", "manhattan")


@dataclass(frozen=True)
class DmParams:
    K: int = 3
    w_max: int = 7000
    f_original: float = 0.4
    metric: str = "euclidean"
    p: float = 95.0
    seed: int = 0

    def validate(self, n_classes: int = 1) -> None:
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if not 0 < self.f_original <= 1:
            raise ConfigError(f"f_original must be in (0, 1], got {self.f_original}")
        if not 0 < self.p < 100:
            raise ConfigError(f"percentile p must be in (0, 100), got {self.p}")
        if self.w_max < n_classes:
            raise ConfigError(f"w_max={self.w_max} is smaller than the class count {n_classes}")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}; expected one of {METRICS}")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MiniBatch:
    indices: np.ndarray
    class_counts: dict[int, int]


def sampling_fraction(n: int, params: DmParams) -> float:
    return min(params.w_max / n, params.f_original)


def batch_target(n: int, params: DmParams) -> int:
    """Requested batch size ``round(f_k * n)``, never above ``w_max``."""
    return min(int(math.floor(sampling_fraction(n, params) * n + 0.5)), params.w_max)


def _class_quotas(counts: np.ndarray, size: int) -> np.ndarray:
    total = counts.sum()
    quotas = size * counts / total
    alloc = np.floor(quotas + 1e-9).astype(np.int64)
    short = size - int(alloc.sum())
    if short > 0:
        order = np.lexsort((np.arange(len(counts)), -(quotas - alloc)))
        alloc[order[:short]] += 1
    # every class still present contributes at least one instance
    missing = (alloc == 0) & (counts > 0)
    while missing.any():
        c = int(np.flatnonzero(missing)[0])
        alloc[c] = 1
        donor = int(np.argmax(alloc))
        if alloc.sum() > size and alloc[donor] > 1:
            alloc[donor] -= 1
        missing = (alloc == 0) & (counts > 0)
    return np.minimum(alloc, counts)


def sample_minibatch(
    y: np.ndarray, remaining: np.ndarray, size: int, rng: np.random.Generator
) -> MiniBatch:
    """Stratified draw without replacement of ``size`` rows from ``remaining``."""
    remaining = np.asarray(remaining, dtype=np.int64)
    if size >= len(remaining):
        labels, counts = np.unique(y[remaining], return_counts=True)
        return MiniBatch(np.sort(remaining), dict(zip(labels.tolist(), counts.tolist())))
    labels, counts = np.unique(y[remaining], return_counts=True)
    alloc = _class_quotas(counts, size)
    picked = []
    for c, k in zip(labels, alloc):
        pool = remaining[y[remaining] == c]
        picked.append(pool[rng.permutation(len(pool))[:k]])
    idx = np.sort(np.concatenate(picked))
    return MiniBatch(idx, {int(c): int(k) for c, k in zip(labels, alloc)})


def similarity(xu: np.ndarray, xv: np.ndarray, metric: str = "euclidean") -> float:
    """Pairwise similarity: ``1 - cosine distance`` or ``1 / (1 + d)``."""
    xu = np.asarray(xu, dtype=np.float64)
    xv = np.asarray(xv, dtype=np.float64)
    if xu.shape != xv.shape:
        raise ValueError("vectors differ in length")
    return float(pairwise_similarity(xu[None], metric, xv[None])[0, 0])


def pairwise_similarity(Xa: np.ndarray, metric: str = "euclidean", Xb: np.ndarray | None = None) -> np.ndarray:
    Xb = Xa if Xb is None else Xb
    if metric == "cosine":
        def unit(M):
            norm = np.linalg.norm(M, axis=1, keepdims=True)
            return np.divide(M, norm, out=np.zeros_like(M), where=norm > 0)

        return unit(Xa) @ unit(Xb).T
    if metric == "euclidean":
        return 1.0 / (1.0 + cdist(Xa, Xb, "euclidean"))
    if metric == "manhattan":
        return 1.0 / (1.0 + cdist(Xa, Xb, "cityblock"))
    raise ConfigError(f"unknown metric {metric!r}")


def percentile_threshold(values: np.ndarray, p: float) -> float:
    """Linear-interpolated p-th percentile."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("need at least one similarity value")
    return float(np.percentile(values, p))


def _upper_values(S: np.ndarray) -> np.ndarray:
    b = S.shape[0]
    out = np.empty(b * (b - 1) // 2)
    pos = 0
    for i in range(b - 1):
        out[pos : pos + b - i - 1] = S[i, i + 1 :]
        pos += b - i - 1
    return out


def batch_edges(Xb: np.ndarray, metric: str, p: float, block: int = 1024) -> tuple[np.ndarray, np.ndarray, float]:
    """Pairs ``u < v`` (batch-local) whose similarity exceeds the batch percentile."""
    b = Xb.shape[0]
    if b < 2:
        return np.empty(0, np.int64), np.empty(0, np.int64), float("nan")
    S = pairwise_similarity(Xb, metric)
    tau = percentile_threshold(_upper_values(S), p)
    us, vs = [], []
    cols = np.arange(b)
    for r0 in range(0, b, block):
        rows = np.arange(r0, min(b, r0 + block))
        mask = (S[rows] > tau) & (cols[None, :] > rows[:, None])
        ru, cv = np.nonzero(mask)
        us.append(rows[ru])
        vs.append(cv)
    return np.concatenate(us), np.concatenate(vs), tau


def build_dm_graph(X: np.ndarray, y: np.ndarray, train_idx: np.ndarray, params: DmParams) -> tuple[MultiGraph, dict]:
    """Sample K stratified batches from the training rows and union their threshold graphs.

    Returns the single-view, single-level graph over every sampled row (local
    node order = ascending dataset row) and a report for the JSON sidecar.
    """
    n_classes = len(np.unique(y[train_idx]))
    params.validate(n_classes)
    t0 = time.perf_counter()
    rng = np.random.default_rng([params.seed, 0x444D])
    remaining = np.asarray(train_idx, dtype=np.int64)
    n = len(remaining)
    size = batch_target(n, params)
    batches = []
    for _ in range(params.K):
        if len(remaining) == 0:
            break
        mb = sample_minibatch(y, remaining, size, rng)
        batches.append(mb)
        remaining = np.setdiff1d(remaining, mb.indices, assume_unique=True)
    nodes = np.sort(np.concatenate([b.indices for b in batches]))
    g = MultiGraph(len(nodes), node_ids=nodes, features=X[nodes], labels=y[nodes])
    g.ensure_set(0, 0)
    report = {"params": params.to_json(), "batches": [], "leftover": int(len(remaining))}
    for k, mb in enumerate(batches):
        u, v, tau = batch_edges(X[mb.indices], params.metric, params.p)
        local = np.searchsorted(nodes, mb.indices)
        g.add_edges(0, 0, local[u], local[v])
        report["batches"].append(
            {"k": k, "size": int(len(mb.indices)), "tau": tau, "edges": int(len(u)),
             "class_counts": mb.class_counts, "indices": mb.indices.tolist()}
        )
    report["nodes"] = int(g.n)
    report["arcs"] = int(g.num_arcs())
    report["gct_seconds"] = time.perf_counter() - t0
    if len(remaining):
        logger.warning(
            "%d training instances were never sampled into a mini-batch; they cannot be selected",
            len(remaining),
        )
    return g, report
