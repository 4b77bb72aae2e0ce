"""Downstream classifiers, metrics, random baselines and the exact-KNN graph."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DataError
from .graph import MultiGraph
from .numerics.tensor import softmax_np

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------- classifiers


@dataclass
class LogReg:
    W: np.ndarray  # (d + 1, C), last row is the bias
    n_classes: int


def logreg_train(X: np.ndarray, y: np.ndarray, epochs: int = 500, lr: float = 0.5, l2: float = 1e-4,
                 n_classes: int | None = None) -> LogReg:
    """Multinomial logistic regression fit by full-batch gradient descent from zero."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise DataError("cannot fit on an empty training set")
    C = int(n_classes if n_classes is not None else y.max() + 1)
    if len(np.unique(y)) == 1:
        logger.warning("training set has a single class; the classifier will be constant")
    Xb = np.hstack([X, np.ones((len(X), 1))])
    W = np.zeros((Xb.shape[1], C))
    Y = np.zeros((len(y), C))
    Y[np.arange(len(y)), y] = 1.0
    reg = np.ones((Xb.shape[1], 1))
    reg[-1] = 0.0
    for _ in range(epochs):
        P = softmax_np(Xb @ W, axis=1)
        W -= lr * (Xb.T @ (P - Y) / len(y) + l2 * reg * W)
    return LogReg(W, C)


def logreg_predict(model: LogReg, X: np.ndarray) -> np.ndarray:
    Xb = np.hstack([np.asarray(X, dtype=np.float64), np.ones((len(X), 1))])
    return np.argmax(Xb @ model.W, axis=1)


def knn_predict(X_train: np.ndarray, y_train: np.ndarray, X_query: np.ndarray, k: int = 3,
                block: int = 2048) -> np.ndarray:
    """Euclidean k-NN majority vote; vote ties go to the smallest class index."""
    y_train = np.asarray(y_train, dtype=np.int64)
    k = min(k, len(y_train))
    C = int(y_train.max()) + 1
    out = np.empty(len(X_query), dtype=np.int64)
    for r0 in range(0, len(X_query), block):
        D = cdist(X_query[r0 : r0 + block], X_train)
        nn = np.argsort(D, axis=1, kind="stable")[:, :k]
        votes = np.zeros((len(D), C), dtype=np.int64)
        np.add.at(votes, (np.repeat(np.arange(len(D)), k), y_train[nn].ravel()), 1)
        out[r0 : r0 + block] = np.argmax(votes, axis=1)
    return out


def fit_predict(model: str, X_train, y_train, X_query, n_classes: int | None = None) -> np.ndarray:
    if model == "logreg":
        return logreg_predict(logreg_train(X_train, y_train, n_classes=n_classes), X_query)
    if model == "knn":
        return knn_predict(X_train, y_train, X_query)
    raise ValueError(f"unknown downstream model {model!r}")


# ---------------------------------------------------------------- metrics


def classification_metrics(y_true: np.ndarray, y_pred: np.ndarray) -> tuple[float, float, float, float]:
    """Accuracy and macro precision/recall/F1 over the classes present in ``y_true``."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) == 0 or len(y_true) != len(y_pred):
        raise DataError("need equally long, non-empty label vectors")
    ac = float(np.mean(y_true == y_pred))
    prs, res, f1s = [], [], []
    for c in np.unique(y_true):
        tp = np.sum((y_pred == c) & (y_true == c))
        n_pred = np.sum(y_pred == c)
        n_true = np.sum(y_true == c)
        pr = tp / n_pred if n_pred else 0.0
        re = tp / n_true
        f1 = 2 * pr * re / (pr + re) if pr + re > 0 else 0.0
        prs.append(pr)
        res.append(re)
        f1s.append(f1)
    return ac, float(np.mean(prs)), float(np.mean(res)), float(np.mean(f1s))


def effectiveness(ac: float, f1: float, r: float) -> tuple[float, float]:
    return ac * r, f1 * r


@dataclass
class MetricsReport:
    AC: float
    PR: float
    RE: float
    F1: float
    R: float
    E: float = field(init=False)
    E_F1: float = field(init=False)
    n_selected: int = 0
    n_total: int = 0

    def __post_init__(self):
        self.E, self.E_F1 = effectiveness(self.AC, self.F1, self.R)

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_selected: int, n_total: int) -> "MetricsReport":
        ac, pr, re, f1 = classification_metrics(y_true, y_pred)
        return cls(ac, pr, re, f1, 1.0 - n_selected / n_total, n_selected=n_selected, n_total=n_total)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class Timings:
    """Stage wall-clock seconds: graph construction, training, selection, downstream learning."""

    GCT: float = 0.0
    GTT: float = 0.0
    IST: float = 0.0
    MLT: float = 0.0

    def to_json(self) -> dict:
        return asdict(self)


class StageTimer:
    """Context manager adding elapsed time to one field of a :class:`Timings`."""

    def __init__(self, timings: Timings, stage: str):
        if stage not in ("GCT", "GTT", "IST", "MLT"):
            raise ValueError(f"unknown stage {stage!r}")
        self.timings, self.stage = timings, stage

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        setattr(self.timings, self.stage, getattr(self.timings, self.stage) + time.perf_counter() - self.t0)
        return False


# ---------------------------------------------------------------- baselines


def random_baseline(y: np.ndarray, train_idx: np.ndarray, rho: float | None = None, seed: int = 0,
                    size: int | None = None) -> np.ndarray:
    """Stratified random subset of the training rows, at least one per class.

    The subset size is ``round(rho * N)`` unless ``size`` is given (to match
    another method's selection count exactly).
    """
    train_idx = np.asarray(train_idx, dtype=np.int64)
    N = len(train_idx)
    if size is None:
        if rho is None or not 0 < rho < 1:
            raise ValueError("need rho in (0, 1) or an explicit size")
        size = int(math.floor(rho * N + 0.5))
    rng = np.random.default_rng([seed, 0x5244])
    labels = y[train_idx]
    classes, counts = np.unique(labels, return_counts=True)
    quotas = size * counts / N
    alloc = np.floor(quotas + 1e-9).astype(np.int64)
    extra = size - int(alloc.sum())
    if extra > 0:
        order = np.lexsort((np.arange(len(classes)), -(quotas - alloc)))
        alloc[order[:extra]] += 1
    alloc = np.minimum(np.maximum(alloc, 1), counts)
    picked = []
    for c, k in zip(classes, alloc):
        pool = train_idx[labels == c]
        picked.append(pool[rng.permutation(len(pool))[:k]])
    return np.sort(np.concatenate(picked))


def exact_knn_graph(X: np.ndarray, k: int = 10, block: int | None = None) -> tuple[MultiGraph, float]:
    """Brute-force Euclidean k-NN graph (symmetrized) and its construction time.

    Rows are processed in blocks; by default a block's distance matrix holds
    about 16M entries.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if not 0 < k < n:
        raise ValueError(f"need 0 < k < n, got k={k}, n={n}")
    if block is None:
        block = max(1, min(n, (1 << 24) // n))
    t0 = time.perf_counter()
    sq = np.einsum("ij,ij->i", X, X)
    nbrs = np.empty((n, k), dtype=np.int64)
    for r0 in range(0, n, block):
        rows = np.arange(r0, min(n, r0 + block))
        D = sq[rows, None] - 2.0 * (X[rows] @ X.T) + sq[None, :]
        D[np.arange(len(rows)), rows] = np.inf
        nbrs[rows] = np.argpartition(D, k - 1, axis=1)[:, :k]
    g = MultiGraph(n, features=X)
    g.add_edges(0, 0, np.repeat(np.arange(n), k), nbrs.ravel())
    return g, time.perf_counter() - t0
