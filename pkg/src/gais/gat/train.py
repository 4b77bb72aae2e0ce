"""Full-batch training with Adam, plateau scheduling and early stopping."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..data import stratified_split
from ..errors import ConfigError, NumericError
from ..graph import MultiGraph
from ..numerics import tensor as T
from ..numerics.optim import AdamState, PlateauScheduler, adam_step
from ..numerics.tensor import Tensor, backward
from .model import AttentionTrace, GatConfig, GatModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-3
    weight_decay: float = 5e-4
    max_iters: int = 500
    patience: int = 30
    sched_factor: float = 0.75
    sched_patience: int = 25
    min_lr: float = 1e-5
    val_fraction: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.lr <= 0 or self.max_iters < 1 or self.patience < 1:
            raise ConfigError("lr must be > 0, max_iters and patience >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class EarlyStopping:
    """Stop once ``patience`` consecutive evaluations fail to improve on the best."""

    patience: int = 30
    threshold: float = 1e-8
    best: float = math.inf
    best_iter: int = 0
    wait: int = 0

    def step(self, metric: float, it: int) -> tuple[bool, bool]:
        """Returns ``(improved, stop)``."""
        if metric < self.best - self.threshold:
            self.best, self.best_iter, self.wait = metric, it, 0
            return True, False
        self.wait += 1
        return False, self.wait >= self.patience


@dataclass
class FitResult:
    history: list[dict] = field(default_factory=list)
    best_iter: int = 0
    best_metric: float = math.inf
    stopped_early: bool = False
    iterations: int = 0


def fit_loop(
    step_fn: Callable[[int, float], tuple[float, float]],
    cfg: TrainConfig,
    on_improve: Callable[[int], None] | None = None,
) -> FitResult:
    """Drive ``step_fn(it, lr) -> (train_loss, val_loss)`` under the protocol.

    ``val_loss`` feeds both the scheduler and early stopping; ``on_improve``
    is called whenever a new best is recorded (for snapshotting parameters).
    """
    sched = PlateauScheduler(lr=cfg.lr, factor=cfg.sched_factor, patience=cfg.sched_patience, min_lr=cfg.min_lr)
    stopper = EarlyStopping(patience=cfg.patience)
    res = FitResult()
    lr = cfg.lr
    for it in range(1, cfg.max_iters + 1):
        train_loss, val_loss = step_fn(it, lr)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise NumericError(f"loss diverged at iteration {it} (train={train_loss}, val={val_loss}); try a lower lr")
        res.history.append({"iter": it, "train_loss": train_loss, "val_loss": val_loss, "lr": lr})
        improved, stop = stopper.step(val_loss, it)
        if improved and on_improve is not None:
            on_improve(it)
        lr = sched.step(val_loss)
        res.iterations = it
        if stop:
            res.stopped_early = True
            break
    res.best_iter, res.best_metric = stopper.best_iter, stopper.best
    return res


def internal_split(labels: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Stratified (fit, holdout) node indices; falls back to no holdout on tiny graphs."""
    if fraction <= 0:
        idx = np.arange(len(labels))
        return idx, idx
    masks = stratified_split(labels, (1.0 - fraction, fraction, 0.0), seed=seed)
    if len(masks.valid) == 0:
        idx = np.arange(len(labels))
        return idx, idx
    return masks.train, masks.valid


@dataclass
class TrainResult:
    model: GatModel
    trace: AttentionTrace
    fit: FitResult
    gtt_seconds: float
    val_accuracy: float

    def write_log(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for row in self.fit.history:
                fh.write(json.dumps(row) + "\n")


def train(
    graph: MultiGraph, gat_cfg: GatConfig, cfg: TrainConfig = TrainConfig(), n_classes: int | None = None
) -> TrainResult:
    """Fit a :class:`GatModel` on the graph's node labels and return its trace."""
    cfg.validate()
    if graph.features is None or graph.labels is None:
        raise ConfigError("graph nodes must carry features and labels")
    t0 = time.perf_counter()
    X = np.asarray(graph.features, dtype=np.float64)
    y = np.asarray(graph.labels, dtype=np.int64)
    n_classes = int(n_classes if n_classes is not None else y.max() + 1)
    model = GatModel(gat_cfg, graph, X.shape[1], n_classes, seed=cfg.seed)
    fit_rows, val_rows = internal_split(y, cfg.val_fraction, cfg.seed)
    adam = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    drop_rng = np.random.default_rng([cfg.seed, 0x44])
    best = {k: v.copy() for k, v in model.params.items()}
    shared_pass = gat_cfg.dropout == 0

    def step(it: int, lr: float) -> tuple[float, float]:
        nonlocal pending
        tensors = {k: Tensor(v, requires_grad=True) for k, v in model.params.items()}
        logits, _ = model.forward(X, tensors, train=True, rng=drop_rng)
        loss = T.cross_entropy(logits, y, fit_rows)
        if shared_pass:
            val = float(T.cross_entropy(logits, y, val_rows).data)
        else:
            val = float(T.cross_entropy(model.forward(X)[0], y, val_rows).data)
        # the validation loss belongs to the parameters *before* this update
        pending = {k: v.copy() for k, v in model.params.items()}
        train_loss = float(loss.data)
        if math.isfinite(train_loss):
            backward(loss)
            adam.lr = lr
            adam_step(model.params, {k: t.grad for k, t in tensors.items() if t.grad is not None}, adam)
        return train_loss, val

    pending: dict = {}

    def snapshot(it: int) -> None:
        best.clear()
        best.update(pending)

    fit = fit_loop(step, cfg, on_improve=snapshot)
    model.params = best
    logits, _ = model.forward(X)
    val_acc = float(np.mean(np.argmax(logits.data[val_rows], axis=1) == y[val_rows]))
    trace = model.trace(X)
    gtt = time.perf_counter() - t0
    logger.info("trained %d iters (best %d, val loss %.4f, val acc %.3f) in %.2fs",
                fit.iterations, fit.best_iter, fit.best_metric, val_acc, gtt)
    return TrainResult(model, trace, fit, gtt, val_acc)
