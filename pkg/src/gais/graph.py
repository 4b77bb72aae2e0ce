"""Multi-view, multi-level instance graph with directed arc storage."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError


@dataclass
class ArcSet:
    view: int
    level: int
    src: np.ndarray
    dst: np.ndarray

    def __len__(self) -> int:
        return len(self.src)

    @property
    def key(self) -> tuple[int, int]:
        return (self.view, self.level)


def _canonical(src: np.ndarray, dst: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    keys = np.unique(src.astype(np.int64) * n + dst.astype(np.int64))
    return keys // n, keys % n


class MultiGraph:
    """Node set plus arc sets keyed by ``(view, level)``.

    Undirected edges are stored as two arcs. Self-arcs are never stored;
    attempts are counted in ``self_loops_rejected``. ``node_ids`` maps
    local node indices to rows of the originating dataset.
    """

    def __init__(self, n: int, node_ids=None, features=None, labels=None):
        self.n = int(n)
        self.node_ids = np.arange(n) if node_ids is None else np.asarray(node_ids, dtype=np.int64)
        self.features = features
        self.labels = labels
        self.self_loops_rejected = 0
        self._sets: dict[tuple[int, int], ArcSet] = {}

    def ensure_set(self, view: int, level: int) -> ArcSet:
        key = (int(view), int(level))
        if key not in self._sets:
            empty = np.empty(0, dtype=np.int64)
            self._sets[key] = ArcSet(key[0], key[1], empty, empty.copy())
        return self._sets[key]

    def add_edges(self, view: int, level: int, u, v) -> "MultiGraph":
        """Bulk-add undirected edges; duplicates and self-pairs are dropped."""
        u = np.asarray(u, dtype=np.int64).ravel()
        v = np.asarray(v, dtype=np.int64).ravel()
        if len(u) != len(v):
            raise ValueError("endpoint arrays differ in length")
        if len(u) and (min(u.min(), v.min()) < 0 or max(u.max(), v.max()) >= self.n):
            raise IndexError(f"edge endpoint out of range for n={self.n}")
        loops = u == v
        self.self_loops_rejected += int(loops.sum())
        u, v = u[~loops], v[~loops]
        arcs = self.ensure_set(view, level)
        src = np.concatenate([arcs.src, u, v])
        dst = np.concatenate([arcs.dst, v, u])
        arcs.src, arcs.dst = _canonical(src, dst, self.n)
        return self

    def add_undirected(self, view: int, level: int, u: int, v: int) -> "MultiGraph":
        return self.add_edges(view, level, [u], [v])

    @property
    def arc_sets(self) -> list[ArcSet]:
        return [self._sets[k] for k in sorted(self._sets)]

    def arc_set(self, view: int, level: int) -> ArcSet:
        return self._sets[(view, level)]

    @property
    def views(self) -> list[int]:
        return sorted({k[0] for k in self._sets})

    @property
    def levels(self) -> list[int]:
        return sorted({k[1] for k in self._sets})

    def num_arcs(self) -> int:
        return sum(len(a) for a in self._sets.values())

    def degree_profile(self) -> tuple[np.ndarray, np.ndarray]:
        return degree_profile(self)

    def subgraph_nodes(self, keep: np.ndarray) -> "MultiGraph":
        """Induced subgraph on local node indices ``keep`` (renumbered)."""
        keep = np.asarray(keep, dtype=np.int64)
        remap = np.full(self.n, -1, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        g = MultiGraph(
            len(keep),
            node_ids=self.node_ids[keep],
            features=None if self.features is None else self.features[keep],
            labels=None if self.labels is None else self.labels[keep],
        )
        for a in self.arc_sets:
            s, d = remap[a.src], remap[a.dst]
            ok = (s >= 0) & (d >= 0)
            arcs = g.ensure_set(a.view, a.level)
            arcs.src, arcs.dst = s[ok], d[ok]
        return g


def degree_profile(g: MultiGraph) -> tuple[np.ndarray, np.ndarray]:
    """Per-node (in, out) degree summed over every arc set."""
    deg_in = np.zeros(g.n, dtype=np.int64)
    deg_out = np.zeros(g.n, dtype=np.int64)
    for a in g.arc_sets:
        deg_out += np.bincount(a.src, minlength=g.n)
        deg_in += np.bincount(a.dst, minlength=g.n)
    return deg_in, deg_out


def write_graph(g: MultiGraph, path: str | Path) -> None:
    """Text format: ``n <n> sets <k>``, then per set ``set <view> <level> <count>`` and ``u v`` lines."""
    sets = g.arc_sets
    with open(path, "w") as fh:
        fh.write(f"n {g.n} sets {len(sets)}\n")
        for a in sets:
            fh.write(f"set {a.view} {a.level} {len(a)}\n")
            if len(a):
                np.savetxt(fh, np.column_stack([a.src, a.dst]), fmt="%d")


def read_graph(path: str | Path) -> MultiGraph:
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 4 or head[0] != "n" or head[2] != "sets":
            raise DataError(f"{path}: bad graph header {head}")
        g = MultiGraph(int(head[1]))
        for _ in range(int(head[3])):
            tag = fh.readline().split()
            if len(tag) != 4 or tag[0] != "set":
                raise DataError(f"{path}: bad set header {tag}")
            view, level, count = map(int, tag[1:])
            rows = [fh.readline() for _ in range(count)]
            arcs = g.ensure_set(view, level)
            if count:
                uv = np.array([r.split() for r in rows], dtype=np.int64)
                arcs.src, arcs.dst = _canonical(uv[:, 0], uv[:, 1], g.n)
    return g


def write_sidecar(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, default=_json_default))


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))
