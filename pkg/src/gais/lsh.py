"""Random-projection LSH graph construction: single-level, multi-level and multi-view.

Bucket keys are integer tuples: the base code (sign bits or quantized
projections) followed by one sign bit per adaptive split.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .graph import MultiGraph

FAMILIES = ("angular", "euclidean")
MAX_SPLIT_DEPTH = 10


@dataclass(frozen=True)
class LshParams:
    family: str = "angular"
    L: int = 5
    k: int = 4
    w: float = 0.25
    theta: int = 40
    gamma_merge: int = 5
    M: int = 2
    seed: int = 0
    center: bool = True

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown LSH family {self.family!r}; expected one of {FAMILIES}")
        if self.L < 1 or self.k < 1:
            raise ConfigError("L and k must be >= 1")
        if self.theta < 2 or self.gamma_merge < 2:
            raise ConfigError("theta and gamma_merge must be >= 2")
        if self.M < 1:
            raise ConfigError("level count M must be >= 1")
        if self.w <= 0:
            raise ConfigError("quantization width w must be positive")

    def to_json(self) -> dict:
        return asdict(self)


def level_params(params: LshParams, m: int) -> tuple[int, int, int]:
    """(tables, projections, split threshold) at level ``m``; ``m = 0`` is the base."""
    scale = 2**m
    return params.L * scale, params.k * scale, max(2, int(math.floor(params.theta / scale + 0.5)))


@dataclass
class HashTable:
    family: str
    P: np.ndarray
    b: np.ndarray | None
    w: float
    buckets: dict[tuple, np.ndarray]
    capped: set = field(default_factory=set)
    extensions: list[np.ndarray] = field(default_factory=list)
    view: int = 0
    level: int = 0

    def bucket_ids(self, n: int) -> np.ndarray:
        bid = np.full(n, -1, dtype=np.int64)
        for i, key in enumerate(sorted(self.buckets)):
            bid[self.buckets[key]] = i
        return bid


@dataclass
class LshIndex:
    tables: list[HashTable]
    n: int


def hash_angular(P: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Sign bits of ``P^T x`` (1 where the projection is >= 0). Works on one vector or rows."""
    return (np.asarray(X) @ P >= 0).astype(np.int64)


def hash_euclidean(P: np.ndarray, b: np.ndarray, w: float, X: np.ndarray) -> np.ndarray:
    return np.floor((np.asarray(X) @ P + b) / w).astype(np.int64)


def split_bucket(
    Z: np.ndarray,
    members: np.ndarray,
    key: tuple,
    theta: int,
    rng: np.random.Generator,
    depth: int = 0,
    extensions: list | None = None,
) -> list[tuple[tuple, np.ndarray, bool]]:
    """Recursively refine an over-full bucket with fresh sign projections.

    Returns ``(key, members, depth_capped)`` triples. Buckets of size
    ``<= theta`` come back untouched.
    """
    if len(members) <= theta:
        return [(key, members, False)]
    if depth >= MAX_SPLIT_DEPTH:
        return [(key, members, True)]
    d = Z.shape[1]
    p_new = rng.standard_normal(d) / math.sqrt(d)
    if extensions is not None:
        extensions.append(p_new)
    bits = (Z[members] @ p_new >= 0).astype(np.int64)
    out = []
    for bit in (0, 1):
        sub = members[bits == bit]
        if len(sub):
            out.extend(split_bucket(Z, sub, key + (bit,), theta, rng, depth + 1, extensions))
    return out


def _neighbors(key: tuple):
    for i, v in enumerate(key):
        for delta in (-1, 1):
            yield key[:i] + (v + delta,) + key[i + 1 :]


def merge_buckets(
    buckets: dict[tuple, np.ndarray], gamma_merge: int, capped: set | None = None
) -> tuple[dict[tuple, np.ndarray], set]:
    """One greedy pass, smallest buckets first.

    A bucket merges with the smallest unmerged bucket whose key is at L1
    distance 1 (Hamming distance for sign codes) when the combined size is
    below ``gamma_merge``. Each bucket takes part in at most one merge.
    """
    capped = set() if capped is None else set(capped)
    order = sorted(buckets, key=lambda k: (len(buckets[k]), k))
    used: set = set()
    out: dict[tuple, np.ndarray] = {}
    out_capped = set()
    for key in order:
        if key in used:
            continue
        used.add(key)
        size = len(buckets[key])
        best = None
        for nb in _neighbors(key):
            if nb in buckets and nb not in used and size + len(buckets[nb]) < gamma_merge:
                cand = (len(buckets[nb]), nb)
                if best is None or cand < best:
                    best = cand
        if best is None:
            out[key] = buckets[key]
            if key in capped:
                out_capped.add(key)
            continue
        other = best[1]
        used.add(other)
        other_size = len(buckets[other])
        if other_size == size:
            keep = min(key, other)
        else:
            keep = other if other_size > size else key
        out[keep] = np.sort(np.concatenate([buckets[key], buckets[other]]))
        if key in capped or other in capped:
            out_capped.add(keep)
    return out, out_capped


def _group_codes(codes: np.ndarray) -> dict[tuple, np.ndarray]:
    uniq, inv = np.unique(codes, axis=0, return_inverse=True)
    inv = inv.ravel()
    order = np.argsort(inv, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(np.bincount(inv, minlength=len(uniq)))])
    return {
        tuple(int(c) for c in uniq[i]): order[bounds[i] : bounds[i + 1]] for i in range(len(uniq))
    }


def build_table(
    Z: np.ndarray,
    family: str,
    k: int,
    w: float,
    theta: int,
    gamma_merge: int,
    rng: np.random.Generator,
) -> HashTable:
    d = Z.shape[1]
    P = rng.standard_normal((d, k)) / math.sqrt(k)
    if family == "angular":
        b = None
        codes = hash_angular(P, Z)
    else:
        b = rng.uniform(0.0, w, size=k)
        codes = hash_euclidean(P, b, w, Z)
    buckets = _group_codes(codes)
    table = HashTable(family, P, b, w, {})
    split: dict[tuple, np.ndarray] = {}
    capped = set()
    for key in sorted(buckets):
        for sub_key, members, cap in split_bucket(Z, buckets[key], key, theta, rng, extensions=table.extensions):
            split[sub_key] = members
            if cap:
                capped.add(sub_key)
    table.buckets, table.capped = merge_buckets(split, gamma_merge, capped)
    return table


def table_edges(table: HashTable, theta: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """All intra-bucket pairs; depth-capped buckets link each member to at most ``theta`` co-members."""
    us, vs = [], []
    for key in sorted(table.buckets):
        m = table.buckets[key]
        s = len(m)
        if s < 2:
            continue
        if key in table.capped and s - 1 > theta:
            src = np.repeat(m, theta)
            picks = np.array([rng.choice(s - 1, size=theta, replace=False) for _ in range(s)])
            pos = np.arange(s)[:, None]
            picks = picks + (picks >= pos)
            us.append(src)
            vs.append(m[picks.ravel()])
        else:
            iu, ju = np.triu_indices(s, 1)
            us.append(m[iu])
            vs.append(m[ju])
    if not us:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(us), np.concatenate(vs)


def _hash_space(X: np.ndarray, center: bool) -> np.ndarray:
    return X - X.mean(axis=0) if center else X


def _build_level(
    Z: np.ndarray, params: LshParams, view: int, m: int, seed: int
) -> tuple[list[HashTable], np.ndarray, np.ndarray]:
    L_m, k_m, theta_m = level_params(params, m)
    if k_m > 64 * Z.shape[1]:
        raise ConfigError(f"level {m} needs {k_m} projections for d={Z.shape[1]}; use fewer levels")
    tables, us, vs = [], [], []
    for t in range(L_m):
        rng = np.random.default_rng([seed, view, m, t])
        table = build_table(Z, params.family, k_m, params.w, theta_m, params.gamma_merge, rng)
        table.view, table.level = view, m
        u, v = table_edges(table, theta_m, rng)
        tables.append(table)
        us.append(u)
        vs.append(v)
    return tables, np.concatenate(us), np.concatenate(vs)


def _empty_graph(X, y, train_idx):
    nodes = np.sort(np.asarray(train_idx, dtype=np.int64))
    return nodes, MultiGraph(len(nodes), node_ids=nodes, features=X[nodes], labels=y[nodes])


def build_sl_graph(X, y, train_idx, params: LshParams) -> tuple[MultiGraph, LshIndex, dict]:
    """L tables with base parameters; one arc set tagged (0, 0)."""
    params.validate()
    t0 = time.perf_counter()
    nodes, g = _empty_graph(X, y, train_idx)
    Z = _hash_space(X[nodes], params.center)
    tables, u, v = _build_level(Z, params, 0, 0, params.seed)
    g.ensure_set(0, 0)
    g.add_edges(0, 0, u, v)
    report = _report(g, tables, params, t0)
    return g, LshIndex(tables, g.n), report


def _ml_into(g, Z, params: LshParams, view: int, M: int, seed: int, tables: list) -> None:
    for m in range(1, M + 1):
        level_tables, u, v = _build_level(Z, params, view, m, seed)
        tables.extend(level_tables)
        g.ensure_set(view, m - 1)
        g.add_edges(view, m - 1, u, v)


def build_ml_graph(X, y, train_idx, params: LshParams) -> tuple[MultiGraph, LshIndex, dict]:
    """Levels m = 1..M with L*2^m tables, k*2^m projections, theta/2^m threshold.

    Level m is stored as arc set (0, m - 1).
    """
    params.validate()
    t0 = time.perf_counter()
    nodes, g = _empty_graph(X, y, train_idx)
    Z = _hash_space(X[nodes], params.center)
    tables: list[HashTable] = []
    _ml_into(g, Z, params, 0, params.M, params.seed, tables)
    return g, LshIndex(tables, g.n), _report(g, tables, params, t0)


def build_mvml_graph(
    X, y, train_idx, views: list[LshParams], M: int, seed: int = 0
) -> tuple[MultiGraph, LshIndex, dict]:
    """One multi-level hierarchy per view; arc sets tagged (view, m - 1)."""
    if not views:
        raise ConfigError("need at least one view")
    t0 = time.perf_counter()
    nodes, g = _empty_graph(X, y, train_idx)
    tables: list[HashTable] = []
    for v, params in enumerate(views):
        params.validate()
        Z = _hash_space(X[nodes], params.center)
        _ml_into(g, Z, params, v, M, seed, tables)
    report = _report(g, tables, None, t0)
    report["views"] = [p.to_json() for p in views]
    report["M"] = M
    return g, LshIndex(tables, g.n), report


def _report(g, tables, params, t0) -> dict:
    return {
        "params": None if params is None else params.to_json(),
        "nodes": int(g.n),
        "arcs": int(g.num_arcs()),
        "tables": len(tables),
        "capped_buckets": int(sum(len(t.capped) for t in tables)),
        "arc_sets": [{"view": a.view, "level": a.level, "arcs": int(len(a))} for a in g.arc_sets],
        "gct_seconds": time.perf_counter() - t0,
    }


@dataclass(frozen=True)
class BucketQuality:
    separation: float
    purity: float
    recall_at_5: float
    pearson_rho: float
    mean_bucket_size: float

    def to_json(self) -> dict:
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()}


def _unit_rows(X):
    norm = np.linalg.norm(X, axis=1, keepdims=True)
    return np.divide(X, norm, out=np.zeros_like(X), where=norm > 0)


def bucket_quality(
    index: LshIndex,
    X: np.ndarray,
    y: np.ndarray,
    seed: int = 0,
    max_pairs: int = 100_000,
    n_queries: int = 500,
) -> BucketQuality:
    """Bucket diagnostics over every table in ``index``.

    ``X`` and ``y`` are indexed by graph-local node. Cosine similarities are
    taken on ``X`` as given.
    """
    n = index.n
    rng = np.random.default_rng([seed, 0x5142])
    sizes, majority = [], 0
    bids = []
    for t in index.tables:
        for m in t.buckets.values():
            sizes.append(len(m))
            majority += np.bincount(y[m]).max()
        bids.append(t.bucket_ids(n))
    bids = np.array(bids)
    sizes = np.array(sizes)
    purity = majority / sizes.sum()
    mean_size = float(sizes.mean())
    U = _unit_rows(np.asarray(X, dtype=np.float64))

    single = all(len(t.buckets) == 1 for t in index.tables)
    half = max_pairs // 2
    # intra-bucket pairs: random anchor, random co-member in a random table
    ti = rng.integers(0, len(index.tables), size=half)
    ai = rng.integers(0, n, size=half)
    intra_u, intra_v = [], []
    for t in np.unique(ti):
        sel = ai[ti == t]
        bid = bids[t]
        order = np.argsort(bid, kind="stable")
        counts = np.bincount(bid)
        starts = np.concatenate([[0], np.cumsum(counts)])
        b = bid[sel]
        ok = counts[b] > 1
        sel, b = sel[ok], b[ok]
        off = rng.integers(0, counts[b] - 1)
        pos_self = np.empty(n, dtype=np.int64)
        pos_self[order] = np.arange(n) - starts[bid[order]]
        off = off + (off >= pos_self[sel])
        intra_u.append(sel)
        intra_v.append(order[starts[b] + off])
    iu = np.concatenate(intra_u) if intra_u else np.empty(0, np.int64)
    iv = np.concatenate(intra_v) if intra_v else np.empty(0, np.int64)
    # inter-bucket pairs: uniform random pairs split by a random table
    tj = rng.integers(0, len(index.tables), size=half)
    pu = rng.integers(0, n, size=half)
    pv = rng.integers(0, n, size=half)
    keep = (pu != pv) & (bids[tj, pu] != bids[tj, pv])
    xu, xv = pu[keep], pv[keep]

    cos_intra = np.einsum("ij,ij->i", U[iu], U[iv])
    cos_inter = np.einsum("ij,ij->i", U[xu], U[xv])
    if single or len(cos_intra) == 0 or len(cos_inter) == 0 or cos_inter.mean() == 0:
        separation = float("nan")
    else:
        separation = float(cos_intra.mean() / cos_inter.mean())

    ru = np.concatenate([iu, pu[pu != pv]])
    rv = np.concatenate([iv, pv[pu != pv]])
    collisions = (bids[:, ru] == bids[:, rv]).sum(axis=0)
    cos_all = np.einsum("ij,ij->i", U[ru], U[rv])
    if collisions.std() == 0 or cos_all.std() == 0:
        rho = float("nan")
    else:
        rho = float(np.corrcoef(collisions, cos_all)[0, 1])

    q = rng.choice(n, size=min(n_queries, n), replace=False)
    kk = min(5, n - 1)
    if kk < 1:
        recall = float("nan")
    else:
        sims = U[q] @ U.T
        sims[np.arange(len(q)), q] = -np.inf
        nn = np.argpartition(-sims, kk - 1, axis=1)[:, :kk]
        shared = (bids[:, q][:, :, None] == bids[:, nn]).any(axis=0)
        recall = float(shared.mean())
    return BucketQuality(separation, float(purity), recall, rho, mean_size)
