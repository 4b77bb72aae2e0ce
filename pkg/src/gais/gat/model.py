"""Enhanced GAT model: parameters, forward pass and attention traces."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..graph import MultiGraph
from ..numerics import tensor as T
from ..numerics.tensor import Tensor
from . import layers as Lyr


@dataclass(frozen=True)
class NystromConfig:
    enabled: bool = False
    landmarks: int = 64
    degree_ratio: float = 0.5


@dataclass(frozen=True)
class GatConfig:
    layers: int = 2
    heads: int = 4
    hidden: int = 64
    dropout: float = 0.0
    diversity_r: float = 0.1
    amplify: bool = True
    diversity: bool = True
    nystrom: NystromConfig = field(default_factory=NystromConfig)
    self_loops: bool = True
    standardize: bool = True

    def validate(self) -> None:
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.heads < 1 or self.hidden < 1:
            raise ConfigError("heads and hidden must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.nystrom.enabled:
            if not 0 < self.nystrom.degree_ratio <= 1:
                raise ConfigError(f"degree_ratio must be in (0, 1], got {self.nystrom.degree_ratio}")
            if self.nystrom.landmarks < 1:
                raise ConfigError("nystrom landmarks must be >= 1")
            if self.layers < 2:
                raise ConfigError("cross-level attention needs at least 2 layers (it feeds the output layer)")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "GatConfig":
        d = dict(d)
        d["nystrom"] = NystromConfig(**d.get("nystrom", {}))
        return cls(**d)


@dataclass
class AttentionTrace:
    """Effective attention per layer and arc set: ``weights[l][s]`` is (E_s, H)."""

    arc_keys: list[tuple[int, int]]
    src: list[np.ndarray]
    dst: list[np.ndarray]
    weights: list[list[np.ndarray]]
    n: int

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def row_sums(self, layer: int, s: int) -> np.ndarray:
        w = self.weights[layer][s]
        out = np.zeros((self.n, w.shape[1]))
        np.add.at(out, self.dst[s], w)
        return out

    def write(self, stem: str | Path) -> None:
        """Binary records (src, dst, view, level, layer, head, weight) + JSON manifest."""
        stem = Path(stem)
        dtype = np.dtype([("src", "<i8"), ("dst", "<i8"), ("view", "<i8"), ("level", "<i8"),
                          ("layer", "<i8"), ("head", "<i8"), ("weight", "<f8")])
        chunks = []
        for l, per_set in enumerate(self.weights):
            for s, w in enumerate(per_set):
                E, H = w.shape
                rec = np.empty(E * H, dtype=dtype)
                rec["src"] = np.repeat(self.src[s], H)
                rec["dst"] = np.repeat(self.dst[s], H)
                rec["view"], rec["level"] = self.arc_keys[s]
                rec["layer"] = l
                rec["head"] = np.tile(np.arange(H), E)
                rec["weight"] = w.ravel()
                chunks.append(rec)
        data = np.concatenate(chunks) if chunks else np.empty(0, dtype=dtype)
        data.tofile(stem.with_suffix(".bin"))
        manifest = {
            "n": self.n,
            "layers": self.n_layers,
            "arc_sets": [list(k) for k in self.arc_keys],
            "records": int(len(data)),
            "fields": [[name, str(dtype[name])] for name in dtype.names],
        }
        stem.with_suffix(".json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def read(cls, stem: str | Path) -> "AttentionTrace":
        stem = Path(stem)
        manifest = json.loads(stem.with_suffix(".json").read_text())
        dtype = np.dtype([(name, t) for name, t in manifest["fields"]])
        data = np.fromfile(stem.with_suffix(".bin"), dtype=dtype)
        keys = [tuple(k) for k in manifest["arc_sets"]]
        src, dst = [], []
        weights = [[None] * len(keys) for _ in range(manifest["layers"])]
        for s, (v, m) in enumerate(keys):
            sel = data[(data["view"] == v) & (data["level"] == m)]
            first = sel[(sel["layer"] == 0) & (sel["head"] == 0)]
            src.append(first["src"].copy())
            dst.append(first["dst"].copy())
            for l in range(manifest["layers"]):
                rows = sel[sel["layer"] == l]
                H = int(rows["head"].max()) + 1 if len(rows) else 1
                weights[l][s] = rows["weight"].reshape(-1, H).copy()
        return cls(keys, src, dst, weights, manifest["n"])


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class GatModel:
    """Stack of attention layers over a (multi-view, multi-level) graph.

    Projections are affine (the last row of each ``W`` is a bias).
    Parameter names: ``l{i}.W.v{view}``, ``l{i}.a_src.v{view}.m{level}``,
    ``l{i}.gamma``, ``l{i}.lambda`` and ``nys.*`` for cross-level attention.
    """

    def __init__(self, cfg: GatConfig, graph: MultiGraph, n_features: int, n_classes: int, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.n_classes = int(n_classes)
        self.arcs = Lyr.prepare_arcs(graph, cfg.self_loops)
        self.n = graph.n
        self.views = sorted({a.view for a in self.arcs})
        self.by_view = [[a for a in self.arcs if a.view == v] for v in self.views]
        rng = np.random.default_rng([seed, 0x4741])
        self.params = self._init_params(rng, n_features)
        self.input_stats = None
        if cfg.standardize and graph.features is not None:
            F = np.asarray(graph.features, dtype=np.float64)
            sd = F.std(axis=0)
            self.input_stats = (F.mean(axis=0), np.where(sd > 0, sd, 1.0))
        self.landmarks = None
        if cfg.nystrom.enabled:
            deg = np.zeros(self.n)
            for a in self.arcs:
                deg += np.bincount(a.src, minlength=self.n) + np.bincount(a.dst, minlength=self.n)
            self.landmarks = Lyr.select_landmarks(deg, cfg.nystrom.landmarks, cfg.nystrom.degree_ratio, rng)

    def _standardize(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.input_stats is None:
            return X
        mu, sd = self.input_stats
        return (X - mu) / sd

    def _layer_dims(self, l: int, d_in: int) -> tuple[int, int]:
        H, F = self.cfg.heads, self.cfg.hidden
        fan_in = d_in if l == 0 else H * F
        out = self.n_classes if l == self.cfg.layers - 1 else F
        return fan_in, out

    def _init_params(self, rng, d_in: int) -> dict[str, np.ndarray]:
        cfg = self.cfg
        H = cfg.heads
        p = {}
        for l in range(cfg.layers):
            fan_in, F = self._layer_dims(l, d_in)
            for vi, view_arcs in zip(self.views, self.by_view):
                # last row is the bias (inputs get a constant-1 column)
                W = _glorot(rng, (fan_in + 1, H * F), fan_in, H * F)
                W[-1] = 0.0
                p[f"l{l}.W.v{vi}"] = W
                for a in view_arcs:
                    p[f"l{l}.a_src.v{vi}.m{a.level}"] = _glorot(rng, (H, F), F, 1)
                    p[f"l{l}.a_dst.v{vi}.m{a.level}"] = _glorot(rng, (H, F), F, 1)
            if cfg.amplify:
                p[f"l{l}.gamma"] = np.zeros(H)
            if cfg.diversity:
                r = cfg.diversity_r
                p[f"l{l}.lambda"] = rng.uniform(0.5 * r, r, size=H)
        if cfg.nystrom.enabled:
            D = H * cfg.hidden
            S = len(self.arcs)
            for name in ("q", "k", "v"):
                p[f"nys.W{name}"] = _glorot(rng, (S * D, D), S * D, D)
            p["nys.Wg"] = rng.normal(0.0, 0.01, size=(2 * D, D))
            p["nys.bg"] = np.ones(D)
        return p

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def forward(self, X: np.ndarray, tensors: dict[str, Tensor] | None = None,
                train: bool = False, rng: np.random.Generator | None = None):
        """Return ``(logits, alphas)``; ``alphas[l]`` lists (E, H) tensors per arc set."""
        cfg = self.cfg
        P = tensors if tensors is not None else {k: Tensor(v) for k, v in self.params.items()}
        h = Tensor(self._standardize(X))
        all_alphas = []
        for l in range(cfg.layers):
            final = l == cfg.layers - 1
            if train and cfg.dropout > 0:
                keep = (rng.random(h.shape) >= cfg.dropout) / (1.0 - cfg.dropout)
                h = h * keep
            if final and self.landmarks is not None:
                h = Lyr.gate(h, nys_out, P["nys.Wg"], P["nys.bg"])
            h = T.concat([h, Tensor(np.ones((self.n, 1)))], axis=1)
            Ws = [P[f"l{l}.W.v{v}"] for v in self.views]
            # |lambda| keeps adjusted attention non-negative
            lam = T.abs_(P[f"l{l}.lambda"]) if f"l{l}.lambda" in P else None
            att = [[(P[f"l{l}.a_src.v{v}.m{a.level}"], P[f"l{l}.a_dst.v{v}.m{a.level}"]) for a in va]
                   for v, va in zip(self.views, self.by_view)]
            h, alphas, per_level = Lyr.multi_view_forward(
                h, Ws, att, self.by_view, cfg.heads,
                gamma=P.get(f"l{l}.gamma"), lam=lam,
                activation=Lyr.identity if final else T.elu, final=final,
            )
            all_alphas.append(alphas)
            if l == cfg.layers - 2 and self.landmarks is not None:
                flat = [T.reshape(x, (self.n, -1)) for x in per_level]
                levels = T.concat(flat, axis=1) if len(flat) > 1 else flat[0]
                nys_out = Lyr.nystrom_cross(levels, P["nys.Wq"], P["nys.Wk"], P["nys.Wv"],
                                            self.landmarks, cfg.heads)
        return h, all_alphas

    def trace(self, X: np.ndarray) -> AttentionTrace:
        _, alphas = self.forward(X)
        return AttentionTrace(
            arc_keys=[(a.view, a.level) for a in self.by_view_flat()],
            src=[a.src for a in self.by_view_flat()],
            dst=[a.dst for a in self.by_view_flat()],
            weights=[[a.data.copy() for a in layer] for layer in alphas],
            n=self.n,
        )

    def by_view_flat(self):
        return [a for va in self.by_view for a in va]

    def predict(self, X: np.ndarray) -> np.ndarray:
        logits, _ = self.forward(X)
        return np.argmax(logits.data, axis=1)
