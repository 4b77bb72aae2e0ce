"""Functional GAT building blocks on top of the autodiff engine.

Arc arrays are always sorted by destination; attention for arc ``a`` is the
weight destination ``dst[a]`` gives to the message from ``src[a]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..graph import MultiGraph
from ..numerics import tensor as T
from ..numerics.tensor import Segments, Tensor

DIVERSITY_EPS = 1e-8


@dataclass(frozen=True)
class Arcs:
    """One arc set ready for attention: self-loops added, sorted by (dst, src)."""

    view: int
    level: int
    src: np.ndarray
    dst: np.ndarray
    seg: Segments

    def __len__(self) -> int:
        return len(self.src)


def prepare_arcs(g: MultiGraph, self_loops: bool = True) -> list[Arcs]:
    out = []
    sets = g.arc_sets or [None]
    for a in sets:
        src = np.empty(0, np.int64) if a is None else a.src
        dst = np.empty(0, np.int64) if a is None else a.dst
        if self_loops:
            loop = np.arange(g.n)
            src = np.concatenate([src, loop])
            dst = np.concatenate([dst, loop])
        order = np.lexsort((src, dst))
        src, dst = src[order], dst[order]
        view, level = (0, 0) if a is None else (a.view, a.level)
        out.append(Arcs(view, level, src, dst, Segments.from_sorted_ids(dst, g.n)))
    return out


def attention_logits(z: Tensor, a_src: Tensor, a_dst: Tensor, arcs: Arcs) -> Tensor:
    """LeakyReLU(a^T [z_dst || z_src]) per arc and head; ``z`` is (n, H, F)."""
    s_src = T.sum_(z * a_src, axis=-1)
    s_dst = T.sum_(z * a_dst, axis=-1)
    return T.leaky_relu(T.gather(s_src, arcs.src) + T.segment_expand(s_dst, arcs.seg))


def _renormalize(x: Tensor, seg: Segments) -> Tensor:
    return x / T.segment_expand(T.segment_sum(x, seg), seg)


def amplify_heads(alpha: Tensor, gamma: Tensor, seg: Segments) -> Tensor:
    """Scale head k by ``1 + sigmoid(gamma_k)`` and renormalize per neighborhood."""
    scaled = alpha * (1.0 + T.sigmoid(gamma))
    return _renormalize(scaled, seg)


def diversity_adjust(alpha: Tensor, lam: Tensor, seg: Segments, eps: float = DIVERSITY_EPS) -> Tensor:
    """Add ``lambda_k * |alpha - mean| / (mean + eps)`` then renormalize."""
    mean_e = T.segment_expand(T.segment_mean(alpha, seg), seg)
    delta = T.abs_(alpha - mean_e) / (mean_e + eps)
    return _renormalize(alpha + lam * delta, seg)


def effective_attention(
    z: Tensor, a_src: Tensor, a_dst: Tensor, arcs: Arcs, gamma: Tensor | None, lam: Tensor | None
) -> Tensor:
    """softmax -> amplification -> diversity, each renormalized."""
    alpha = T.segment_softmax(attention_logits(z, a_src, a_dst, arcs), arcs.seg)
    if gamma is not None:
        alpha = amplify_heads(alpha, gamma, arcs.seg)
    if lam is not None:
        alpha = diversity_adjust(alpha, lam, arcs.seg)
    return alpha


def project(h: Tensor, W: Tensor, heads: int) -> Tensor:
    z = h @ W
    return T.reshape(z, (h.shape[0], heads, W.shape[1] // heads))


def combine_heads(x: Tensor, final: bool) -> Tensor:
    """Hidden layers concatenate heads, the output layer averages them."""
    if final:
        return T.mean(x, axis=1)
    n, H, F = x.shape
    return T.reshape(x, (n, H * F))


def identity(x: Tensor) -> Tensor:
    return x


def gat_layer(h, W, a_src, a_dst, arcs: Arcs, heads: int, gamma=None, lam=None, activation=T.elu, final=False):
    """One multi-head attention layer over a single arc set.

    Returns the combined output and the effective (E, H) attention.
    """
    z = project(h, W, heads)
    alpha = effective_attention(z, a_src, a_dst, arcs, gamma, lam)
    out = activation(T.attend(alpha, z, arcs.src, arcs.seg))
    return combine_heads(out, final), alpha


def multi_level_forward(h, W, att: list[tuple[Tensor, Tensor]], arcs: list[Arcs], heads: int,
                        gamma=None, lam=None, activation=T.elu, final=False):
    """Shared projection, one attention per level, mean of activated level outputs.

    Returns ``(output, alphas, per_level)`` where ``per_level`` holds each
    level's activated (n, H, F) aggregation before the mean.
    """
    z = project(h, W, heads)
    alphas, per_level = [], []
    for (a_src, a_dst), arc in zip(att, arcs):
        alpha = effective_attention(z, a_src, a_dst, arc, gamma, lam)
        alphas.append(alpha)
        per_level.append(activation(T.attend(alpha, z, arc.src, arc.seg)))
    acc = per_level[0]
    for x in per_level[1:]:
        acc = acc + x
    out = acc * (1.0 / len(per_level)) if len(per_level) > 1 else acc
    return combine_heads(out, final), alphas, per_level


def multi_view_forward(h, Ws: list[Tensor], att: list[list[tuple[Tensor, Tensor]]], arcs: list[list[Arcs]],
                       heads: int, gamma=None, lam=None, activation=T.elu, final=False):
    """Per-view projection; inside a view levels are summed before the activation,
    then views are averaged. A single view falls back to :func:`multi_level_forward`.
    """
    if len(Ws) == 1:
        return multi_level_forward(h, Ws[0], att[0], arcs[0], heads, gamma, lam, activation, final)
    alphas, per_level, view_out = [], [], []
    for W, view_att, view_arcs in zip(Ws, att, arcs):
        z = project(h, W, heads)
        acc = None
        for (a_src, a_dst), arc in zip(view_att, view_arcs):
            alpha = effective_attention(z, a_src, a_dst, arc, gamma, lam)
            alphas.append(alpha)
            agg = T.attend(alpha, z, arc.src, arc.seg)
            per_level.append(activation(agg))
            acc = agg if acc is None else acc + agg
        view_out.append(activation(acc))
    out = view_out[0]
    for x in view_out[1:]:
        out = out + x
    out = out * (1.0 / len(view_out))
    return combine_heads(out, final), alphas, per_level


def select_landmarks(total_degree: np.ndarray, m: int, degree_ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Top ``ceil(degree_ratio * m)`` nodes by degree plus uniform random others.

    ``m`` is clamped to the node count. Returned indices are sorted.
    """
    n = len(total_degree)
    m = min(m, n)
    n_deg = min(m, int(math.ceil(degree_ratio * m - 1e-12)))
    by_degree = np.lexsort((np.arange(n), -np.asarray(total_degree)))
    top = by_degree[:n_deg]
    rest = np.setdiff1d(np.arange(n), top)
    extra = rng.choice(rest, size=m - n_deg, replace=False) if m > n_deg else np.empty(0, np.int64)
    return np.sort(np.concatenate([top, extra]).astype(np.int64))


def nystrom_cross(levels: Tensor, Wq: Tensor, Wk: Tensor, Wv: Tensor, landmarks: np.ndarray, heads: int) -> Tensor:
    """Landmark attention ``softmax(Q K_L^T / sqrt(d_head)) V_L`` per head.

    ``levels`` is (n, S*D): the per-level embeddings of each node concatenated.
    """
    n = levels.shape[0]
    d_head = Wq.shape[1] // heads

    def split(x, rows):
        return T.transpose(T.reshape(x, (rows, heads, d_head)), (1, 0, 2))

    lm = T.gather(levels, landmarks)
    q = split(levels @ Wq, n)
    k = split(lm @ Wk, len(landmarks))
    v = split(lm @ Wv, len(landmarks))
    scores = T.matmul(q, T.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(d_head))
    out = T.matmul(T.softmax(scores, axis=-1), v)
    return T.reshape(T.transpose(out, (1, 0, 2)), (n, heads * d_head))


def gate(h: Tensor, h_tilde: Tensor, Wg: Tensor, bg: Tensor) -> Tensor:
    """``g * h + (1 - g) * h_tilde`` with ``g = sigmoid(Wg [h || h_tilde] + b)``."""
    g = T.sigmoid(T.concat([h, h_tilde], axis=1) @ Wg + bg)
    return g * h + (1.0 - g) * h_tilde
