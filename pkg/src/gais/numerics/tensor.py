"""Minimal reverse-mode differentiation over float64 numpy arrays.

Every op records its name; ``backward`` looks the name up in the VJP
registry, so a node whose op has no gradient rule fails loudly instead of
silently dropping gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from ..errors import NumericError, UnsupportedOpError

LEAKY_SLOPE = 0.2

_VJP: dict[str, Callable] = {}


def vjp_rule(name: str):
    def deco(fn):
        _VJP[name] = fn
        return fn

    return deco


class Tensor:
    __slots__ = ("data", "grad", "op", "parents", "ctx", "requires_grad")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, op=None, parents=(), ctx=None):
        if type(data) is not np.ndarray or data.dtype != np.float64:
            data = np.asarray(data, dtype=np.float64)
        self.data = data
        self.grad = None
        self.op = op
        self.parents = tuple(parents)
        self.ctx = ctx
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, data, parents: Sequence[Tensor], ctx=None) -> Tensor:
    for p in parents:
        if p.requires_grad:
            break
    else:
        return Tensor(data)
    return Tensor(data, requires_grad=True, op=op, parents=parents, ctx=ctx)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    if loss.data.size != 1:
        raise NumericError("backward needs a scalar loss")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.op is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        rule = _VJP.get(node.op)
        if rule is None:
            raise UnsupportedOpError(f"no gradient rule recorded for op {node.op!r}")
        for p, pg in zip(node.parents, rule(node, g)):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make("add", a.data + b.data, (a, b))


@vjp_rule("add")
def _add_vjp(node, g):
    a, b = node.parents
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make("sub", a.data - b.data, (a, b))


@vjp_rule("sub")
def _sub_vjp(node, g):
    a, b = node.parents
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def neg(a):
    return _make("neg", -a.data, (a,))


@vjp_rule("neg")
def _neg_vjp(node, g):
    return (-g,)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make("mul", a.data * b.data, (a, b))


@vjp_rule("mul")
def _mul_vjp(node, g):
    a, b = node.parents
    return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make("div", a.data / b.data, (a, b))


@vjp_rule("div")
def _div_vjp(node, g):
    a, b = node.parents
    ga = g / b.data
    gb = -g * a.data / (b.data * b.data)
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def exp(a):
    return _make("exp", np.exp(np.minimum(a.data, 700.0)), (a,))


@vjp_rule("exp")
def _exp_vjp(node, g):
    return (g * node.data,)


def log(a):
    return _make("log", np.log(a.data), (a,))


@vjp_rule("log")
def _log_vjp(node, g):
    return (g / node.parents[0].data,)


def sqrt(a):
    return _make("sqrt", np.sqrt(a.data), (a,))


@vjp_rule("sqrt")
def _sqrt_vjp(node, g):
    return (g * 0.5 / node.data,)


def abs_(a):
    return _make("abs", np.abs(a.data), (a,))


@vjp_rule("abs")
def _abs_vjp(node, g):
    return (g * np.sign(node.parents[0].data),)


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    return _make("sigmoid", sigmoid_np(a.data), (a,))


@vjp_rule("sigmoid")
def _sigmoid_vjp(node, g):
    s = node.data
    return (g * s * (1.0 - s),)


def leaky_relu(a, slope: float = LEAKY_SLOPE):
    x = a.data
    return _make("leaky_relu", np.where(x > 0, x, slope * x), (a,), ctx=slope)


@vjp_rule("leaky_relu")
def _leaky_vjp(node, g):
    x = node.parents[0].data
    return (g * np.where(x > 0, 1.0, node.ctx),)


def elu(a):
    x = a.data
    return _make("elu", np.where(x > 0, x, np.expm1(np.minimum(x, 0.0))), (a,))


@vjp_rule("elu")
def _elu_vjp(node, g):
    x = node.parents[0].data
    return (g * np.where(x > 0, 1.0, node.data + 1.0),)


# ---------------------------------------------------------------- shape / linalg


def matmul(a, b):
    """Matrix product; 3-d operands must share the leading batch size, ``b`` may be a vector."""
    a, b = as_tensor(a), as_tensor(b)
    return _make("matmul", np.matmul(a.data, b.data), (a, b))


@vjp_rule("matmul")
def _matmul_vjp(node, g):
    a, b = node.parents
    if b.data.ndim == 1:
        return np.multiply.outer(g, b.data), np.tensordot(a.data, g, axes=(list(range(a.data.ndim - 1)), list(range(g.ndim))))
    return np.matmul(g, np.swapaxes(b.data, -1, -2)), np.matmul(np.swapaxes(a.data, -1, -2), g)


def reshape(a, shape):
    return _make("reshape", a.data.reshape(shape), (a,))


@vjp_rule("reshape")
def _reshape_vjp(node, g):
    return (g.reshape(node.parents[0].shape),)


def transpose(a, axes):
    return _make("transpose", np.transpose(a.data, axes), (a,), ctx=axes)


@vjp_rule("transpose")
def _transpose_vjp(node, g):
    return (np.transpose(g, np.argsort(node.ctx)),)


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    return _make("concat", data, ts, ctx=(axis, sizes))


@vjp_rule("concat")
def _concat_vjp(node, g):
    axis, sizes = node.ctx
    cuts = np.cumsum(sizes)[:-1]
    return tuple(np.split(g, cuts, axis=axis))


def sum_(a, axis=None, keepdims=False):
    return _make("sum", a.data.sum(axis=axis, keepdims=keepdims), (a,), ctx=(axis, keepdims))


@vjp_rule("sum")
def _sum_vjp(node, g):
    a = node.parents[0]
    axis, keepdims = node.ctx
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


def mean(a, axis=None, keepdims=False):
    count = a.data.size if axis is None else a.shape[axis]
    return _make("mean", a.data.mean(axis=axis, keepdims=keepdims), (a,), ctx=(axis, keepdims, count))


@vjp_rule("mean")
def _mean_vjp(node, g):
    a = node.parents[0]
    axis, keepdims, count = node.ctx
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / count, a.shape).copy(),)


def _scatter_rows(g: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    flat = g.reshape(len(idx), -1)
    out = np.empty((n, flat.shape[1]))
    for c in range(flat.shape[1]):
        out[:, c] = np.bincount(idx, weights=flat[:, c], minlength=n)
    return out.reshape((n,) + g.shape[1:])


def gather(a, idx):
    """Row gather ``a[idx]`` along axis 0."""
    idx = np.asarray(idx, dtype=np.int64)
    return _make("gather", a.data[idx], (a,), ctx=idx)


@vjp_rule("gather")
def _gather_vjp(node, g):
    return (_scatter_rows(g, node.ctx, node.parents[0].shape[0]),)


def softmax_np(x: np.ndarray, axis=-1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a, axis=-1):
    return _make("softmax", softmax_np(a.data, axis), (a,), ctx=axis)


@vjp_rule("softmax")
def _softmax_vjp(node, g):
    s = node.data
    return (s * (g - (g * s).sum(axis=node.ctx, keepdims=True)),)


def cross_entropy(logits, labels, rows=None):
    """Mean negative log-likelihood over ``rows`` (all rows by default)."""
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(logits.shape[0]) if rows is None else np.asarray(rows, dtype=np.int64)
    x = logits.data[rows]
    z = x - x.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(len(rows)), labels[rows]].mean()
    return _make("cross_entropy", loss, (logits,), ctx=(rows, labels[rows], np.exp(logp)))


@vjp_rule("cross_entropy")
def _ce_vjp(node, g):
    rows, lab, p = node.ctx
    d = p.copy()
    d[np.arange(len(rows)), lab] -= 1.0
    out = np.zeros(node.parents[0].shape)
    out[rows] = d * (g / len(rows))
    return (out,)


# ---------------------------------------------------------------- segment ops


@dataclass(frozen=True)
class Segments:
    """Elements grouped into contiguous, non-empty segments (CSR layout)."""

    ids: np.ndarray
    indptr: np.ndarray
    counts: np.ndarray

    @classmethod
    def from_sorted_ids(cls, ids: np.ndarray, n: int) -> "Segments":
        ids = np.asarray(ids, dtype=np.int64)
        if len(ids) and np.any(np.diff(ids) < 0):
            raise ValueError("segment ids must be sorted")
        counts = np.bincount(ids, minlength=n)
        if np.any(counts == 0):
            empty = int(np.flatnonzero(counts == 0)[0])
            raise NumericError(f"node {empty} has no incoming arcs; cannot normalize attention")
        indptr = np.concatenate([[0], np.cumsum(counts)])
        return cls(ids, indptr, counts)

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    def expand(self, x: np.ndarray) -> np.ndarray:
        """Per-segment rows repeated onto elements (same as ``x[ids]``)."""
        return np.repeat(x, self.counts, axis=0)

    def reduce_sum(self, x: np.ndarray) -> np.ndarray:
        return np.add.reduceat(x, self.indptr[:-1], axis=0)

    def reduce_max(self, x: np.ndarray) -> np.ndarray:
        return np.maximum.reduceat(x, self.indptr[:-1], axis=0)


def segment_sum(a, seg: Segments):
    return _make("segment_sum", seg.reduce_sum(a.data), (a,), ctx=seg)


@vjp_rule("segment_sum")
def _segsum_vjp(node, g):
    return (node.ctx.expand(g),)


def segment_mean(a, seg: Segments):
    counts = seg.counts.reshape((-1,) + (1,) * (a.data.ndim - 1))
    return _make("segment_mean", seg.reduce_sum(a.data) / counts, (a,), ctx=(seg, counts))


@vjp_rule("segment_mean")
def _segmean_vjp(node, g):
    seg, counts = node.ctx
    return (seg.expand(g / counts),)


def segment_expand(a, seg: Segments):
    """Per-segment rows repeated onto elements: ``a[seg.ids]`` for sorted ids."""
    return _make("segment_expand", seg.expand(a.data), (a,), ctx=seg)


@vjp_rule("segment_expand")
def _segexpand_vjp(node, g):
    return (node.ctx.reduce_sum(g),)


def segment_softmax(a, seg: Segments):
    """Softmax of per-element logits within each segment (max-shifted)."""
    x = a.data
    shifted = x - seg.expand(seg.reduce_max(x))
    e = np.exp(shifted)
    out = e / seg.expand(seg.reduce_sum(e))
    return _make("segment_softmax", out, (a,), ctx=seg)


@vjp_rule("segment_softmax")
def _segsoftmax_vjp(node, g):
    seg = node.ctx
    s = node.data
    dot = seg.expand(seg.reduce_sum(g * s))
    return (s * (g - dot),)


SMALL_ATTEND = 4096  # below this many arc-head-feature products, skip sparse matrices


def attend(alpha, z, src: np.ndarray, seg: Segments):
    """Message passing ``out[i,h] = sum_{arcs a into i} alpha[a,h] * z[src[a],h]``.

    ``alpha`` is (E, H) over arcs sorted by destination; ``z`` is (n, H, F).
    """
    src = np.asarray(src, dtype=np.int64)
    n_src = z.shape[0]
    E, H = alpha.shape
    if E * H * z.shape[2] <= SMALL_ATTEND:
        out = seg.reduce_sum(alpha.data[:, :, None] * z.data[src])
        return _make("attend", out, (alpha, z), ctx=(src, seg, None))
    out = np.empty((seg.n, H, z.shape[2]))
    mats = []
    for h in range(H):
        A = sp.csr_matrix((alpha.data[:, h], src, seg.indptr), shape=(seg.n, n_src))
        out[:, h, :] = A @ z.data[:, h, :]
        mats.append(A)
    return _make("attend", out, (alpha, z), ctx=(src, seg, mats))


@vjp_rule("attend")
def _attend_vjp(node, g):
    alpha, z = node.parents
    src, seg, mats = node.ctx
    d_alpha = d_z = None
    g_arcs = seg.expand(g)
    if alpha.requires_grad:
        d_alpha = np.einsum("ehf,ehf->eh", g_arcs, z.data[src])
    if z.requires_grad:
        if mats is None:
            d_z = np.zeros_like(z.data)
            np.add.at(d_z, src, alpha.data[:, :, None] * g_arcs)
        else:
            d_z = np.empty_like(z.data)
            for h, A in enumerate(mats):
                d_z[:, h, :] = A.T @ g[:, h, :]
    return d_alpha, d_z
