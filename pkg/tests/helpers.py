"""Shared test utilities: central finite differences against reverse mode."""

import numpy as np

from gais.numerics.tensor import Tensor, backward


def rel_error(a, b) -> float:
    a, b = np.ravel(np.asarray(a, float)), np.ravel(np.asarray(b, float))
    return float(np.linalg.norm(a - b) / max(1e-12, np.linalg.norm(a) + np.linalg.norm(b)))


def gradcheck(fn, inputs: dict[str, np.ndarray], h: float = 1e-6) -> float:
    """Relative error ``|a - n| / (|a| + |n|)`` between the analytic and the
    central-difference gradient, both flattened over every input.

    ``fn`` takes a dict of Tensors and returns a scalar Tensor.
    """
    ts = {k: Tensor(v.copy(), requires_grad=True) for k, v in inputs.items()}
    backward(fn(ts))
    ana, num = [], []
    for name, x in inputs.items():
        g = np.zeros_like(x)
        for i in np.ndindex(x.shape):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            fp = fn({**{k: Tensor(v) for k, v in inputs.items()}, name: Tensor(xp)}).data
            fm = fn({**{k: Tensor(v) for k, v in inputs.items()}, name: Tensor(xm)}).data
            g[i] = (fp - fm) / (2 * h)
        num.append(g.ravel())
        ana.append((ts[name].grad if ts[name].grad is not None else np.zeros_like(x)).ravel())
    return rel_error(np.concatenate(ana), np.concatenate(num))


def random_graph(n: int, rng, levels: int = 1, views: int = 1, p: float = 0.4, d: int = 3, classes: int = 2):
    """Random multi-level/multi-view graph carrying features and labels."""
    from gais.graph import MultiGraph

    g = MultiGraph(n, features=rng.normal(size=(n, d)), labels=rng.integers(0, classes, n))
    for v in range(views):
        for m in range(levels):
            iu, ju = np.triu_indices(n, 1)
            keep = rng.random(len(iu)) < p
            g.ensure_set(v, m)
            g.add_edges(v, m, iu[keep], ju[keep])
    return g


def model_loss(model, X, y):
    """Scalar cross-entropy of ``model`` as a function of a parameter-Tensor dict."""
    from gais.numerics import tensor as T

    return lambda tensors: T.cross_entropy(model.forward(X, tensors)[0], y)
