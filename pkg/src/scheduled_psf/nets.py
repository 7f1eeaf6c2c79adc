"""Small numpy MLPs with hand-written backprop and an RMSProp optimiser."""

from __future__ import annotations

import numpy as np


class MLP:
    """``tanh`` hidden layers and a linear output layer.

    Parameters live in ``self.params`` as ``[W0, b0, W1, b1, ...]`` with
    ``W`` of shape ``(out, in)``.  ``forward`` accepts a single vector or a
    batch ``(B, in)``.
    """

    def __init__(self, sizes, rng=None, out_scale=1.0, params=None):
        self.sizes = tuple(int(s) for s in sizes)
        if params is not None:
            self.params = [np.array(p, dtype=float) for p in params]
            return
        rng = np.random.default_rng(rng)
        self.params = []
        n_layers = len(self.sizes) - 1
        for k, (i, o) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            scale = 1.0 / np.sqrt(i)
            if k == n_layers - 1:
                scale *= out_scale
            self.params.append(rng.normal(0.0, scale, size=(o, i)))
            self.params.append(np.zeros(o))

    def copy(self):
        return MLP(self.sizes, params=[p.copy() for p in self.params])

    def forward(self, x, params=None):
        params = self.params if params is None else params
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = np.atleast_2d(x)
        acts = [h]
        n_layers = len(params) // 2
        for k in range(n_layers):
            W, b = params[2 * k], params[2 * k + 1]
            h = h @ W.T + b
            if k < n_layers - 1:
                h = np.tanh(h)
            acts.append(h)
        out = h[0] if single else h
        return out, (acts, single)

    def __call__(self, x, params=None):
        return self.forward(x, params)[0]

    def backward(self, cache, grad_out, params=None):
        """Gradients of ``sum(grad_out * output)`` w.r.t. params and input."""
        params = self.params if params is None else params
        acts, single = cache
        g = np.atleast_2d(np.asarray(grad_out, dtype=float))
        n_layers = len(params) // 2
        grads = [None] * len(params)
        for k in reversed(range(n_layers)):
            W = params[2 * k]
            grads[2 * k] = g.T @ acts[k]
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ W
            if k > 0:
                g = g * (1.0 - acts[k] ** 2)
        gx = g[0] if single else g
        return grads, gx


def flatten(arrays):
    return np.concatenate([np.ravel(a) for a in arrays])


def unflatten(vec, like):
    out, i = [], 0
    for a in like:
        k = np.size(a)
        out.append(np.reshape(vec[i : i + k], np.shape(a)).copy())
        i += k
    return out


def polyak(target, main, tau):
    """In-place ``target <- (1 - tau) target + tau main`` over parameter lists."""
    for t, m in zip(target, main):
        t *= 1.0 - tau
        t += tau * m


class RMSProp:
    """Per-parameter second-moment normalised steps, no momentum."""

    def __init__(self, lr, decay=0.99, eps=1e-8):
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.v = None

    def step(self, params, grads, sign=1.0):
        """Update ``params`` in place; ``sign=-1`` ascends instead."""
        if self.v is None:
            self.v = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self.v):
            v *= self.decay
            v += (1.0 - self.decay) * g * g
            p -= sign * self.lr * g / (np.sqrt(v) + self.eps)
