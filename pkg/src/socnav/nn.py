"""Minimal dense network with explicit backpropagation (float64 numpy)."""

from __future__ import annotations

import numpy as np


class MLP:
    """tanh hidden layers, linear output layer.

    Weights are stored as ``W[k]`` of shape (fan_in, fan_out) and ``b[k]``.
    """

    def __init__(self, sizes, rng=None, weights=None, biases=None, out_scale: float = 1.0):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output size")
        if weights is not None:
            self.W = [np.array(w, dtype=float) for w in weights]
            self.b = [np.array(b, dtype=float) for b in biases]
            if len(self.W) != len(self.sizes) - 1 or len(self.b) != len(self.W):
                raise ValueError(f"expected {len(self.sizes) - 1} layers, got {len(self.W)}")
            for k, (fi, fo) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
                if self.W[k].shape != (fi, fo) or self.b[k].shape != (fo,):
                    raise ValueError(f"layer {k} has shape {self.W[k].shape}, expected {(fi, fo)}")
            return
        rng = np.random.default_rng(rng)
        self.W, self.b = [], []
        n_layers = len(self.sizes) - 1
        for k, (fi, fo) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            scale = 1.0 / np.sqrt(fi)
            if k == n_layers - 1:
                scale *= out_scale
            self.W.append(rng.normal(0.0, scale, size=(fi, fo)))
            self.b.append(np.zeros(fo))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.W, self.b):
            out += [w, b]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "MLP":
        return MLP(self.sizes, weights=[w.copy() for w in self.W], biases=[b.copy() for b in self.b])

    def zero_(self) -> None:
        for p in self.params:
            p[...] = 0.0

    def forward(self, x: np.ndarray):
        """Return ``(output, cache)``; cache holds the layer inputs for backward."""
        cache = [x]
        h = x
        last = len(self.W) - 1
        for k, (w, b) in enumerate(zip(self.W, self.b)):
            h = h @ w + b
            if k < last:
                h = np.tanh(h)
            cache.append(h)
        return h, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out: np.ndarray):
        """Gradients ``[dW0, db0, dW1, db1, ...]`` and the gradient w.r.t. the input."""
        grads = [None] * (2 * len(self.W))
        g = grad_out
        for k in range(len(self.W) - 1, -1, -1):
            if k < len(self.W) - 1:
                g = g * (1.0 - cache[k + 1] ** 2)
            grads[2 * k] = cache[k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.W[k].T
        return grads, g
