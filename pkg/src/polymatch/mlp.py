"""Dense ReLU networks with hand-written backpropagation."""

from __future__ import annotations

from typing import Sequence

import numpy as np

BN_EPS = 1e-5


class MLP:
    """Stack of affine layers with ReLU between them.

    ``final_relu`` also rectifies the last layer. ``batch_norm`` standardises
    hidden pre-activations over the batch (no affine parameters, no running
    statistics: the network is only ever evaluated on training batches).
    Weights are stored as ``(in, out)`` matrices so that ``y = x @ W + b``
    acts on row batches.
    """

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator, final_relu: bool = False,
                 batch_norm: bool = False):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.final_relu = final_relu
        self.batch_norm = batch_norm
        self.weights = [
            rng.normal(0.0, np.sqrt(2.0 / n_in), (n_in, n_out))
            for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:])
        ]
        self.biases = [np.zeros(n_out) for n_out in self.sizes[1:]]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def _relu_at(self, k: int) -> bool:
        return k < self.n_layers - 1 or self.final_relu

    def _bn_at(self, k: int) -> bool:
        return self.batch_norm and k < self.n_layers - 1

    def forward(self, x: np.ndarray):
        """Return ``(output, cache)``; the cache feeds :meth:`backward`."""
        acts = [x]
        norms = [None] * self.n_layers
        h = x
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if self._bn_at(k):
                inv_std = 1.0 / np.sqrt(h.var(axis=0) + BN_EPS)
                h = (h - h.mean(axis=0)) * inv_std
                norms[k] = (h, inv_std)
            if self._relu_at(k):
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, (acts, norms)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, dout: np.ndarray):
        """Gradients ``(dx, dW list, db list)`` for upstream gradient ``dout``."""
        acts, norms = cache
        dws = [None] * self.n_layers
        dbs = [None] * self.n_layers
        g = dout
        for k in range(self.n_layers - 1, -1, -1):
            if self._relu_at(k):
                g = g * (acts[k + 1] > 0)
            if norms[k] is not None:
                xhat, inv_std = norms[k]
                g = inv_std * (g - g.mean(axis=0) - xhat * (g * xhat).mean(axis=0))
            dws[k] = acts[k].T @ g
            dbs[k] = g.sum(axis=0)
            g = g @ self.weights[k].T
        return g, dws, dbs

    def step(self, dws, dbs, lr: float) -> None:
        for k in range(self.n_layers):
            self.weights[k] -= lr * dws[k]
            self.biases[k] -= lr * dbs[k]

    def state(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for k in range(self.n_layers):
            out[f"{prefix}.{k}.W"] = self.weights[k]
            out[f"{prefix}.{k}.b"] = self.biases[k]
        return out

    def load(self, prefix: str, state: dict) -> None:
        for k in range(self.n_layers):
            w = np.asarray(state[f"{prefix}.{k}.W"], dtype=float)
            b = np.asarray(state[f"{prefix}.{k}.b"], dtype=float)
            if w.shape != self.weights[k].shape or b.shape != self.biases[k].shape:
                raise ValueError(f"shape mismatch loading {prefix}.{k}")
            self.weights[k] = w.copy()
            self.biases[k] = b.copy()
